"""Reconstruction quality metrics: MSE, PSNR, SSIM, and report aggregation.

All metrics operate on unit-scale images (values in [0,1]) and are pure
functions. SSIM is the single-scale Gaussian-window formulation: 11x11
window, sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = 1, computed
per channel over fully covered windows and averaged.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError
from .model import decode, encode

__all__ = [
    "MetricsReport",
    "mse_metric",
    "psnr",
    "psnr_from_mse",
    "ssim",
    "evaluate_model",
    "render_metrics_table",
]

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass
class MetricsReport:
    """PSNR/SSIM/MSE triple plus optional ratio and timing context.

    PSNR is derived from the aggregate MSE so the two fields always satisfy
    the PSNR formula; SSIM is the mean of per-image values.
    """

    psnr: float
    ssim: float
    mse: float
    n_images: int
    compression_ratio: float | None = None
    transfer_seconds: float | None = None

    def csv_row(self):
        parts = [f"{self.psnr:.6g}", f"{self.ssim:.6g}", f"{self.mse:.6g}"]
        return ",".join(parts)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(
            f"metric operands must share a shape: {a.shape} vs {b.shape}"
        )
    return a, b


def mse_metric(a, b):
    """Mean over all pixels/channels of the squared difference."""
    a, b = _check_pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(mse, max_val=1.0):
    if mse < 0:
        raise ValueError(f"mse must be non-negative, got {mse}")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10((max_val * max_val) / mse)


def psnr(a, b, max_val=1.0):
    """Peak signal-to-noise ratio in dB; identical images give +inf."""
    return psnr_from_mse(mse_metric(a, b), max_val)


def _gaussian_kernel(size=_SSIM_WINDOW, sigma=_SSIM_SIGMA):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img, kernel):
    # separable valid-mode correlation: rows then columns
    a = sliding_window_view(img, kernel.size, axis=1) @ kernel
    return sliding_window_view(a, kernel.size, axis=0) @ kernel


def _ssim_channel(x, y, kernel, c1, c2):
    ux = _filter_valid(x, kernel)
    uy = _filter_valid(y, kernel)
    uxx = _filter_valid(x * x, kernel)
    uyy = _filter_valid(y * y, kernel)
    uxy = _filter_valid(x * y, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    cxy = uxy - ux * uy
    num = (2.0 * ux * uy + c1) * (2.0 * cxy + c2)
    den = (ux * ux + uy * uy + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range=1.0):
    """Mean local SSIM over an image pair; 1.0 means identical.

    Accepts (H,W) or (C,H,W); multichannel input scores each channel and
    averages. Images must be at least 11x11.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim expects (H,W) or (C,H,W), got {a.shape}")
    if a.shape[1] < _SSIM_WINDOW or a.shape[2] < _SSIM_WINDOW:
        raise DimensionError(
            f"ssim needs images of at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, "
            f"got {a.shape[1]}x{a.shape[2]}"
        )
    kernel = _gaussian_kernel()
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    channels = [
        _ssim_channel(a[c], b[c], kernel, c1, c2) for c in range(a.shape[0])
    ]
    return float(np.mean(channels))


def evaluate_model(params, images):
    """Encode+decode each image and aggregate quality metrics.

    ``images`` is (N,3,H,W) in [0,1]. MSE is the mean of per-image MSEs,
    PSNR follows from that mean, SSIM is the mean of per-image SSIMs.
    """
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise ConfigError("evaluate_model needs at least one image")
    recon = decode(encode(images, params), params)
    mses = []
    ssims = []
    for orig, rec in zip(images, recon):
        mses.append(mse_metric(orig, rec))
        ssims.append(ssim(orig, rec))
    mean_mse = float(np.mean(mses))
    return MetricsReport(
        psnr=psnr_from_mse(mean_mse),
        ssim=float(np.mean(ssims)),
        mse=mean_mse,
        n_images=images.shape[0],
    )


def render_metrics_table(rows, first_column="Model"):
    """Human-readable table with columns <first>, PSNR, SSIM, MSE."""
    header = (first_column, "PSNR", "SSIM", "MSE")
    body = [
        (str(label), f"{r.psnr:.4f}", f"{r.ssim:.4f}", f"{r.mse:.6f}")
        for label, r in rows
    ]
    widths = [
        max(len(header[i]), *(len(row[i]) for row in body)) if body else len(header[i])
        for i in range(4)
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * widths[i] for i in range(4)),
    ]
    for row in body:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(4)))
    return "\n".join(lines)
