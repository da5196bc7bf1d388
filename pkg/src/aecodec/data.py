"""Image ingestion, resizing, augmentation, dataset splitting, and batching.

Images come in as 8-bit RGB (PNG/JPEG via Pillow, grayscale expanded and
alpha dropped), are resized to a square model resolution with a
Catmull-Rom (a = -0.5) bicubic resampler, and leave as float32 NCHW
tensors in [0,1].

The stated resize rule is: scale the shorter side to the target, then
center-crop — this preserves the aspect ratio of the retained content.
A "stretch" mode (ignore aspect ratio) is available behind a switch.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DimensionError
from .model import SPATIAL_FACTOR

__all__ = [
    "ImageRecord",
    "DatasetSplit",
    "Batch",
    "PreparedDataset",
    "load_directory",
    "resize_to_square",
    "resample_bicubic",
    "augment",
    "split_80_20",
    "batches",
    "prepare_dataset",
]

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass
class ImageRecord:
    """A decoded source image: 8-bit HWC RGB pixels plus provenance."""

    path: str
    pixels: np.ndarray  # (H, W, 3) uint8
    width: int
    height: int


@dataclass
class DatasetSplit:
    """Ordered train/validation partition produced by :func:`split_80_20`."""

    train: list
    validation: list
    seed: int


@dataclass
class Batch:
    """A stacked (N,3,H,W) float32 tensor in [0,1] plus source indices."""

    images: np.ndarray
    indices: np.ndarray


@dataclass
class PreparedDataset:
    """Resized image tensors ready for training/evaluation."""

    train_images: np.ndarray  # (M, 3, S, S) float32
    val_images: np.ndarray    # (K, 3, S, S) float32


def _decode_file(path):
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        pixels = np.asarray(rgb, dtype=np.uint8)
    return ImageRecord(str(path), pixels, pixels.shape[1], pixels.shape[0])


def load_directory(path, *, suffixes=None):
    """Load every readable image under a directory, in lexicographic order.

    A regular file is treated as a manifest: one image path per line,
    UTF-8, '#' comments allowed. Unreadable images are reported as warnings
    and skipped; an empty result is a :class:`ConfigError`.
    """
    root = Path(path)
    if root.is_file():
        lines = root.read_text(encoding="utf-8").splitlines()
        candidates = [
            Path(line.strip()) for line in lines
            if line.strip() and not line.strip().startswith("#")
        ]
    elif root.is_dir():
        wanted = suffixes or _IMAGE_SUFFIXES
        candidates = sorted(
            p for p in root.iterdir()
            if p.is_file() and p.suffix.lower() in wanted
        )
    else:
        raise ConfigError(f"image source {path!r} is neither a directory nor a file")

    records = []
    for p in candidates:
        try:
            records.append(_decode_file(p))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            warnings.warn(f"skipping unreadable image {p}: {exc}", stacklevel=2)
    if not records:
        raise ConfigError(f"no readable images found under {path!r}")
    return records


# ---------------------------------------------------------------------------
# bicubic resampling (Catmull-Rom, a = -0.5)
# ---------------------------------------------------------------------------

def _catmull_rom(u):
    au = np.abs(u)
    au2 = au * au
    au3 = au2 * au
    near = 1.5 * au3 - 2.5 * au2 + 1.0
    far = -0.5 * au3 + 2.5 * au2 - 4.0 * au + 2.0
    return np.where(au <= 1.0, near, np.where(au < 2.0, far, 0.0))


def _resample_axis(arr, new_len, axis):
    old_len = arr.shape[axis]
    if new_len == old_len:
        return arr
    if new_len < 1:
        raise DimensionError(f"cannot resample axis of length {old_len} to {new_len}")
    # half-pixel-center mapping; source taps at base-1 .. base+2, edge-clamped
    pos = (np.arange(new_len, dtype=np.float64) + 0.5) * (old_len / new_len) - 0.5
    base = np.floor(pos).astype(np.int64)
    t = pos - base
    out = None
    for j in range(4):
        idx = np.clip(base - 1 + j, 0, old_len - 1)
        w = _catmull_rom(t + 1.0 - j).astype(arr.dtype)
        shape = [1] * arr.ndim
        shape[axis] = new_len
        piece = np.take(arr, idx, axis=axis) * w.reshape(shape)
        out = piece if out is None else out + piece
    return out


def resample_bicubic(image, out_h, out_w):
    """Separable Catmull-Rom resize of an (H,W,C) or (H,W) float array."""
    out = _resample_axis(image, out_h, axis=0)
    return _resample_axis(out, out_w, axis=1)


def resize_to_square(record, size=256, mode="crop"):
    """Resize a record (or HWC uint8/float array) to (3,S,S) float32 in [0,1].

    crop: scale the shorter side to S, center-crop the other. stretch:
    resample both axes to S directly. S must divide by 16 (model constraint).
    """
    if size % SPATIAL_FACTOR:
        raise ConfigError(
            f"target size {size} must be divisible by {SPATIAL_FACTOR}"
        )
    if mode not in ("crop", "stretch"):
        raise ConfigError(f"unknown resize mode {mode!r}")
    pixels = record.pixels if isinstance(record, ImageRecord) else np.asarray(record)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DimensionError(f"expected HWC RGB pixels, got shape {pixels.shape}")
    img = pixels.astype(np.float32)
    if pixels.dtype == np.uint8:
        img /= 255.0

    h, w = img.shape[:2]
    if mode == "stretch":
        img = resample_bicubic(img, size, size)
    else:
        if h <= w:
            new_h, new_w = size, max(size, round(w * size / h))
        else:
            new_h, new_w = max(size, round(h * size / w)), size
        img = resample_bicubic(img, new_h, new_w)
        top = (new_h - size) // 2
        left = (new_w - size) // 2
        img = img[top:top + size, left:left + size]

    img = np.clip(img, 0.0, 1.0)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def _rotate_bilinear(img, angle_deg):
    """Rotate a (3,H,W) image about its center; black fill outside."""
    _, h, w = img.shape
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float32), np.arange(w, dtype=np.float32),
        indexing="ij",
    )
    dy, dx = yy - cy, xx - cx
    src_y = cos_t * dy - sin_t * dx + cy
    src_x = sin_t * dy + cos_t * dx + cx

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = (src_y - y0).astype(np.float32)
    fx = (src_x - x0).astype(np.float32)

    def tap(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        return img[:, yc, xc] * valid.astype(np.float32)

    out = (
        tap(y0, x0) * ((1 - fy) * (1 - fx))
        + tap(y0, x0 + 1) * ((1 - fy) * fx)
        + tap(y0 + 1, x0) * (fy * (1 - fx))
        + tap(y0 + 1, x0 + 1) * (fy * fx)
    )
    return out


def augment(images, seed):
    """Per-image random flips (p=0.5 each) and rotation in [-15, +15] degrees.

    Deterministic for a fixed seed; validation data never goes through here.
    """
    images = np.asarray(images)
    rng = np.random.default_rng(seed)
    out = np.empty_like(images)
    for i in range(images.shape[0]):
        img = images[i]
        if rng.random() < 0.5:
            img = img[:, :, ::-1]
        if rng.random() < 0.5:
            img = img[:, ::-1, :]
        angle = rng.uniform(-15.0, 15.0)
        out[i] = _rotate_bilinear(np.ascontiguousarray(img), angle)
    return out


# ---------------------------------------------------------------------------
# splitting and batching
# ---------------------------------------------------------------------------

def split_80_20(records, seed):
    """Uniform shuffle, then an 80/20 prefix/suffix partition.

    ``|train| = round(0.8 * N)``; train and validation are disjoint and
    jointly exhaustive.
    """
    records = list(records)
    n = len(records)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = round(0.8 * n)
    train = [records[i] for i in order[:n_train]]
    val = [records[i] for i in order[n_train:]]
    return DatasetSplit(train=train, validation=val, seed=seed)


def batches(images, batch_size, epoch_seed, shuffle=True):
    """Yield :class:`Batch` objects over a (N,3,H,W) array.

    Order reshuffles per epoch seed; the final short batch is emitted, not
    dropped.
    """
    images = np.asarray(images)
    n = images.shape[0]
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        order = np.random.default_rng(epoch_seed).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(images=images[idx], indices=idx)


def prepare_dataset(records, size, split_seed, mode="crop", workers=1):
    """Resize all records and split 80/20 into stacked tensors.

    ``workers > 1`` parallelizes the resizing; output order (and therefore
    every downstream batch) is identical regardless of worker count.
    """
    split = split_80_20(records, split_seed)

    def resize_all(recs):
        if not recs:
            return np.zeros((0, 3, size, size), dtype=np.float32)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                arrays = list(pool.map(
                    lambda r: resize_to_square(r, size, mode), recs
                ))
        else:
            arrays = [resize_to_square(r, size, mode) for r in recs]
        return np.stack(arrays)

    return PreparedDataset(
        train_images=resize_all(split.train),
        val_images=resize_all(split.validation),
    )
