"""Encoder/decoder architecture, parameter handling, and the composite loss.

The encoder stacks four 3x3 stride-1 pad-1 convolutions with ReLU, each
followed by a 2x2 max pool, with filter counts 32 -> 64 -> 128 -> 256, and
ends in a 3x3 bottleneck convolution with 64 filters. Four pools give a
fixed 16x spatial reduction, so a (N,3,H,W) image maps to a (N,64,H/16,W/16)
latent code.

The decoder mirrors it: four 2x2 stride-2 transpose convolutions with ReLU
(256 -> 128 -> 64 -> 32 filters) restore the resolution, and a final 3x3
stride-1 pad-1 transpose convolution with 3 filters and a sigmoid produces
the reconstruction in (0,1).

During training the model additionally emits the residual image
``r = x - d``; the composite loss is ``mse(d, x) + mse(r, 0)``. At
inference the residual wrapper is gone: ``encode``/``decode`` never
produce ``r``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MissingParameterError
from .ops import conv2d, conv_transpose2d, maxpool2d, mse_loss, relu, sigmoid
from .tensor import Tensor, add, no_grad, scale, sub, zeros

__all__ = [
    "SPATIAL_FACTOR",
    "LATENT_CHANNELS",
    "IMAGE_CHANNELS",
    "ModelParams",
    "LatentCode",
    "TrainForwardOutput",
    "init_params",
    "encode",
    "decode",
    "forward_train",
    "total_loss",
    "split_params",
    "merge_params",
]

SPATIAL_FACTOR = 16
LATENT_CHANNELS = 64
IMAGE_CHANNELS = 3

# name, in_channels, out_channels, kernel, stride, padding
_ENCODER_CONVS = (
    ("enc1", 3, 32, 3, 1, 1),
    ("enc2", 32, 64, 3, 1, 1),
    ("enc3", 64, 128, 3, 1, 1),
    ("enc4", 128, 256, 3, 1, 1),
)
_BOTTLENECK = ("enc5", 256, 64, 3, 1, 1)
_DECODER_UPS = (
    ("dec1", 64, 256, 2, 2, 0),
    ("dec2", 256, 128, 2, 2, 0),
    ("dec3", 128, 64, 2, 2, 0),
    ("dec4", 64, 32, 2, 2, 0),
)
_OUTPUT_LAYER = ("dec5", 32, 3, 3, 1, 1)

LAYER_TABLE = _ENCODER_CONVS + (_BOTTLENECK,) + _DECODER_UPS + (_OUTPUT_LAYER,)


class ModelParams:
    """Ordered named parameter tensors; encoder entries precede decoder ones."""

    def __init__(self, tensors):
        self._tensors = dict(tensors)

    def __contains__(self, name):
        return name in self._tensors

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingParameterError(
                f"parameter '{name}' is not present in this parameter set"
            ) from None

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def zero_grads(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self):
        return {name: t.grad for name, t in self._tensors.items()}

    def subset(self, prefix):
        return ModelParams(
            {n: t for n, t in self._tensors.items() if n.startswith(prefix)}
        )

    def copy(self):
        """Deep copy of the parameter arrays (gradients are not copied)."""
        return ModelParams(
            {n: Tensor(t.data.copy(), requires_grad=t.requires_grad)
             for n, t in self._tensors.items()}
        )

    def all_finite(self):
        return all(np.isfinite(t.data).all() for t in self._tensors.values())

    def __repr__(self):
        return f"ModelParams({len(self._tensors)} tensors)"


@dataclass
class LatentCode:
    """Encoder output plus the metadata serialization needs."""

    values: np.ndarray  # (N, 64, H/16, W/16) float32

    @property
    def channels(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[2]

    @property
    def width(self):
        return self.values.shape[3]


@dataclass
class TrainForwardOutput:
    """Reconstruction ``d`` and residual ``r = x - d`` from one forward pass."""

    d: Tensor
    r: Tensor


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _xavier_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def init_params(seed):
    """Deterministic parameter init.

    He-uniform (fan-in) everywhere except the final sigmoid layer, which is
    Xavier-uniform; biases start at zero. Convolution weights are OIKK,
    transpose-convolution weights IOKK.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cin, cout, k, _stride, _pad in LAYER_TABLE:
        transposed = name.startswith("dec")
        shape = (cin, cout, k, k) if transposed else (cout, cin, k, k)
        fan_in = cin * k * k
        if name == _OUTPUT_LAYER[0]:
            w = _xavier_uniform(rng, shape, fan_in, cout * k * k)
        else:
            w = _he_uniform(rng, shape, fan_in)
        tensors[f"{name}.weight"] = Tensor(w, requires_grad=True)
        tensors[f"{name}.bias"] = Tensor(
            np.zeros(cout, dtype=np.float32), requires_grad=True
        )
    return ModelParams(tensors)


def _layer_params(params, name):
    return params[f"{name}.weight"], params[f"{name}.bias"]


def _encoder_forward(x, params):
    t = x
    for name, _cin, _cout, _k, stride, pad in _ENCODER_CONVS:
        w, b = _layer_params(params, name)
        t = relu(conv2d(t, w, b, stride=stride, padding=pad))
        t = maxpool2d(t)
    name, _cin, _cout, _k, stride, pad = _BOTTLENECK
    w, b = _layer_params(params, name)
    return conv2d(t, w, b, stride=stride, padding=pad)


def _decoder_forward(e, params):
    t = e
    for name, _cin, _cout, _k, stride, pad in _DECODER_UPS:
        w, b = _layer_params(params, name)
        t = relu(conv_transpose2d(t, w, b, stride=stride, padding=pad))
    name, _cin, _cout, _k, stride, pad = _OUTPUT_LAYER
    w, b = _layer_params(params, name)
    return sigmoid(conv_transpose2d(t, w, b, stride=stride, padding=pad))


def _validate_image_batch(x):
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1] != IMAGE_CHANNELS:
        raise DimensionError(
            f"expected image batch (N,{IMAGE_CHANNELS},H,W), got {x.shape}"
        )
    h, w = x.shape[2], x.shape[3]
    if h % SPATIAL_FACTOR or w % SPATIAL_FACTOR:
        raise DimensionError(
            f"image dims {h}x{w} must be divisible by {SPATIAL_FACTOR}"
        )
    return x


def encode(x, params):
    """Compress an image batch to its latent code.

    ``x`` is (N,3,H,W) or (3,H,W) with values in [0,1] and H, W divisible
    by 16; the result holds a (N,64,H/16,W/16) float32 array.
    """
    x = _validate_image_batch(np.asarray(x, dtype=np.float32))
    lo, hi = float(x.min(initial=0.0)), float(x.max(initial=0.0))
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ValueError(
            f"encode expects pixel values in [0,1], got range [{lo:g}, {hi:g}]"
        )
    with no_grad():
        e = _encoder_forward(Tensor(x), params)
    return LatentCode(e.data)


def decode(latent, params):
    """Reconstruct an image batch from a latent code; output lies in (0,1)."""
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    if values.ndim == 3:
        values = values[None]
    if values.ndim != 4 or values.shape[1] != LATENT_CHANNELS:
        raise DimensionError(
            f"expected latent batch (N,{LATENT_CHANNELS},h,w), got {values.shape}"
        )
    with no_grad():
        d = _decoder_forward(Tensor(np.asarray(values, dtype=np.float32)), params)
    return d.data


def forward_train(x, params):
    """Training-time forward pass: reconstruction plus residual.

    ``r + d == x`` holds exactly by construction; both outputs stay in the
    provenance graph.
    """
    e = _encoder_forward(x, params)
    d = _decoder_forward(e, params)
    r = sub(x, d)
    return TrainForwardOutput(d=d, r=r)


def total_loss(x, out, residual_weight=1.0):
    """Composite loss ``(L, L_r, L_i)``.

    ``L_r = mse(d, x)``; ``L_i = mse(r, 0)``; ``L = L_r + residual_weight *
    L_i``. All three are returned for logging. Because ``r = x - d``, the
    two terms coincide numerically and ``L == 2 * L_r`` at the default
    weight; ``residual_weight`` exists so the ablation harness can explore
    both regimes.
    """
    l_r = mse_loss(out.d, x)
    l_i = mse_loss(out.r, zeros(out.r.shape, dtype=out.r.dtype))
    if residual_weight == 1.0:
        total = add(l_r, l_i)
    else:
        total = add(l_r, scale(l_i, residual_weight))
    return total, l_r, l_i


def split_params(params):
    """Partition into (encoder-only, decoder-only) parameter sets."""
    for name in params.names():
        if not (name.startswith("enc") or name.startswith("dec")):
            raise MissingParameterError(
                f"cannot split: '{name}' is neither an encoder nor a decoder entry"
            )
    return params.subset("enc"), params.subset("dec")


def merge_params(encoder_params, decoder_params):
    """Recombine split parameter sets; encoder entries keep first position."""
    merged = {}
    merged.update(dict(encoder_params.items()))
    merged.update(dict(decoder_params.items()))
    return ModelParams(merged)
