"""Differentiable kernels: convolution, pooling, activations, MSE.

Every operation comes in two layers:

* a plain-array functional pair (``*_forward`` / ``*_backward``) operating
  on numpy arrays, used directly by tests and gradient checks;
* a graph wrapper of the same base name operating on
  :class:`~aecodec.tensor.Tensor`, which records provenance for
  :func:`~aecodec.tensor.backward`.

Layout conventions: activations are NCHW; convolution weights are OIKK;
transpose-convolution weights are IOKK (input channels first). Zero padding
throughout. No broadcasting beyond the per-channel bias add.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, StateError
from .tensor import Tensor, accumulate_grad, make_node

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "conv2d",
    "conv_transpose2d_forward",
    "conv_transpose2d_backward",
    "conv_transpose2d",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "maxpool2d",
    "relu_forward",
    "relu_backward",
    "relu",
    "sigmoid_forward",
    "sigmoid_backward",
    "sigmoid",
    "mse_forward",
    "mse_backward",
    "mse_loss",
]


def _require_saved(op, **arrays):
    for name, arr in arrays.items():
        if arr is None:
            raise StateError(f"{op}: missing saved input '{name}'")


def _pad2d(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def _conv2d_geometry(x_shape, w_shape, stride, padding):
    n, c, h, w = x_shape
    o, i, kh, kw = w_shape
    if c != i:
        raise DimensionError(
            f"conv2d: input has {c} channels (axis 1) but weight expects {i}"
        )
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise DimensionError(f"conv2d: padding must be >= 0, got {padding}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} "
            f"with padding {padding}"
        )
    return n, c, h, w, o, kh, kw, ho, wo


def _conv2d_windows(x, kh, kw, stride, padding):
    xp = _pad2d(x, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return xp, win[:, :, ::stride, ::stride]


def conv2d_forward(x, weight, bias=None, stride=1, padding=0):
    """Direct 2-D convolution (cross-correlation), zero padding.

    Output spatial extent is ``floor((H + 2*pad - K)/stride) + 1``.
    """
    _, _, _, _, o, kh, kw, _, _ = _conv2d_geometry(
        x.shape, weight.shape, stride, padding
    )
    _, win = _conv2d_windows(x, kh, kw, stride, padding)
    # (N,C,Ho,Wo,KH,KW) x (O,C,KH,KW) -> (N,Ho,Wo,O)
    out = np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.moveaxis(out, 3, 1)
    if bias is not None:
        if bias.shape != (o,):
            raise DimensionError(
                f"conv2d: bias shape {bias.shape} != ({o},)"
            )
        out = out + bias.reshape(1, o, 1, 1)
    return out


def conv2d_backward(grad_out, x, weight, stride=1, padding=0,
                    need_input=True, need_weight=True, need_bias=True):
    """Gradients of conv2d w.r.t. input, weight, and bias.

    Returns ``(grad_input, grad_weight, grad_bias)``; entries for disabled
    ``need_*`` flags are None.
    """
    _require_saved("conv2d_backward", x=x, weight=weight)
    n, c, h, w, o, kh, kw, ho, wo = _conv2d_geometry(
        x.shape, weight.shape, stride, padding
    )
    if grad_out.shape != (n, o, ho, wo):
        raise DimensionError(
            f"conv2d_backward: grad_out shape {grad_out.shape} != "
            f"forward output shape {(n, o, ho, wo)}"
        )

    grad_bias = grad_out.sum(axis=(0, 2, 3)) if need_bias else None

    grad_weight = None
    if need_weight:
        _, win = _conv2d_windows(x, kh, kw, stride, padding)
        # (N,O,Ho,Wo) x (N,C,Ho,Wo,KH,KW) -> (O,C,KH,KW)
        grad_weight = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 2, 3]))

    grad_input = None
    if need_input:
        gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        # (N,O,Ho,Wo) x (O,C,KH,KW) -> (N,Ho,Wo,C,KH,KW)
        gwin = np.tensordot(grad_out, weight, axes=([1], [0]))
        hend = (ho - 1) * stride + 1
        wend = (wo - 1) * stride + 1
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki:ki + hend:stride, kj:kj + wend:stride] += (
                    np.moveaxis(gwin[..., ki, kj], 3, 1)
                )
        grad_input = gxp[:, :, padding:padding + h, padding:padding + w]
        if padding:
            grad_input = np.ascontiguousarray(grad_input)
    return grad_input, grad_weight, grad_bias


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Graph-building conv2d over Tensors."""
    b_arr = bias.data if bias is not None else None
    out = conv2d_forward(x.data, weight.data, b_arr, stride, padding)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        gx, gw, gb = conv2d_backward(
            g, x.data, weight.data, stride, padding,
            need_input=x.requires_grad,
            need_weight=weight.requires_grad,
            need_bias=bias is not None and bias.requires_grad,
        )
        if gx is not None:
            accumulate_grad(x, gx)
        if gw is not None:
            accumulate_grad(weight, gw)
        if gb is not None:
            accumulate_grad(bias, gb)

    return make_node(out, parents, _bw)


# ---------------------------------------------------------------------------
# conv_transpose2d
# ---------------------------------------------------------------------------

def _tconv_geometry(x_shape, w_shape, stride, padding, output_padding):
    n, i, h, w = x_shape
    iw, o, kh, kw = w_shape
    if i != iw:
        raise DimensionError(
            f"conv_transpose2d: input has {i} channels (axis 1) but weight "
            f"expects {iw}"
        )
    if stride < 1:
        raise DimensionError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if not 0 <= output_padding < stride:
        raise DimensionError(
            f"conv_transpose2d: output_padding must be in [0, stride), "
            f"got {output_padding} with stride {stride}"
        )
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho <= 0 or wo <= 0:
        raise DimensionError(
            f"conv_transpose2d: computed output extent {ho}x{wo} is not positive"
        )
    return n, i, h, w, o, kh, kw, ho, wo


def conv_transpose2d_forward(x, weight, bias=None, stride=1, padding=0,
                             output_padding=0):
    """Transposed convolution: scatter-accumulate of strided kernel copies.

    Output spatial extent is ``(H-1)*stride - 2*pad + K + output_padding``;
    this is the gradient-of-conv relationship with input/output roles swapped.
    """
    n, i, h, w, o, kh, kw, ho, wo = _tconv_geometry(
        x.shape, weight.shape, stride, padding, output_padding
    )
    hf = (h - 1) * stride + kh + output_padding
    wf = (w - 1) * stride + kw + output_padding
    out = np.zeros((n, o, hf, wf), dtype=x.dtype)
    hend = (h - 1) * stride + 1
    wend = (w - 1) * stride + 1
    for ki in range(kh):
        for kj in range(kw):
            # (N,I,H,W) x (I,O) -> (N,H,W,O)
            contrib = np.tensordot(x, weight[:, :, ki, kj], axes=([1], [0]))
            out[:, :, ki:ki + hend:stride, kj:kj + wend:stride] += (
                np.moveaxis(contrib, 3, 1)
            )
    out = out[:, :, padding:padding + ho, padding:padding + wo]
    if padding:
        out = np.ascontiguousarray(out)
    if bias is not None:
        if bias.shape != (o,):
            raise DimensionError(
                f"conv_transpose2d: bias shape {bias.shape} != ({o},)"
            )
        out = out + bias.reshape(1, o, 1, 1)
    return out


def _tconv_grad_windows(grad_out, x_shape, w_shape, stride, padding,
                        output_padding):
    n, i, h, w, o, kh, kw, ho, wo = _tconv_geometry(
        x_shape, w_shape, stride, padding, output_padding
    )
    if grad_out.shape != (n, o, ho, wo):
        raise DimensionError(
            f"conv_transpose2d_backward: grad_out shape {grad_out.shape} != "
            f"forward output shape {(n, o, ho, wo)}"
        )
    hf = (h - 1) * stride + kh + output_padding
    wf = (w - 1) * stride + kw + output_padding
    gfull = np.zeros((n, o, hf, wf), dtype=grad_out.dtype)
    gfull[:, :, padding:padding + ho, padding:padding + wo] = grad_out
    win = sliding_window_view(gfull, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (N,O,H,W,KH,KW)


def conv_transpose2d_backward(grad_out, x, weight, stride=1, padding=0,
                              output_padding=0, need_input=True,
                              need_weight=True, need_bias=True):
    """Gradients of conv_transpose2d w.r.t. input, weight, and bias."""
    _require_saved("conv_transpose2d_backward", x=x, weight=weight)
    win = _tconv_grad_windows(
        grad_out, x.shape, weight.shape, stride, padding, output_padding
    )
    grad_bias = grad_out.sum(axis=(0, 2, 3)) if need_bias else None
    grad_input = None
    if need_input:
        # (N,O,H,W,KH,KW) x (I,O,KH,KW) -> (N,H,W,I)
        grad_input = np.moveaxis(
            np.tensordot(win, weight, axes=([1, 4, 5], [1, 2, 3])), 3, 1
        )
    grad_weight = None
    if need_weight:
        # (N,I,H,W) x (N,O,H,W,KH,KW) -> (I,O,KH,KW)
        grad_weight = np.tensordot(x, win, axes=([0, 2, 3], [0, 2, 3]))
    return grad_input, grad_weight, grad_bias


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0,
                     output_padding=0):
    """Graph-building transposed convolution over Tensors."""
    b_arr = bias.data if bias is not None else None
    out = conv_transpose2d_forward(
        x.data, weight.data, b_arr, stride, padding, output_padding
    )
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        gx, gw, gb = conv_transpose2d_backward(
            g, x.data, weight.data, stride, padding, output_padding,
            need_input=x.requires_grad,
            need_weight=weight.requires_grad,
            need_bias=bias is not None and bias.requires_grad,
        )
        if gx is not None:
            accumulate_grad(x, gx)
        if gw is not None:
            accumulate_grad(weight, gw)
        if gb is not None:
            accumulate_grad(bias, gb)

    return make_node(out, parents, _bw)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------

def maxpool2d_forward(x, window=2, stride=2):
    """Non-overlapping max pool; returns (output, argmax indices).

    Argmax is the flat index within each window's row-major scan, so ties
    break to the first (row-major) position. Spatial dims must divide by
    the window size.
    """
    if window != stride:
        raise DimensionError(
            f"maxpool2d: only window == stride supported, got {window}/{stride}"
        )
    n, c, h, w = x.shape
    if h % window or w % window:
        raise DimensionError(
            f"maxpool2d: spatial dims {h}x{w} not divisible by window {window}"
        )
    ho, wo = h // window, w // window
    tiles = x.reshape(n, c, ho, window, wo, window)
    tiles = tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, window * window)
    idx = tiles.argmax(axis=4)
    out = np.take_along_axis(tiles, idx[..., None], axis=4)[..., 0]
    return out, idx


def maxpool2d_backward(grad_out, argmax, input_shape, window=2, stride=2):
    """Route each grad_out entry to its recorded argmax position."""
    _require_saved("maxpool2d_backward", argmax=argmax)
    if window != stride:
        raise DimensionError(
            f"maxpool2d: only window == stride supported, got {window}/{stride}"
        )
    n, c, h, w = input_shape
    ho, wo = h // window, w // window
    if grad_out.shape != (n, c, ho, wo):
        raise DimensionError(
            f"maxpool2d_backward: grad_out shape {grad_out.shape} != "
            f"{(n, c, ho, wo)}"
        )
    tiles = np.zeros((n, c, ho, wo, window * window), dtype=grad_out.dtype)
    np.put_along_axis(tiles, argmax[..., None], grad_out[..., None], axis=4)
    tiles = tiles.reshape(n, c, ho, wo, window, window)
    return tiles.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def maxpool2d(x, window=2, stride=2):
    """Graph-building max pool over Tensors (argmax kept internally)."""
    out, idx = maxpool2d_forward(x.data, window, stride)
    shape = x.data.shape

    def _bw(g):
        accumulate_grad(x, maxpool2d_backward(g, idx, shape, window, stride))

    return make_node(out, (x,), _bw)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    """Pass gradient where x > 0; zero elsewhere (including exactly 0)."""
    _require_saved("relu_backward", x=x)
    return grad_out * (x > 0)


def relu(x):
    out = relu_forward(x.data)

    def _bw(g):
        accumulate_grad(x, relu_backward(g, x.data))

    return make_node(out, (x,), _bw)


def sigmoid_forward(x):
    # split by sign to avoid overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad_out, s):
    """Backward from the saved forward output ``s``: grad * s * (1 - s)."""
    _require_saved("sigmoid_backward", s=s)
    return grad_out * s * (1.0 - s)


def sigmoid(x):
    out = sigmoid_forward(x.data)

    def _bw(g):
        accumulate_grad(x, sigmoid_backward(g, out))

    return make_node(out, (x,), _bw)


# ---------------------------------------------------------------------------
# mean squared error
# ---------------------------------------------------------------------------

def mse_forward(a, b):
    if a.shape != b.shape:
        raise DimensionError(
            f"mse: operand shapes differ: {a.shape} vs {b.shape}"
        )
    d = a - b
    return np.asarray(np.mean(d * d), dtype=a.dtype)


def mse_backward(grad_out, a, b):
    """Gradients w.r.t. both operands: +-2(a-b)/N * grad."""
    _require_saved("mse_backward", a=a, b=b)
    ga = (2.0 / a.size) * (a - b) * grad_out
    return ga, -ga


def mse_loss(a, b):
    """Scalar mean of squared elementwise differences."""
    out = mse_forward(a.data, b.data)

    def _bw(g):
        ga, gb = mse_backward(g, a.data, b.data)
        accumulate_grad(a, ga)
        accumulate_grad(b, gb)

    return make_node(out, (a, b), _bw)
