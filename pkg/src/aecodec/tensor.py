"""Dense float tensors with reverse-mode automatic differentiation.

The engine covers exactly the operations the codec architecture needs.
Data lives in numpy arrays with NCHW layout for image-like values.
float32 is the production dtype; float64 inputs are preserved end to end
so finite-difference verification can run without being dominated by
rounding noise.

Gradient buffers are allocated lazily on first accumulation and add up
across multiple uses of the same tensor (sum rule). Operation wrappers
here and in :mod:`aecodec.ops` record provenance only while gradients
are enabled and at least one input requires them; :func:`backward` then
walks the graph once in reverse topological order.
"""

from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, GraphError

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "scale",
    "weighted_sum",
    "zeros",
]

_grad_mode = [True]


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    _grad_mode.append(False)
    try:
        yield
    finally:
        _grad_mode.pop()


def grad_enabled():
    return _grad_mode[-1]


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64:
        return arr
    return arr.astype(np.float32, copy=False)


class Tensor:
    """N-dimensional float array with optional gradient and provenance."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def detach(self):
        """Same data, no provenance, no gradient requirement."""
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return (
            f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad})"
        )


def make_node(data, parents, backward_fn):
    """Wrap an op result, keeping provenance only when gradients are live."""
    t = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward_fn
    return t


def accumulate_grad(t, g):
    """Add a gradient contribution to ``t`` (sum rule across uses)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: contributions may alias upstream buffers (pass-through ops)
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(root):
    """Reverse-mode sweep from a scalar root through the provenance graph.

    Every reachable tensor with ``requires_grad`` receives its accumulated
    gradient; contributions from multiple uses sum. Raises
    :class:`GraphError` on a non-scalar root, a detached root, or a cycle.
    """
    if root.data.size != 1:
        raise GraphError(
            f"backward root must be scalar, got shape {tuple(root.shape)}"
        )
    if not root.requires_grad:
        raise GraphError("backward root is not connected to any parameter")

    # Iterative DFS: state 1 = on stack (gray), 2 = finished (black).
    topo = []
    state = {id(root): 1}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        child = next(it, None)
        if child is None:
            state[id(node)] = 2
            topo.append(node)
            stack.pop()
            continue
        s = state.get(id(child))
        if s == 1:
            raise GraphError("cycle detected in provenance graph")
        if s is None and child.requires_grad:
            state[id(child)] = 1
            stack.append((child, iter(child._parents)))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: operand shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def add(a, b):
    """Elementwise sum of two same-shape tensors."""
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def _bw(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return make_node(out, (a, b), _bw)


def sub(a, b):
    """Elementwise difference ``a - b`` of two same-shape tensors."""
    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def _bw(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)

    return make_node(out, (a, b), _bw)


def scale(a, c):
    """Multiply a tensor by a Python scalar."""
    c = float(c)
    out = a.data * np.asarray(c, dtype=a.data.dtype)

    def _bw(g):
        accumulate_grad(a, g * np.asarray(c, dtype=a.data.dtype))

    return make_node(out, (a,), _bw)


def weighted_sum(a, weights):
    """Scalar ``sum(a * weights)`` against a constant weight array."""
    w = np.asarray(weights, dtype=a.data.dtype)
    if w.shape != a.data.shape:
        raise DimensionError(
            f"weighted_sum: weights shape {w.shape} != tensor shape {a.data.shape}"
        )
    out = np.asarray((a.data * w).sum(), dtype=a.data.dtype)

    def _bw(g):
        accumulate_grad(a, g * w)

    return make_node(out, (a,), _bw)


def zeros(shape, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype))
