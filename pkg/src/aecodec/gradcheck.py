"""Finite-difference verification of analytic gradients.

Checks run in float64: with float32 arithmetic a central difference at
h=1e-3 is dominated by rounding noise, which would make the comparison
meaningless rather than strict. Non-scalar outputs are reduced to a scalar
through a fixed random weighting so every output element influences the
check.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, no_grad, weighted_sum

__all__ = ["GradCheckResult", "numerical_gradient", "grad_check"]


@dataclass
class GradCheckResult:
    """Maximum relative error per checked input, against a tolerance."""

    max_rel_errors: tuple
    tolerance: float

    @property
    def worst(self):
        return max(self.max_rel_errors) if self.max_rel_errors else 0.0

    @property
    def passed(self):
        return self.worst < self.tolerance

    def __str__(self):
        errs = ", ".join(f"{e:.3e}" for e in self.max_rel_errors)
        verdict = "ok" if self.passed else "FAIL"
        return f"grad_check {verdict}: max rel errors [{errs}] vs tol {self.tolerance:g}"


def numerical_gradient(f, arr, h=1e-3):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr``.

    ``arr`` is perturbed in place and restored; ``f`` must read it afresh on
    each call.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _relative_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(fn, inputs, h=1e-3, tolerance=1e-3, seed=0):
    """Compare analytic gradients of ``fn(*inputs)`` against central differences.

    ``fn`` maps Tensors to a Tensor; ``inputs`` are promoted to float64 and
    marked as requiring gradients. Returns a :class:`GradCheckResult` with
    the max relative error per input.
    """
    tensors = []
    for t in inputs:
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
        tensors.append(Tensor(arr.copy(), requires_grad=True, dtype=np.float64))

    probe = fn(*tensors)
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=probe.shape).astype(np.float64)

    loss = weighted_sum(probe, weights)
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    def scalar_eval():
        with no_grad():
            out = fn(*tensors)
        return float((out.data * weights).sum())

    errors = []
    for t, a in zip(tensors, analytic):
        numeric = numerical_gradient(scalar_eval, t.data, h=h)
        errors.append(_relative_error(a, numeric))
    return GradCheckResult(tuple(errors), tolerance)
