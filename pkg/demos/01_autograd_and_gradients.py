"""Walk through the tensor engine: build a small graph, differentiate it,
and verify the analytic gradients against central finite differences.

Run from the repository root:  python demos/01_autograd_and_gradients.py
"""

import numpy as np

from aecodec import ops
from aecodec.gradcheck import grad_check
from aecodec.tensor import Tensor, backward, zeros

rng = np.random.default_rng(0)

print("=== a tiny differentiable pipeline ===")
x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32), requires_grad=True)
w = Tensor(rng.uniform(-0.3, 0.3, (4, 3, 3, 3)).astype(np.float32), requires_grad=True)
b = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)

hidden = ops.relu(ops.conv2d(x, w, b, stride=1, padding=1))
pooled = ops.maxpool2d(hidden)
loss = ops.mse_loss(pooled, zeros(pooled.shape))
print(f"conv -> relu -> pool: {x.shape} -> {hidden.shape} -> {pooled.shape}")
print(f"loss (mse vs zeros) = {loss.item():.6f}")

backward(loss)
print(f"grad shapes: x {x.grad.shape}, w {w.grad.shape}, b {b.grad.shape}")
print(f"|grad w| mean = {np.abs(w.grad).mean():.2e}")

print()
print("=== finite-difference verification ===")
for name, fn, inputs in [
    ("conv2d", lambda a, ww: ops.conv2d(a, ww, stride=1, padding=1),
     [Tensor(rng.uniform(-1, 1, (1, 2, 5, 5))),
      Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))]),
    ("conv_transpose2d", lambda a, ww: ops.conv_transpose2d(a, ww, stride=2),
     [Tensor(rng.uniform(-1, 1, (1, 2, 3, 3))),
      Tensor(rng.uniform(-1, 1, (2, 3, 2, 2)))]),
    ("sigmoid", lambda a: ops.sigmoid(a), [Tensor(rng.uniform(-2, 2, (4, 4)))]),
]:
    result = grad_check(fn, inputs)
    print(f"{name:18s} {result}")
