"""Kernel correctness: brute-force oracles and finite-difference checks.

The oracles here deliberately stay naive (explicit loops, scatter/gather
written out) so they share nothing with the vectorized implementations
they verify.
"""

import numpy as np
import pytest

from aecodec import ops
from aecodec.errors import DimensionError, StateError
from aecodec.gradcheck import grad_check
from aecodec.tensor import Tensor


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def conv2d_oracle(x, w, b, stride, padding):
    """Direct six-loop convolution."""
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wid + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (xp[ni, ci, yi * stride + ki, xi * stride + kj]
                                        * w[oi, ci, ki, kj])
                    out[ni, oi, yi, xi] = acc + (b[oi] if b is not None else 0.0)
    return out


def tconv2d_oracle(x, w, b, stride, padding, output_padding=0):
    """Scatter-accumulate transpose convolution, one element at a time."""
    n, i, h, wid = x.shape
    _, o, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (wid - 1) * stride - 2 * padding + kw + output_padding
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for ii in range(i):
            for yi in range(h):
                for xi in range(wid):
                    for oi in range(o):
                        for ki in range(kh):
                            for kj in range(kw):
                                ty = yi * stride + ki - padding
                                tx = xi * stride + kj - padding
                                if 0 <= ty < ho and 0 <= tx < wo:
                                    out[ni, oi, ty, tx] += (
                                        x[ni, ii, yi, xi] * w[ii, oi, ki, kj]
                                    )
    if b is not None:
        out += b.reshape(1, o, 1, 1)
    return out


def maxpool_oracle(x):
    """Window enumeration with explicit row-major tie-breaking."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for yi in range(h // 2):
                for xi in range(w // 2):
                    window = x[ni, ci, 2 * yi:2 * yi + 2, 2 * xi:2 * xi + 2]
                    out[ni, ci, yi, xi] = window.max()
    return out


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

class TestConv2dForward:
    def test_all_ones_kernel_pad1_sums_to_ten(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        out = ops.conv2d_forward(x, w, np.zeros(1, np.float32), stride=1, padding=1)
        oracle = conv2d_oracle(x, w, np.zeros(1), 1, 1)
        np.testing.assert_allclose(out, oracle, atol=1e-6)
        np.testing.assert_allclose(out, np.full((1, 1, 2, 2), 10.0))

    def test_zero_input_gives_zero_output(self):
        x = np.zeros((2, 3, 4, 4), dtype=np.float32)
        w = np.random.default_rng(0).normal(size=(5, 3, 3, 3)).astype(np.float32)
        out = ops.conv2d_forward(x, w, np.zeros(5, np.float32), 1, 1)
        np.testing.assert_array_equal(out, 0.0)

    def test_identity_kernel_is_identity(self):
        x = np.random.default_rng(1).normal(size=(1, 1, 5, 5)).astype(np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        out = ops.conv2d_forward(x, w, np.zeros(1, np.float32), 1, 0)
        np.testing.assert_array_equal(out, x)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            n, c, o = rng.integers(1, 3), rng.integers(1, 5), rng.integers(1, 5)
            k = rng.choice([1, 2, 3])
            stride = rng.choice([1, 2])
            padding = rng.choice([0, 1])
            h = rng.integers(k, 9)
            w = rng.integers(k, 9)
            x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
            wt = rng.uniform(-1, 1, (o, c, k, k)).astype(np.float32)
            b = rng.uniform(-1, 1, o).astype(np.float32)
            out = ops.conv2d_forward(x, wt, b, stride, padding)
            oracle = conv2d_oracle(x, wt, b, stride, padding)
            np.testing.assert_allclose(out, oracle, atol=1e-5)

    def test_channel_mismatch_names_axes(self):
        x = np.zeros((1, 2, 4, 4), dtype=np.float32)
        w = np.zeros((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(DimensionError, match="2 channels.*expects 3"):
            ops.conv2d_forward(x, w, None, 1, 1)

    def test_bad_stride_rejected(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        with pytest.raises(DimensionError):
            ops.conv2d_forward(x, w, None, stride=0)


class TestConv2dBackward:
    def test_zero_grad_out_gives_zero_gradients(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
        w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
        g = np.zeros((1, 3, 4, 4), dtype=np.float32)
        gx, gw, gb = ops.conv2d_backward(g, x, w, 1, 1)
        np.testing.assert_array_equal(gx, 0.0)
        np.testing.assert_array_equal(gw, 0.0)
        np.testing.assert_array_equal(gb, 0.0)

    def test_identity_kernel_passes_gradient_through(self):
        x = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w = np.ones((1, 1, 1, 1), dtype=np.float32)
        g = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        gx, _, _ = ops.conv2d_backward(g, x, w, 1, 0)
        np.testing.assert_array_equal(gx, g)

    def test_missing_saved_input_is_state_error(self):
        g = np.zeros((1, 1, 2, 2), dtype=np.float32)
        with pytest.raises(StateError):
            ops.conv2d_backward(g, None, np.zeros((1, 1, 1, 1), np.float32))

    def test_grad_out_shape_checked(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        with pytest.raises(DimensionError):
            ops.conv2d_backward(np.zeros((1, 1, 9, 9), np.float32), x, w, 1, 1)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 1, (1, 2, 4, 4))
        w = rng.uniform(-1, 1, (3, 2, 3, 3))
        b = rng.uniform(-1, 1, 3)
        result = grad_check(
            lambda a, ww, bb: ops.conv2d(a, ww, bb, stride=1, padding=1),
            [Tensor(x), Tensor(w), Tensor(b)], h=1e-3, tolerance=1e-3,
        )
        assert result.passed, str(result)

    def test_strided_case_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        result = grad_check(
            lambda a, ww: ops.conv2d(a, ww, stride=2, padding=1),
            [Tensor(rng.uniform(-1, 1, (2, 2, 6, 6))),
             Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))],
        )
        assert result.passed, str(result)


# ---------------------------------------------------------------------------
# conv_transpose2d
# ---------------------------------------------------------------------------

class TestConvTranspose2dForward:
    def test_single_pixel_broadcasts_kernel(self):
        x = np.array([[[[5.0]]]], dtype=np.float32)
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        out = ops.conv_transpose2d_forward(x, w, None, stride=2, padding=0)
        oracle = tconv2d_oracle(x, w, None, 2, 0)
        np.testing.assert_allclose(out, oracle)
        np.testing.assert_allclose(out, np.full((1, 1, 2, 2), 5.0))

    def test_zero_input_gives_zero_output(self):
        x = np.zeros((1, 2, 3, 3), dtype=np.float32)
        w = np.random.default_rng(5).normal(size=(2, 4, 2, 2)).astype(np.float32)
        out = ops.conv_transpose2d_forward(x, w, None, 2, 0)
        np.testing.assert_array_equal(out, 0.0)

    def test_stride1_k3_pad1_preserves_spatial_dims(self):
        x = np.random.default_rng(6).normal(size=(1, 2, 7, 5)).astype(np.float32)
        w = np.random.default_rng(7).normal(size=(2, 3, 3, 3)).astype(np.float32)
        out = ops.conv_transpose2d_forward(x, w, None, stride=1, padding=1)
        assert out.shape == (1, 3, 7, 5)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(15):
            n, i, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
            k = int(rng.choice([2, 3]))
            stride = int(rng.choice([1, 2]))
            padding = int(rng.choice([0, 1])) if k > 1 else 0
            op = int(rng.choice([0, stride - 1])) if stride > 1 else 0
            h, w = rng.integers(2, 6), rng.integers(2, 6)
            x = rng.uniform(-1, 1, (n, i, h, w)).astype(np.float32)
            wt = rng.uniform(-1, 1, (i, o, k, k)).astype(np.float32)
            b = rng.uniform(-1, 1, o).astype(np.float32)
            if (h - 1) * stride - 2 * padding + k + op <= 0:
                continue
            out = ops.conv_transpose2d_forward(x, wt, b, stride, padding, op)
            oracle = tconv2d_oracle(x, wt, b, stride, padding, op)
            np.testing.assert_allclose(out, oracle, atol=1e-5)

    def test_negative_output_extent_rejected(self):
        x = np.zeros((1, 1, 1, 1), dtype=np.float32)
        w = np.zeros((1, 1, 2, 2), dtype=np.float32)
        with pytest.raises(DimensionError, match="not positive"):
            ops.conv_transpose2d_forward(x, w, None, stride=1, padding=3)


class TestConvTranspose2dBackward:
    def test_zero_grad_out_gives_zero_gradients(self):
        x = np.ones((1, 1, 2, 2), dtype=np.float32)
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        g = np.zeros((1, 1, 4, 4), dtype=np.float32)
        gx, gw, gb = ops.conv_transpose2d_backward(g, x, w, 2, 0)
        np.testing.assert_array_equal(gx, 0.0)
        np.testing.assert_array_equal(gw, 0.0)
        np.testing.assert_array_equal(gb, 0.0)

    def test_2x2_case_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        result = grad_check(
            lambda a, ww, bb: ops.conv_transpose2d(a, ww, bb, stride=2),
            [Tensor(rng.uniform(-1, 1, (1, 1, 2, 2))),
             Tensor(rng.uniform(-1, 1, (1, 2, 2, 2))),
             Tensor(rng.uniform(-1, 1, 2))],
        )
        assert result.passed, str(result)

    def test_weight_gradient_is_gathered_input_pattern(self):
        # all-ones grad_out makes dL/dw[i,o,ki,kj] the sum of x over the
        # positions that kernel tap touches; brute-force that sum directly
        rng = np.random.default_rng(10)
        x = rng.uniform(-1, 1, (1, 2, 3, 3)).astype(np.float32)
        w = np.zeros((2, 2, 2, 2), dtype=np.float32)
        stride = 2
        ho = (3 - 1) * stride + 2
        g = np.ones((1, 2, ho, ho), dtype=np.float32)
        _, gw, _ = ops.conv_transpose2d_backward(g, x, w, stride, 0)
        expected = np.zeros_like(w)
        for ii in range(2):
            for oi in range(2):
                for ki in range(2):
                    for kj in range(2):
                        total = 0.0
                        for yi in range(3):
                            for xi in range(3):
                                total += x[0, ii, yi, xi]  # every tap lands in range
                        expected[ii, oi, ki, kj] = total
        np.testing.assert_allclose(gw, expected, rtol=1e-5)

    def test_missing_saved_input_is_state_error(self):
        with pytest.raises(StateError):
            ops.conv_transpose2d_backward(
                np.zeros((1, 1, 2, 2), np.float32), None,
                np.zeros((1, 1, 2, 2), np.float32),
            )

    def test_final_layer_geometry_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        result = grad_check(
            lambda a, ww, bb: ops.conv_transpose2d(a, ww, bb, stride=1, padding=1),
            [Tensor(rng.uniform(-1, 1, (1, 2, 4, 4))),
             Tensor(rng.uniform(-1, 1, (2, 3, 3, 3))),
             Tensor(rng.uniform(-1, 1, 3))],
        )
        assert result.passed, str(result)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------

class TestMaxPool:
    def test_single_window(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
        out, idx = ops.maxpool2d_forward(x)
        np.testing.assert_array_equal(out, [[[[4.0]]]])
        assert idx[0, 0, 0, 0] == 3  # row-major position of the 4

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(12)
        for _ in range(25):
            n, c = rng.integers(1, 3), rng.integers(1, 4)
            h, w = 2 * rng.integers(1, 6), 2 * rng.integers(1, 6)
            x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
            out, _ = ops.maxpool2d_forward(x)
            np.testing.assert_array_equal(out, maxpool_oracle(x))

    def test_constant_input_stays_constant(self):
        x = np.full((1, 2, 4, 4), 0.7, dtype=np.float32)
        out, _ = ops.maxpool2d_forward(x)
        np.testing.assert_array_equal(out, np.full((1, 2, 2, 2), 0.7, dtype=np.float32))

    def test_tie_breaks_to_first_row_major_index(self):
        x = np.zeros((1, 1, 2, 2), dtype=np.float32)
        _, idx = ops.maxpool2d_forward(x)
        assert idx[0, 0, 0, 0] == 0

    def test_odd_spatial_dim_rejected(self):
        with pytest.raises(DimensionError, match="divisible"):
            ops.maxpool2d_forward(np.zeros((1, 1, 3, 4), dtype=np.float32))

    def test_backward_routes_to_argmax(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32)
        out, idx = ops.maxpool2d_forward(x)
        gx = ops.maxpool2d_backward(np.ones_like(out), idx, x.shape)
        np.testing.assert_array_equal(gx, [[[[0.0, 0.0], [0.0, 1.0]]]])

    def test_backward_zero_grad_out(self):
        x = np.random.default_rng(13).normal(size=(1, 1, 4, 4)).astype(np.float32)
        out, idx = ops.maxpool2d_forward(x)
        gx = ops.maxpool2d_backward(np.zeros_like(out), idx, x.shape)
        np.testing.assert_array_equal(gx, 0.0)

    def test_matches_finite_differences_away_from_ties(self):
        rng = np.random.default_rng(14)
        base = rng.uniform(-1, 1, (1, 2, 4, 4))
        # distinct ramp breaks any ties so the pool is locally smooth
        base += np.arange(base.size).reshape(base.shape) * 1e-2
        result = grad_check(lambda a: ops.maxpool2d(a), [Tensor(base)], h=1e-4)
        assert result.passed, str(result)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(
            ops.relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0]
        )

    def test_all_positive_is_identity(self):
        x = np.array([0.5, 1.0, 3.0], dtype=np.float32)
        np.testing.assert_array_equal(ops.relu_forward(x), x)

    def test_gradient_zero_at_exact_zero(self):
        g = ops.relu_backward(np.ones(3), np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_matches_finite_differences_off_kink(self):
        rng = np.random.default_rng(15)
        x = rng.uniform(-1, 1, (4, 5))
        x = np.where(np.abs(x) < 1e-2, x + 0.05 * np.sign(x) + 0.05, x)
        result = grad_check(lambda a: ops.relu(a), [Tensor(x)])
        assert result.passed, str(result)


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert ops.sigmoid_forward(np.array([0.0]))[0] == 0.5

    def test_saturates_without_nan(self):
        out = ops.sigmoid_forward(np.array([100.0, -100.0]))
        assert abs(out[0] - 1.0) < 1e-7
        assert out[1] >= 0.0
        assert np.isfinite(out).all()

    def test_backward_uses_saved_output(self):
        s = ops.sigmoid_forward(np.array([0.0]))
        g = ops.sigmoid_backward(np.ones(1), s)
        np.testing.assert_allclose(g, [0.25])

    def test_matches_finite_differences_at_probe_points(self):
        x = np.array([-2.0, 0.5, 3.0])
        result = grad_check(lambda a: ops.sigmoid(a), [Tensor(x)])
        assert result.passed, str(result)


class TestMse:
    def test_equal_inputs_give_zero(self):
        x = np.random.default_rng(16).normal(size=(3, 3)).astype(np.float32)
        assert ops.mse_forward(x, x) == 0.0

    def test_hand_arithmetic(self):
        out = ops.mse_forward(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        assert out == pytest.approx(0.5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            ops.mse_forward(np.zeros(2), np.zeros(3))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        result = grad_check(
            lambda a, b: ops.mse_loss(a, b),
            [Tensor(rng.uniform(-1, 1, (2, 3, 4))),
             Tensor(rng.uniform(-1, 1, (2, 3, 4)))],
        )
        assert result.passed, str(result)


class TestShapeAlgebra:
    def test_four_stride2_upsamples_invert_sixteenfold_reduction(self):
        # decoder geometry must restore every 16-divisible input size exactly
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        for dim in range(16, 257, 16):
            reduced = dim // 16
            x = np.zeros((1, 1, reduced, reduced), dtype=np.float32)
            out = x
            for _ in range(4):
                out = ops.conv_transpose2d_forward(out, w, None, stride=2)
            assert out.shape == (1, 1, dim, dim)
