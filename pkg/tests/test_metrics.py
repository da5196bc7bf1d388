"""Metric examples, properties, and frozen reference-oracle fixtures."""

import math

import numpy as np
import pytest

from aecodec import metrics
from aecodec.errors import ConfigError, DimensionError
from aecodec.model import init_params

# SSIM reference values computed offline with an independent third-party
# implementation (Gaussian window 11x11, sigma 1.5, K1=0.01, K2=0.03,
# covariance without sample correction, data range 1.0) on the checked-in
# fixtures under the distortions reproduced below.
SSIM_REF_BLUR_00 = 0.9988517071998958
SSIM_REF_NOISE_01 = 0.9443153196822331
SSIM_REF_CROSS_00_01 = 0.03676020530012933


def _box_blur(image, passes=2):
    out = image.copy()
    for _ in range(passes):
        out = (out + np.roll(out, 1, 1) + np.roll(out, -1, 1)
               + np.roll(out, 1, 2) + np.roll(out, -1, 2)) / 5
    return out


class TestMse:
    def test_identical_images_give_zero(self, fixture_images):
        assert metrics.mse_metric(fixture_images[0], fixture_images[0]) == 0.0

    def test_ones_vs_zeros_is_one(self):
        a = np.ones((3, 16, 16))
        b = np.zeros((3, 16, 16))
        assert metrics.mse_metric(a, b) == 1.0

    def test_matches_double_precision_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, (3, 24, 24)).astype(np.float32)
        b = rng.uniform(0, 1, (3, 24, 24)).astype(np.float32)
        oracle = float(np.mean(
            (a.astype(np.float64) - b.astype(np.float64)) ** 2
        ))
        assert abs(metrics.mse_metric(a, b) - oracle) < 1e-8

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, (3, 8, 8))
        b = rng.uniform(0, 1, (3, 8, 8))
        perm = rng.permutation(a.size)
        mse_direct = metrics.mse_metric(a, b)
        mse_perm = metrics.mse_metric(a.ravel()[perm], b.ravel()[perm])
        assert mse_direct == pytest.approx(mse_perm, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            metrics.mse_metric(np.zeros((3, 8, 8)), np.zeros((3, 8, 9)))


class TestPsnr:
    def test_table_row_value(self):
        # MSE 0.0002 on unit scale corresponds to 36.99 dB
        assert metrics.psnr_from_mse(0.0002) == pytest.approx(36.9897, abs=1e-3)

    def test_identical_images_give_infinity(self):
        a = np.full((3, 16, 16), 0.25)
        assert metrics.psnr(a, a) == math.inf

    def test_log_decade(self):
        assert metrics.psnr_from_mse(0.01) == pytest.approx(20.0)

    def test_strictly_decreasing_in_mse(self):
        values = [metrics.psnr_from_mse(m) for m in (1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_negative_mse_rejected(self):
        with pytest.raises(ValueError):
            metrics.psnr_from_mse(-0.1)


class TestSsim:
    def test_self_similarity_is_exactly_one(self, fixture_images):
        assert metrics.ssim(fixture_images[0], fixture_images[0]) == 1.0

    def test_symmetry(self, fixture_images):
        a, b = fixture_images[0], fixture_images[1]
        assert abs(metrics.ssim(a, b) - metrics.ssim(b, a)) < 1e-9

    def test_structure_inversion_goes_negative(self):
        rng = np.random.default_rng(2)
        a = np.where(rng.uniform(0, 1, (3, 32, 32)) > 0.5, 0.9, 0.1)
        b = 1.0 - a  # no mid-gray pixels, pure inversion
        assert metrics.ssim(a, b) < 0.0

    def test_blur_fixture_matches_reference_oracle(self, fixture_images):
        a = fixture_images[0].astype(np.float64)
        value = metrics.ssim(a, _box_blur(a))
        assert value == pytest.approx(SSIM_REF_BLUR_00, abs=1e-4)

    def test_noise_fixture_matches_reference_oracle(self, fixture_images):
        a = fixture_images[1].astype(np.float64)
        noisy = np.clip(
            a + np.random.default_rng(99).normal(0, 0.03, a.shape), 0, 1
        )
        value = metrics.ssim(a, noisy)
        assert value == pytest.approx(SSIM_REF_NOISE_01, abs=1e-4)

    def test_cross_fixture_matches_reference_oracle(self, fixture_images):
        value = metrics.ssim(
            fixture_images[0].astype(np.float64),
            fixture_images[1].astype(np.float64),
        )
        assert value == pytest.approx(SSIM_REF_CROSS_00_01, abs=1e-4)

    def test_pure_function_repeats_identically(self, fixture_images):
        a, b = fixture_images[2], fixture_images[3]
        assert metrics.ssim(a, b) == metrics.ssim(a, b)

    def test_too_small_image_rejected(self):
        with pytest.raises(DimensionError, match="11x11"):
            metrics.ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


class TestEvaluateModel:
    def test_empty_set_rejected(self):
        params = init_params(0)
        with pytest.raises(ConfigError):
            metrics.evaluate_model(params, np.zeros((0, 3, 64, 64), np.float32))

    def test_report_psnr_consistent_with_report_mse(self, fixture_images):
        params = init_params(0)
        report = metrics.evaluate_model(params, fixture_images[:3])
        assert report.psnr == pytest.approx(
            metrics.psnr_from_mse(report.mse), abs=1e-6
        )
        assert report.n_images == 3
        assert np.isfinite(report.ssim)

    def test_accepts_single_image(self, fixture_images):
        params = init_params(0)
        report = metrics.evaluate_model(params, fixture_images[0])
        assert report.n_images == 1


class TestRendering:
    def test_table_has_psnr_ssim_mse_column_order(self):
        report = metrics.MetricsReport(psnr=30.0, ssim=0.9, mse=0.001, n_images=1)
        text = metrics.render_metrics_table([("demo", report)])
        header = text.splitlines()[0]
        assert header.index("PSNR") < header.index("SSIM") < header.index("MSE")

    def test_csv_row_fields(self):
        report = metrics.MetricsReport(psnr=30.0, ssim=0.9, mse=0.001, n_images=1)
        assert report.csv_row() == "30,0.9,0.001"
