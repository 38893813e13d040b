"""Error-metric contracts, checked against independent in-test recomputation."""

import numpy as np
import pytest
import scipy.stats

from lrkf.metrics import metric_cov_frobenius, metric_rmse_to_kf, metric_zscores


class TestRmse:
    def test_identical_inputs(self):
        a = np.arange(12.0).reshape(3, 4)
        assert metric_rmse_to_kf(a, a) == 0.0

    def test_constant_offset(self):
        a = np.zeros((5, 7))
        assert metric_rmse_to_kf(a + 1.3, a) == pytest.approx(1.3, abs=1e-15)

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((6, 9)), rng.standard_normal((6, 9))
        ours = metric_rmse_to_kf(a, b)
        ref = np.sqrt(sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel()))
                      / a.size)
        assert ours == pytest.approx(ref, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            metric_rmse_to_kf(np.zeros((2, 3)), np.zeros((3, 2)))


class TestCovFrobenius:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal((6, 3))
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert metric_cov_frobenius({0: f @ q}, {0: f}) <= 1e-14

    def test_double_covariance_gives_one(self):
        rng = np.random.default_rng(2)
        f = rng.standard_normal((5, 4))
        doubled = np.sqrt(2.0) * f  # represents 2 * F F^T
        assert metric_cov_frobenius({0: doubled, 3: doubled}, {0: f, 3: f}) == (
            pytest.approx(1.0, abs=1e-12)
        )

    def test_matches_dense_recomputation(self):
        rng = np.random.default_rng(3)
        vals = []
        approx, ref = {}, {}
        for l in range(4):
            a = rng.standard_normal((7, 3))
            b = rng.standard_normal((7, 5))
            approx[l], ref[l] = a, b
            num = np.linalg.norm(a @ a.T - b @ b.T)
            vals.append(num / np.linalg.norm(b @ b.T))
        assert metric_cov_frobenius(approx, ref) == pytest.approx(
            np.mean(vals), abs=1e-12
        )

    def test_zero_reference_excluded_with_warning(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal((4, 2))
        with pytest.warns(UserWarning, match="excluded"):
            out = metric_cov_frobenius(
                {0: f, 1: f}, {0: f, 1: np.zeros((4, 2))}
            )
        assert out <= 1e-14

    def test_disjoint_steps_rejected(self):
        with pytest.raises(ValueError, match="common"):
            metric_cov_frobenius({0: np.zeros((2, 1))}, {1: np.zeros((2, 1))})


class TestZscores:
    def test_zero_residuals(self):
        means = np.array([1.0, 2.0, 3.0])
        res = metric_zscores(means, np.ones(3), means)
        assert np.allclose(res.scores, 0.0)
        assert res.excluded == 0

    def test_unit_scale_passthrough(self):
        res = metric_zscores(np.array([1.0, -2.0]), np.ones(2), np.zeros(2))
        assert np.allclose(res.scores, [1.0, -2.0])

    def test_factor_row_norms_as_scale(self):
        rng = np.random.default_rng(5)
        factor = rng.standard_normal((6, 3))
        means = rng.standard_normal(6)
        ref = rng.standard_normal(6)
        res = metric_zscores(means, None, ref, factor=factor)
        lam = np.sqrt(np.diag(factor @ factor.T))
        assert np.allclose(res.scores, (means - ref) / lam)

    def test_vanishing_scale_excluded_and_counted(self):
        scale = np.array([1.0, 0.0, 1.0])
        res = metric_zscores(np.ones(3), scale, np.zeros(3))
        assert res.excluded == 1
        assert res.scores.shape == (2,)

    def test_ks_small_under_the_null(self):
        rng = np.random.default_rng(6)
        z = rng.standard_normal(100_000)
        res = metric_zscores(z, np.ones_like(z), np.zeros_like(z))
        assert res.ks_statistic < 0.01

    def test_ks_large_under_overconfidence(self):
        rng = np.random.default_rng(7)
        z = 3.0 * rng.standard_normal(10_000)  # understated stds
        res = metric_zscores(z, np.ones_like(z), np.zeros_like(z))
        assert res.ks_statistic > 0.3

    def test_histogram_totals(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal(500)
        res = metric_zscores(z, np.ones_like(z), np.zeros_like(z))
        assert res.hist_counts.sum() == 500
