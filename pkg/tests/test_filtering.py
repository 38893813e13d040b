"""Prediction/correction contracts against dense textbook oracles.

The dense oracle for corrections is the Joseph-form Kalman update applied to
the materialized low-rank prior; the log-likelihood oracle evaluates the
predictive Gaussian density through the materialized innovation covariance.
"""

import numpy as np
import pytest
import scipy.stats

from lrkf.filtering import (
    DiscreteDynamics,
    DlraConfig,
    Observation,
    ObservationModel,
    SqrtGaussian,
    correct,
    correct_low_rank,
    correct_wide_rank,
    filter_pass,
    predict,
)
from lrkf.linalg import LowRankFactor
from lrkf.sde import LinearOperator, LtiSdeModel, exact_process_noise


def random_stable(n, seed, margin=0.5):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    shift = max(np.linalg.eigvals(a).real.max(), 0.0) + margin
    return a - shift * np.eye(n)


def model_from_dense(a, g=None):
    drift = LinearOperator.from_matrix(a)
    diffusion = LinearOperator.from_matrix(g) if g is not None else None
    return LtiSdeModel(drift, diffusion, a.shape[0])


def joseph_update(mu, cov, c, r, y):
    """Dense textbook Kalman update with Joseph-form covariance."""
    s = c @ cov @ c.T + r
    k = cov @ c.T @ np.linalg.inv(s)
    mu_new = mu + k @ (y - c @ mu)
    ikc = np.eye(len(mu)) - k @ c
    cov_new = ikc @ cov @ ikc.T + k @ r @ k.T
    return mu_new, cov_new


def dense_loglik(y, mu, cov, c, r):
    s = c @ cov @ c.T + r
    return scipy.stats.multivariate_normal(mean=c @ mu, cov=s).logpdf(y)


def random_instance(n, m, r, seed):
    rng = np.random.default_rng(seed)
    mean = rng.standard_normal(n)
    factor = LowRankFactor(rng.standard_normal((n, r)))
    c = rng.standard_normal((m, n))
    r_diag = rng.uniform(0.5, 2.0, m)
    obs = ObservationModel.from_diagonal(LinearOperator.from_matrix(c), r_diag)
    y = rng.standard_normal(m)
    return SqrtGaussian(mean, factor), obs, c, np.diag(r_diag), y


class TestPredict:
    def test_identity_dynamics_no_noise(self):
        rng = np.random.default_rng(0)
        prior = SqrtGaussian(rng.standard_normal(7),
                             LowRankFactor(rng.standard_normal((7, 3))))
        phi = LinearOperator.identity(7)
        out, diag = predict(prior, phi, None, 3)
        assert np.allclose(out.cov(), prior.cov(), atol=1e-12 * np.linalg.norm(prior.cov()))
        assert np.allclose(out.mean, prior.mean)
        assert diag["discarded_singular_mass"] == 0.0

    def test_full_rank_matches_dense_propagation(self):
        n = 8
        rng = np.random.default_rng(1)
        a = rng.standard_normal((n, n))
        phi = LinearOperator.from_matrix(a)
        prior = SqrtGaussian(rng.standard_normal(n),
                             LowRankFactor(rng.standard_normal((n, n))))
        q_sqrt = LowRankFactor(rng.standard_normal((n, n)))
        out, _ = predict(prior, phi, q_sqrt, n)
        dense = a @ prior.cov() @ a.T + q_sqrt.outer()
        assert np.linalg.norm(out.cov() - dense) <= 1e-10 * np.linalg.norm(dense)
        assert np.allclose(out.mean, a @ prior.mean, atol=1e-12)

    def test_exact_rank_has_zero_discarded_mass(self):
        n, true_rank = 12, 5
        rng = np.random.default_rng(2)
        basis = rng.standard_normal((n, true_rank))
        phi = LinearOperator.identity(n)
        prior = SqrtGaussian(
            np.zeros(n), LowRankFactor(basis @ rng.standard_normal((true_rank, true_rank)))
        )
        q_sqrt = LowRankFactor(basis @ rng.standard_normal((true_rank, true_rank)))
        block = np.hstack([prior.cov_factor.data, q_sqrt.data])
        assert np.linalg.matrix_rank(block) == true_rank
        out, diag = predict(prior, phi, q_sqrt, true_rank)
        assert diag["discarded_singular_mass"] < 1e-12
        dense = prior.cov() + q_sqrt.outer()
        assert np.linalg.norm(out.cov() - dense) <= 1e-10 * np.linalg.norm(dense)

    def test_truncation_is_frobenius_optimal(self):
        n, r = 24, 4
        rng = np.random.default_rng(3)
        a = random_stable(n, 4)
        phi = LinearOperator.from_matrix(a)
        prior = SqrtGaussian(np.zeros(n), LowRankFactor(rng.standard_normal((n, r))))
        q_sqrt = LowRankFactor(rng.standard_normal((n, r)))
        out, _ = predict(prior, phi, q_sqrt, r)
        dense = a @ prior.cov() @ a.T + q_sqrt.outer()
        w, v = np.linalg.eigh(dense)
        order = np.argsort(w)[::-1]
        best = (v[:, order[:r]] * w[order[:r]]) @ v[:, order[:r]].T
        ours = np.linalg.norm(out.cov() - dense)
        oracle = np.linalg.norm(best - dense)
        assert ours <= oracle + 1e-9 * np.linalg.norm(dense)


class TestCorrectLowRank:
    def test_uninformative_measurement(self):
        n, m, r = 6, 5, 3
        rng = np.random.default_rng(5)
        pred = SqrtGaussian(rng.standard_normal(n),
                            LowRankFactor(rng.standard_normal((n, r))))
        r_diag = rng.uniform(0.5, 1.5, m)
        obs = ObservationModel.from_diagonal(
            LinearOperator.from_matrix(np.zeros((m, n))), r_diag
        )
        y = rng.standard_normal(m)
        post, ll, internals = correct_low_rank(pred, obs, y)
        assert np.allclose(post.mean, pred.mean, atol=1e-12)
        assert np.allclose(post.cov(), pred.cov(), atol=1e-12)
        e = y / np.sqrt(r_diag)
        expect = (
            -0.5 * m * np.log(2 * np.pi)
            - 0.5 * np.sum(np.log(r_diag))
            - 0.5 * e @ e
        )
        assert ll == pytest.approx(expect, abs=1e-10)
        assert np.allclose(internals.d, 0.0)

    def test_matches_dense_joseph_update(self):
        pred, obs, c, r_mat, y = random_instance(10, 6, 4, seed=6)
        post, _, _ = correct_low_rank(pred, obs, y)
        mu_ref, cov_ref = joseph_update(pred.mean, pred.cov(), c, r_mat, y)
        assert np.linalg.norm(post.mean - mu_ref) <= 1e-9 * max(np.linalg.norm(mu_ref), 1)
        assert np.linalg.norm(post.cov() - cov_ref) <= 1e-9 * np.linalg.norm(cov_ref)

    def test_loglik_matches_dense_evaluation(self):
        pred, obs, c, r_mat, y = random_instance(10, 6, 4, seed=7)
        _, ll, _ = correct_low_rank(pred, obs, y)
        assert ll == pytest.approx(dense_loglik(y, pred.mean, pred.cov(), c, r_mat),
                                   abs=1e-8)

    def test_no_extra_approximation(self):
        # Given the same predicted factor, the low-rank correction equals the
        # dense update of the represented covariance exactly.
        pred, obs, c, r_mat, y = random_instance(9, 9, 5, seed=8)
        post, _, _ = correct_low_rank(pred, obs, y)
        _, cov_ref = joseph_update(pred.mean, pred.cov(), c, r_mat, y)
        assert np.linalg.norm(post.cov() - cov_ref) <= 1e-9 * np.linalg.norm(cov_ref)

    def test_rejects_wide_rank(self):
        pred, obs, _, _, y = random_instance(8, 2, 5, seed=9)
        with pytest.raises(ValueError, match="correct_wide_rank"):
            correct_low_rank(pred, obs, y)


class TestCorrectWideRank:
    def test_uninformative_measurement(self):
        n, m, r = 8, 2, 5
        rng = np.random.default_rng(10)
        pred = SqrtGaussian(rng.standard_normal(n),
                            LowRankFactor(rng.standard_normal((n, r))))
        r_diag = rng.uniform(0.5, 1.5, m)
        obs = ObservationModel.from_diagonal(
            LinearOperator.from_matrix(np.zeros((m, n))), r_diag
        )
        y = rng.standard_normal(m)
        post, ll, _ = correct_wide_rank(pred, obs, y)
        assert np.allclose(post.cov(), pred.cov(), atol=1e-10)
        e = y / np.sqrt(r_diag)
        expect = (
            -0.5 * m * np.log(2 * np.pi)
            - 0.5 * np.sum(np.log(r_diag))
            - 0.5 * e @ e
        )
        assert ll == pytest.approx(expect, abs=1e-9)

    def test_matches_dense_joseph_update(self):
        pred, obs, c, r_mat, y = random_instance(8, 2, 5, seed=11)
        post, ll, _ = correct_wide_rank(pred, obs, y)
        mu_ref, cov_ref = joseph_update(pred.mean, pred.cov(), c, r_mat, y)
        assert np.linalg.norm(post.mean - mu_ref) <= 1e-9 * max(np.linalg.norm(mu_ref), 1)
        assert np.linalg.norm(post.cov() - cov_ref) <= 1e-9 * np.linalg.norm(cov_ref)
        assert ll == pytest.approx(dense_loglik(y, pred.mean, pred.cov(), c, r_mat),
                                   abs=1e-8)

    def test_branches_agree_at_boundary(self):
        # m = r admits both branches; they must agree.
        for seed in range(5):
            pred, obs, c, r_mat, y = random_instance(9, 4, 4, seed=100 + seed)
            post_a, ll_a, _ = correct_low_rank(pred, obs, y)
            # Nudge the dispatch: the wide branch requires m < r, so widen the
            # factor by a zero column to hit it with the same covariance.
            padded = SqrtGaussian(
                pred.mean, LowRankFactor(np.hstack([pred.cov_factor.data,
                                                    np.zeros((9, 1))]))
            )
            post_b, ll_b, _ = correct_wide_rank(padded, obs, y)
            assert np.linalg.norm(post_a.mean - post_b.mean) <= 1e-9
            assert np.linalg.norm(post_a.cov() - post_b.cov()) <= 1e-9
            assert ll_a == pytest.approx(ll_b, abs=1e-9)

    def test_rejects_low_rank(self):
        pred, obs, _, _, y = random_instance(8, 6, 3, seed=12)
        with pytest.raises(ValueError, match="correct_low_rank"):
            correct_wide_rank(pred, obs, y)

    def test_dispatch(self):
        pred, obs, _, _, y = random_instance(8, 6, 3, seed=13)
        _, _, internals = correct(pred, obs, y)
        assert internals.branch == "low_rank"
        pred2, obs2, _, _, y2 = random_instance(8, 2, 5, seed=14)
        _, _, internals2 = correct(pred2, obs2, y2)
        assert internals2.branch == "wide_rank"


def build_random_system(n, m, seed, with_noise=True):
    rng = np.random.default_rng(seed)
    a = random_stable(n, seed + 1)
    g = None
    if with_noise:
        b = rng.standard_normal((n, n))
        g = b @ b.T
    model = model_from_dense(a, g)
    c = rng.standard_normal((m, n))
    r_diag = rng.uniform(0.5, 2.0, m)
    obs_model = ObservationModel.from_diagonal(LinearOperator.from_matrix(c), r_diag)
    init_factor = rng.standard_normal((n, n))
    init_mean = rng.standard_normal(n)
    return model, obs_model, c, r_diag, init_mean, init_factor


def dense_kf_reference(model, obs_model_mat, r_diag, obs_seq, init_mean, init_cov, dt):
    """Plain dense Kalman recursion used as the in-test oracle."""
    import scipy.linalg as sla

    a = model.drift.to_dense()
    phi = sla.expm(a * dt)
    q = exact_process_noise(model, dt) if model.has_diffusion else np.zeros_like(phi)
    r_mat = np.diag(r_diag)
    mu, cov = init_mean.copy(), init_cov.copy()
    means, covs, total = [], [], 0.0
    for l, obs in enumerate(obs_seq):
        if l > 0:
            mu = phi @ mu
            cov = phi @ cov @ phi.T + q
        if obs.y is not None:
            total += dense_loglik(obs.y, mu, cov, obs_model_mat, r_mat)
            mu, cov = joseph_update(mu, cov, obs_model_mat, r_mat, obs.y)
        means.append(mu.copy())
        covs.append(cov.copy())
    return np.array(means), covs, total


class TestFilterPass:
    def test_empty_sequence_returns_init_only(self):
        rng = np.random.default_rng(15)
        init = SqrtGaussian(rng.standard_normal(4),
                            LowRankFactor(rng.standard_normal((4, 2))))
        model = model_from_dense(random_stable(4, 16))
        trace = filter_pass(model, [], init, 2)
        assert len(trace) == 0
        assert trace.total_loglik == 0.0
        assert trace.init is init

    def test_full_rank_matches_dense_kf(self):
        n, m, big_n = 12, 12, 20
        model, obs_model, c, r_diag, init_mean, init_factor = build_random_system(
            n, m, seed=17
        )
        dt = 0.1
        rng = np.random.default_rng(18)
        obs_seq = [
            Observation((l + 1) * dt, obs_model, rng.standard_normal(m))
            for l in range(big_n)
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor))
        trace = filter_pass(model, obs_seq, init, n, seed=19)
        means_ref, covs_ref, ll_ref = dense_kf_reference(
            model, c, r_diag, obs_seq, init_mean, init_factor @ init_factor.T, dt
        )
        for l, rec in enumerate(trace.records):
            assert np.linalg.norm(rec.corrected.mean - means_ref[l]) <= 1e-8 * max(
                np.linalg.norm(means_ref[l]), 1.0
            )
            assert np.linalg.norm(rec.corrected.cov() - covs_ref[l]) <= 1e-8 * np.linalg.norm(
                covs_ref[l]
            )
        assert trace.total_loglik == pytest.approx(ll_ref, abs=1e-7)

    def test_missing_measurements_copy_prediction(self):
        n, m = 6, 6
        model, obs_model, _, _, init_mean, init_factor = build_random_system(n, m, 20)
        rng = np.random.default_rng(21)
        obs_seq = [
            Observation(0.1, obs_model, rng.standard_normal(m)),
            Observation(0.2, obs_model, None),
            Observation(0.3, obs_model, rng.standard_normal(m)),
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor))
        trace = filter_pass(model, obs_seq, init, n, seed=22)
        rec = trace.records[1]
        assert rec.loglik_increment == 0.0
        assert rec.corrected is rec.predicted
        assert rec.diagnostics["branch"] == "none"

    def test_rejects_non_monotone_times(self):
        n = 3
        model, obs_model, _, _, init_mean, init_factor = build_random_system(n, n, 23)
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor))
        obs_seq = [
            Observation(0.2, obs_model, np.zeros(n)),
            Observation(0.1, obs_model, np.zeros(n)),
        ]
        with pytest.raises(ValueError, match="increasing"):
            filter_pass(model, obs_seq, init, n)

    def test_loglik_additivity(self):
        n, m = 5, 5
        model, obs_model, _, _, init_mean, init_factor = build_random_system(n, m, 24)
        rng = np.random.default_rng(25)
        obs_seq = [
            Observation((l + 1) * 0.2, obs_model, rng.standard_normal(m))
            for l in range(8)
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor))
        trace = filter_pass(model, obs_seq, init, n, seed=26)
        inc = sum(rec.loglik_increment for rec in trace.records)
        assert trace.total_loglik == pytest.approx(inc, rel=1e-9)

    def test_branch_dispatch_varies_with_measurement_size(self):
        n, r = 8, 4
        rng = np.random.default_rng(27)
        model, _, _, _, init_mean, init_factor = build_random_system(n, n, 28)
        small = ObservationModel.from_diagonal(
            LinearOperator.from_matrix(rng.standard_normal((2, n))), np.ones(2)
        )
        large = ObservationModel.from_diagonal(
            LinearOperator.from_matrix(rng.standard_normal((6, n))), np.ones(6)
        )
        obs_seq = [
            Observation(0.1, large, rng.standard_normal(6)),
            Observation(0.2, small, rng.standard_normal(2)),
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor[:, :r]))
        trace = filter_pass(model, obs_seq, init, r, seed=29)
        assert trace.records[0].diagnostics["branch"] == "low_rank"
        assert trace.records[1].diagnostics["branch"] == "wide_rank"

    def test_lean_mode_drops_smoother_artifacts(self):
        n = 4
        model, obs_model, _, _, init_mean, init_factor = build_random_system(n, n, 30)
        rng = np.random.default_rng(31)
        obs_seq = [
            Observation((l + 1) * 0.1, obs_model, rng.standard_normal(n))
            for l in range(3)
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor))
        trace = filter_pass(model, obs_seq, init, n, seed=32, record_mode="lean")
        full = filter_pass(model, obs_seq, init, n, seed=32)
        rec = trace.records[1]
        assert rec.predicted is None and rec.gain_core is None
        assert np.allclose(
            trace.records[-1].corrected.mean, full.records[-1].corrected.mean
        )
        assert trace.total_loglik == pytest.approx(full.total_loglik, rel=1e-12)

    def test_gain_core_shapes(self):
        n, r = 7, 3
        model, obs_model, _, _, init_mean, init_factor = build_random_system(n, n, 33)
        rng = np.random.default_rng(34)
        obs_seq = [
            Observation((l + 1) * 0.1, obs_model, rng.standard_normal(n))
            for l in range(4)
        ]
        init = SqrtGaussian(init_mean, LowRankFactor(init_factor[:, :r]))
        trace = filter_pass(model, obs_seq, init, r, seed=35)
        assert trace.records[0].gain_core is None
        for rec in trace.records[1:]:
            assert rec.gain_core.shape == (r, r)
