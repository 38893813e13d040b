"""Acceptance battery: the checks that gate a release.

Each criterion is a function returning a CriterionResult with a pass flag
and a human-readable detail string. They are driven both by the test suite
and by the CLI `verify` subcommand, which prints one line per criterion.
Expensive intermediate products (the advection grid, the random-system
battery) are cached per process so overlapping criteria share one run.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .baselines import DenseGaussian, dense_kf_pass, dense_rts_pass
from .config import ExperimentConfig
from .dlra import DlraState, bug_step, random_orthogonal
from .experiments import (
    run_matern_sweep,
    run_rank_collapse,
    run_scaling_benchmark,
    run_zscore_study,
    run_advection_scenario,
)
from .filtering import (
    DiscreteDynamics,
    Observation,
    ObservationModel,
    SqrtGaussian,
    correct_low_rank,
    correct_wide_rank,
    filter_pass,
)
from .linalg import LowRankFactor
from .metrics import metric_rmse_to_kf
from .sde import LinearOperator, LtiSdeModel
from .smoothing import sample_posterior, smooth_pass

_cache: dict = {}


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: str
    elapsed_s: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] criterion {self.number} ({self.name}): "
            f"{self.details} [{self.elapsed_s:.1f} s]"
        )


def _random_stable(n, seed, margin=0.5):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    shift = max(np.linalg.eigvals(a).real.max(), 0.0) + margin
    return a - shift * np.eye(n)


def _battery_system(index: int):
    """One seeded random stable LTI system with m = n and full observations."""
    sizes = (4, 8, 16, 32)
    n = sizes[index % len(sizes)]
    seed = 1000 + 17 * index
    rng = np.random.default_rng(seed)
    a = _random_stable(n, seed + 1)
    b = rng.standard_normal((n, n))
    model = LtiSdeModel(
        LinearOperator.from_matrix(a),
        LinearOperator.from_matrix(b @ b.T),
        n,
    )
    c = rng.standard_normal((n, n))
    r_diag = rng.uniform(0.5, 2.0, n)
    obs_model = ObservationModel.from_diagonal(LinearOperator.from_matrix(c), r_diag)
    obs_seq = [
        Observation((l + 1) * 0.1, obs_model, 2.0 * rng.standard_normal(n))
        for l in range(25)
    ]
    init_factor = rng.standard_normal((n, n))
    init_mean = rng.standard_normal(n)
    return model, obs_seq, init_mean, init_factor


def _battery_traces():
    """Filter the 25-system battery once; both directions keep full traces."""
    if "battery" in _cache:
        return _cache["battery"]
    out = []
    for i in range(25):
        model, obs_seq, init_mean, init_factor = _battery_system(i)
        n = model.n
        lr_trace = filter_pass(
            model, obs_seq, SqrtGaussian(init_mean, LowRankFactor(init_factor)),
            n, seed=i,
        )
        dense_trace = dense_kf_pass(
            DiscreteDynamics(model=model), obs_seq,
            DenseGaussian(init_mean, init_factor),
        )
        out.append((model, lr_trace, dense_trace))
    _cache["battery"] = out
    return out


def criterion_1() -> CriterionResult:
    """Full-rank runs reproduce the dense filter exactly."""
    t0 = time.perf_counter()
    worst_mean = worst_cov = worst_ll = 0.0
    passed = True
    for model, lr_trace, dense_trace in _battery_traces():
        n = model.n
        for lr_rec, d_rec in zip(lr_trace.records, dense_trace.records):
            mu_ref = d_rec.mean
            rmse = np.linalg.norm(lr_rec.corrected.mean - mu_ref) / math.sqrt(n)
            rel = rmse / max(np.linalg.norm(mu_ref), 1e-12)
            worst_mean = max(worst_mean, rel)
            cov_ref = d_rec.factor @ d_rec.factor.T
            cov_err = np.linalg.norm(lr_rec.corrected.cov() - cov_ref) / np.linalg.norm(
                cov_ref
            )
            worst_cov = max(worst_cov, cov_err)
        ll = abs(lr_trace.total_loglik - dense_trace.total_loglik)
        worst_ll = max(worst_ll, ll)
    elapsed = time.perf_counter() - t0
    passed = worst_mean < 1e-8 and worst_cov < 1e-8 and worst_ll < 1e-7 and elapsed < 30
    details = (
        f"25 systems, worst mean RMSE/|mu| {worst_mean:.2e} (<1e-8), "
        f"worst cov rel {worst_cov:.2e} (<1e-8), worst |dloglik| {worst_ll:.2e} "
        f"(<1e-7), runtime {elapsed:.1f}s (<30s)"
    )
    return CriterionResult(1, "full-rank exactness", passed, details, elapsed)


def criterion_2() -> CriterionResult:
    """Constructed rank-7 problem: recovery at the true rank, excess collapse."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(scenario="rank_collapse", methods=["rrkf", "kf"],
                           ranks=[3, 7, 11], seeds=1)
    result = run_rank_collapse(cfg)
    cov = {row.rank: row.cov_rel_frob_vs_kf for row in result.rows
           if row.method == "rrkf"}
    collapse = result.extra_files["collapse_singular_values"]
    worst_excess = 0.0
    leading = {}
    for rank, step, kind, k, sv in collapse:
        if rank != 11:
            continue
        key = (step, kind)
        if k == 0:
            leading[key] = sv
    for rank, step, kind, k, sv in collapse:
        if rank != 11 or k < 7:
            continue
        d1 = leading[(step, kind)]
        if d1 > 0:
            worst_excess = max(worst_excess, sv / d1)
    elapsed = time.perf_counter() - t0
    passed = (
        cov[7] < 1e-6
        and cov[11] < 1e-6
        and worst_excess < 1e-8
        and elapsed < 120
    )
    details = (
        f"cov rel at r=7: {cov[7]:.2e}, r=11: {cov[11]:.2e} (<1e-6); "
        f"worst excess singular ratio at r=11: {worst_excess:.2e} (<1e-8); "
        f"r=3 error {cov[3]:.2e}; runtime {elapsed:.1f}s (<120s)"
    )
    return CriterionResult(2, "true-rank recovery and collapse", passed, details,
                           elapsed)


def _advection_grid():
    if "advection" in _cache:
        return _cache["advection"]
    cfg = ExperimentConfig(
        scenario="advection",
        methods=["rrkf", "kf", "enkf", "etkf"],
        ranks=[20, 35, 51],
        seeds=20,
        metric_stride=5,
    )
    t0 = time.perf_counter()
    result = run_advection_scenario(cfg)
    _cache["advection"] = (result, time.perf_counter() - t0)
    return _cache["advection"]


def criterion_3() -> CriterionResult:
    """Advection problem of true rank 51: exact recovery at the rank."""
    result, grid_elapsed = _advection_grid()
    t0 = time.perf_counter()
    rrkf = {row.rank: row for row in result.rows if row.method == "rrkf"}
    cov51, rmse51 = rrkf[51].cov_rel_frob_vs_kf, rrkf[51].rmse_mean_vs_kf
    cov20, cov35 = rrkf[20].cov_rel_frob_vs_kf, rrkf[35].cov_rel_frob_vs_kf
    elapsed = grid_elapsed + (time.perf_counter() - t0)
    passed = (
        cov51 < 1e-5
        and rmse51 < 1e-6
        and cov20 > 1e-5
        and cov35 > 1e-5
        and cov20 > cov35 > cov51
        and grid_elapsed < 600
    )
    details = (
        f"r=51: cov {cov51:.2e} (<1e-5), mean RMSE {rmse51:.2e} (<1e-6); "
        f"decreasing errors {cov20:.2e} > {cov35:.2e} > {cov51:.2e}; "
        f"grid runtime {grid_elapsed:.1f}s (<600s)"
    )
    return CriterionResult(3, "advection rank-51 recovery", passed, details, elapsed)


def criterion_4() -> CriterionResult:
    """Deterministic truncation beats the stochastic ensembles in covariance."""
    result, grid_elapsed = _advection_grid()
    t0 = time.perf_counter()
    checks = []
    passed = True
    for rank in (20, 35, 51):
        rrkf_cov = next(
            row.cov_rel_frob_vs_kf
            for row in result.rows
            if row.method == "rrkf" and row.rank == rank
        )
        for method in ("enkf", "etkf"):
            errs = [
                row.cov_rel_frob_vs_kf
                for row in result.rows
                if row.method == method and row.rank == rank
            ]
            mean_err = float(np.mean(errs))
            ok = rrkf_cov < mean_err
            passed = passed and ok and len(errs) == 20
            checks.append(f"r={rank} {method}: {rrkf_cov:.2e} < {mean_err:.2e}")
    elapsed = time.perf_counter() - t0
    details = "; ".join(checks)
    return CriterionResult(4, "deterministic beats stochastic", passed, details,
                           elapsed)


def criterion_5() -> CriterionResult:
    """Low-rank integrator: exact-step accuracy and integrator order."""
    t0 = time.perf_counter()
    n = 6
    rng = np.random.default_rng(42)
    a = _random_stable(n, 43)
    b = rng.standard_normal((n, n))
    g = b @ b.T
    model = LtiSdeModel(
        LinearOperator.from_matrix(a), LinearOperator.from_matrix(g), n
    )
    horizon = 0.4
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = a
    blk[:n, n:] = g
    blk[n:, n:] = -a.T
    m = scipy.linalg.expm(blk * horizon)
    oracle = m[:n, n:] @ m[:n, :n].T

    u0 = random_orthogonal(n, n, 44)
    state = DlraState(u0, np.zeros((n, n)), 0.0)
    exp_state, _ = bug_step(state, model, horizon, k_step="exponential")
    exp_err = np.linalg.norm(exp_state.matrix() - oracle) / np.linalg.norm(oracle)

    errs = []
    for k in range(5):
        substeps = 2**k
        st = DlraState(u0, np.zeros((n, n)), 0.0)
        for _ in range(substeps):
            st, _ = bug_step(st, model, horizon / substeps, k_step="rk4",
                             s_step="rk4")
        errs.append(np.linalg.norm(st.matrix() - oracle))
    order = -float(np.polyfit(np.arange(5), np.log2(errs), 1)[0])
    elapsed = time.perf_counter() - t0
    passed = exp_err < 1e-6 and order >= 3.5
    details = (
        f"exponential substep error {exp_err:.2e} (<1e-6); "
        f"observed RK order {order:.2f} (>=3.5) across 4 halvings"
    )
    return CriterionResult(5, "low-rank integrator correctness", passed, details,
                           elapsed)


def criterion_6() -> CriterionResult:
    """Full-rank smoothing matches the dense smoother; samples match moments."""
    t0 = time.perf_counter()
    worst = 0.0
    for model, lr_trace, dense_trace in _battery_traces():
        smoothed = smooth_pass(lr_trace)
        dense_smoothed = dense_rts_pass(dense_trace)
        for sm, ref in zip(smoothed, dense_smoothed):
            worst = max(
                worst,
                np.linalg.norm(sm.mean - ref.mean)
                / max(np.linalg.norm(ref.mean), 1e-12),
                np.linalg.norm(sm.cov() - ref.cov()) / np.linalg.norm(ref.cov()),
            )
    moments_ok = worst < 1e-7

    # Backward sampling on a small system.
    model, obs_seq, init_mean, init_factor = _battery_system(0)
    obs_seq = obs_seq[:3]
    trace = filter_pass(
        model, obs_seq, SqrtGaussian(init_mean, LowRankFactor(init_factor)),
        model.n, seed=7,
    )
    smoothed = smooth_pass(trace)
    draws = 10_000
    paths = sample_posterior(trace, count=draws, seed=8)
    sample_ok = True
    worst_cov_rel = 0.0
    for l, sm in enumerate(smoothed):
        emp_mean = paths[:, l, :].mean(axis=0)
        std = np.sqrt(np.diag(sm.cov()))
        if np.any(np.abs(emp_mean - sm.mean) > 4.0 * std / math.sqrt(draws)):
            sample_ok = False
        centered = paths[:, l, :] - emp_mean
        emp_cov = centered.T @ centered / (draws - 1)
        rel = np.linalg.norm(emp_cov - sm.cov()) / np.linalg.norm(sm.cov())
        worst_cov_rel = max(worst_cov_rel, rel)
    sample_ok = sample_ok and worst_cov_rel < 0.1
    elapsed = time.perf_counter() - t0
    passed = moments_ok and sample_ok
    details = (
        f"worst smoothing-moment deviation {worst:.2e} (<1e-7); "
        f"sample means within 4 standard errors: {sample_ok}; "
        f"worst sample-cov rel {worst_cov_rel:.2e} (<0.1)"
    )
    return CriterionResult(6, "smoother equivalence and sampling", passed, details,
                           elapsed)


def criterion_7() -> CriterionResult:
    """Both correction branches agree at the boundary r = m."""
    t0 = time.perf_counter()
    worst_mean = worst_cov = worst_ll = 0.0
    for i in range(10):
        rng = np.random.default_rng(300 + i)
        n, r = 9, 4
        pred = SqrtGaussian(
            rng.standard_normal(n), LowRankFactor(rng.standard_normal((n, r)))
        )
        c = rng.standard_normal((r, n))
        obs = ObservationModel.from_diagonal(
            LinearOperator.from_matrix(c), rng.uniform(0.5, 2.0, r)
        )
        y = rng.standard_normal(r)
        post_a, ll_a, _ = correct_low_rank(pred, obs, y)
        padded = SqrtGaussian(
            pred.mean,
            LowRankFactor(np.hstack([pred.cov_factor.data, np.zeros((n, 1))])),
        )
        post_b, ll_b, _ = correct_wide_rank(padded, obs, y)
        worst_mean = max(worst_mean, np.linalg.norm(post_a.mean - post_b.mean))
        worst_cov = max(worst_cov, np.linalg.norm(post_a.cov() - post_b.cov()))
        worst_ll = max(worst_ll, abs(ll_a - ll_b))
    elapsed = time.perf_counter() - t0
    passed = worst_mean < 1e-9 and worst_cov < 1e-9 and worst_ll < 1e-9
    details = (
        f"10 boundary instances, worst |dmean| {worst_mean:.2e}, "
        f"|dcov| {worst_cov:.2e}, |dloglik| {worst_ll:.2e} (all <1e-9)"
    )
    return CriterionResult(7, "correction-branch consistency", passed, details,
                           elapsed)


def criterion_8() -> CriterionResult:
    """Wall-clock scaling regimes: linear best case, quadratic worst case."""
    t0 = time.perf_counter()
    best = run_scaling_benchmark(
        ExperimentConfig(scenario="runtime_best", methods=["rrkf"], ranks=[5])
    )
    worst = run_scaling_benchmark(
        ExperimentConfig(scenario="runtime_worst", methods=["rrkf"], ranks=[5])
    )
    elapsed = time.perf_counter() - t0
    passed = (
        0.8 <= best.slope <= 1.3 and 1.7 <= worst.slope <= 2.4 and elapsed < 900
    )
    details = (
        f"best-case slope {best.slope:.2f} in [0.8, 1.3] over n={best.sizes}; "
        f"worst-case slope {worst.slope:.2f} in [1.7, 2.4] over n={worst.sizes}; "
        f"runtime {elapsed:.0f}s (<900s)"
    )
    return CriterionResult(8, "wall-clock scaling", passed, details, elapsed)


def criterion_9() -> CriterionResult:
    """Lengthscale sweep: error shrinks with smoothness, beats ensembles,
    recovers the dense filter at full rank."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(
        scenario="matern_sweep",
        methods=["rrkf", "kf", "enkf", "etkf"],
        ranks=[16, 64, 160, 441],
        ensemble_ranks=[16, 64, 160],
        seeds=20,
        metric_stride=5,
    )
    result = run_matern_sweep(cfg)
    lengthscales = cfg.params["lengthscales"]
    labels = [f"matern_sweep[lx={lx}]" for lx in lengthscales]

    def rrkf_cov(label, rank):
        return next(
            row.cov_rel_frob_vs_kf
            for row in result.rows
            if row.scenario == label and row.method == "rrkf" and row.rank == rank
        )

    # (a) monotone non-increasing in the lengthscale, 5% slack.
    mono_ok = True
    for rank in (16, 64, 160):
        errs = [rrkf_cov(label, rank) for label in labels]
        for a, b in zip(errs, errs[1:]):
            if b > 1.05 * a:
                mono_ok = False

    # (b) beats the ensemble mean errors everywhere.
    beats_ok = True
    for label in labels:
        for rank in (16, 64, 160):
            ours = rrkf_cov(label, rank)
            for method in ("enkf", "etkf"):
                errs = [
                    row.cov_rel_frob_vs_kf
                    for row in result.rows
                    if row.scenario == label and row.method == method
                    and row.rank == rank
                ]
                if not errs or ours > float(np.mean(errs)):
                    beats_ok = False

    # (c) full rank recovers the dense filter.
    recover_ok = True
    worst_full = 0.0
    for label in labels:
        cov_full = rrkf_cov(label, 441)
        rmse_full = next(
            row.rmse_mean_vs_kf
            for row in result.rows
            if row.scenario == label and row.method == "rrkf" and row.rank == 441
        )
        ll_rrkf = next(
            row.total_loglik
            for row in result.rows
            if row.scenario == label and row.method == "rrkf" and row.rank == 441
        )
        ll_kf = next(
            row.total_loglik
            for row in result.rows
            if row.scenario == label and row.method == "kf"
        )
        worst_full = max(worst_full, cov_full, rmse_full)
        if cov_full >= 1e-8 or rmse_full >= 1e-8 or abs(ll_rrkf - ll_kf) >= 1e-7:
            recover_ok = False

    elapsed = time.perf_counter() - t0
    passed = mono_ok and beats_ok and recover_ok
    details = (
        f"monotone in lengthscale (5% slack): {mono_ok}; "
        f"beats ensemble means at every (lengthscale, rank): {beats_ok}; "
        f"full-rank recovery (worst dev {worst_full:.2e} < 1e-8): {recover_ok}"
    )
    return CriterionResult(9, "lengthscale sweep shape", passed, details, elapsed)


def criterion_10() -> CriterionResult:
    """Truncation produces overconfident scores at small rank."""
    t0 = time.perf_counter()
    cfg = ExperimentConfig(scenario="zscore", methods=["rrkf"], ranks=[10, 201],
                           seeds=1)
    result = run_zscore_study(cfg)
    ks = {rank: stat for rank, stat, _, _ in result.extra_files["zscore_ks"]}
    elapsed = time.perf_counter() - t0
    ratio = ks[10] / ks[201] if ks[201] > 0 else math.inf
    passed = ratio >= 2.0
    details = (
        f"KS(|z|, Chi(1)) at r=10: {ks[10]:.3f}, at r=n: {ks[201]:.3f}, "
        f"ratio {ratio:.1f} (>=2)"
    )
    return CriterionResult(10, "overconfidence at small rank", passed, details,
                           elapsed)


ALL_CRITERIA: dict = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_acceptance(numbers=None, stream=None) -> list:
    """Run the requested criteria (all by default), printing one line each."""
    stream = stream if stream is not None else sys.stdout
    numbers = sorted(numbers) if numbers else sorted(ALL_CRITERIA)
    results = []
    for number in numbers:
        result = ALL_CRITERIA[number]()
        print(result.line(), file=stream, flush=True)
        results.append(result)
    return results
