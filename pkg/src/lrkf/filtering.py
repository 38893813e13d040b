"""Low-rank square-root prediction/correction recursion with log-likelihood.

The filter propagates Gaussians N(mu, L L^T) with tall n-by-r covariance
factors L. Prediction compresses the stacked factor [Phi Sigma^{1/2},
Q^{1/2}] by truncated SVD; correction rotates the column space of the
predicted factor and never increases the approximation error. Two correction
branches cover r <= m and the thin-measurement case m < r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .dlra import process_noise_factor
from .linalg import LowRankFactor, truncated_svd, tall_pinv_apply
from .sde import LinearOperator, LtiSdeModel, exact_process_noise

LOG_2PI = math.log(2.0 * math.pi)
# Clamped-eigenvalue mass above this fraction of trace(D) raises a diagnostic.
CLAMP_WARN_FRACTION = 1e-6


@dataclass(frozen=True)
class SqrtGaussian:
    """Gaussian with mean vector and covariance carried as a tall factor."""

    mean: np.ndarray
    cov_factor: LowRankFactor

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.ndim != 1 or mean.shape[0] != self.cov_factor.n:
            raise ValueError(
                f"mean shape {mean.shape} incompatible with factor "
                f"{self.cov_factor.data.shape}"
            )
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean contains non-finite entries")
        object.__setattr__(self, "mean", mean)

    @staticmethod
    def _wrap(mean: np.ndarray, cov_factor: LowRankFactor) -> "SqrtGaussian":
        """Internal fast path mirroring LowRankFactor._wrap."""
        out = object.__new__(SqrtGaussian)
        object.__setattr__(out, "mean", mean)
        object.__setattr__(out, "cov_factor", cov_factor)
        return out

    @property
    def n(self) -> int:
        return self.cov_factor.n

    @property
    def rank(self) -> int:
        return self.cov_factor.r

    def cov(self) -> np.ndarray:
        return self.cov_factor.outer()


class ObservationModel:
    """Linear observation y = C x + noise with noise covariance R.

    R enters only through the actions of R^{1/2} and R^{-1/2} and the
    log-determinant of R^{1/2}, so diagonal noise stays O(m).
    """

    def __init__(
        self,
        c: LinearOperator,
        r_sqrt_apply: Callable[[np.ndarray], np.ndarray],
        r_sqrt_inv_apply: Callable[[np.ndarray], np.ndarray],
        log_det_r_sqrt: float,
        m: int,
    ):
        self.c = c
        self.r_sqrt_apply = r_sqrt_apply
        self.r_sqrt_inv_apply = r_sqrt_inv_apply
        self.log_det_r_sqrt = float(log_det_r_sqrt)
        self.m = m

    def r_sqrt_matrix(self) -> np.ndarray:
        return self.r_sqrt_apply(np.eye(self.m))

    @staticmethod
    def from_diagonal(c: LinearOperator, r_diag: np.ndarray) -> "ObservationModel":
        r_diag = np.asarray(r_diag, dtype=float)
        if np.any(r_diag <= 0):
            raise ValueError("diagonal noise variances must be positive")
        s = np.sqrt(r_diag)

        def times(x):
            x = np.asarray(x, dtype=float)
            return x * s if x.ndim == 1 else x * s[:, None]

        def times_inv(x):
            x = np.asarray(x, dtype=float)
            return x / s if x.ndim == 1 else x / s[:, None]

        return ObservationModel(c, times, times_inv, 0.5 * np.sum(np.log(r_diag)),
                                r_diag.shape[0])

    @staticmethod
    def from_dense(c_matrix: np.ndarray, r_dense: np.ndarray) -> "ObservationModel":
        c_matrix = np.asarray(c_matrix, dtype=float)
        chol = np.linalg.cholesky(np.asarray(r_dense, dtype=float))

        def times(x):
            return chol @ np.asarray(x, dtype=float)

        def times_inv(x):
            return scipy.linalg.solve_triangular(chol, np.asarray(x, dtype=float),
                                                 lower=True)

        return ObservationModel(
            LinearOperator.from_matrix(c_matrix),
            times,
            times_inv,
            float(np.sum(np.log(np.diag(chol)))),
            c_matrix.shape[0],
        )


class Observation(NamedTuple):
    """One entry of the measurement sequence; y is None for a missing step."""

    time: float
    model: ObservationModel
    y: Optional[np.ndarray]


@dataclass
class FilterStepRecord:
    """Per-step artifacts: moments, backward-gain core, noise factor.

    `gain_core` is the small square core of the backward gain linking this
    step's predicted covariance to the previous step's corrected one; it is
    computed during filtering and consumed by the smoother.
    """

    time: float
    predicted: SqrtGaussian
    corrected: SqrtGaussian
    gain_core: Optional[np.ndarray]
    q_factor: Optional[LowRankFactor]
    phi_ref: Optional[LinearOperator]
    loglik_increment: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class FilterTrace:
    """Ordered per-step records plus the accumulated log-likelihood."""

    records: list
    times: np.ndarray
    total_loglik: float
    init: SqrtGaussian

    def __len__(self) -> int:
        return len(self.records)

    def means(self) -> np.ndarray:
        return np.array([rec.corrected.mean for rec in self.records])


class UpdateInternals(NamedTuple):
    """Correction-step decomposition exposed for tests."""

    u: np.ndarray
    d: np.ndarray
    v: Optional[np.ndarray]
    residual: np.ndarray
    branch: str
    clamped_mass: float = 0.0


def predict(
    prior: SqrtGaussian,
    phi: LinearOperator,
    q_sqrt: Optional[LowRankFactor],
    rank: int,
    phi_cov_factor: Optional[np.ndarray] = None,
    phi_mean: Optional[np.ndarray] = None,
) -> tuple[SqrtGaussian, dict]:
    """Low-rank predicted moments.

    Stacks [Phi Sigma^{1/2}, Q^{1/2}] and truncates its SVD at `rank`. The
    returned diagnostics report the discarded squared singular mass relative
    to the total. `phi_cov_factor`/`phi_mean` let callers that already
    applied the transition avoid a second pass.
    """
    if phi_cov_factor is None:
        phi_cov_factor = phi.apply_mat(prior.cov_factor.data)
    mean_pred = phi.apply(prior.mean) if phi_mean is None else phi_mean

    if q_sqrt is None or q_sqrt.data.shape[1] == 0:
        block = phi_cov_factor
    else:
        block = np.hstack([phi_cov_factor, q_sqrt.data])

    if block.shape[1] <= rank:
        # Nothing to discard; pad absent columns with zeros if necessary.
        if block.shape[1] < rank:
            block = np.hstack(
                [block, np.zeros((block.shape[0], rank - block.shape[1]))]
            )
        u, d, _ = scipy.linalg.svd(block, full_matrices=False, check_finite=False)
        factor = u * d
        discarded = 0.0
    else:
        triple = truncated_svd(block, rank)
        factor = triple.u * triple.d
        total = float(np.sum(block * block))
        kept = float(np.sum(triple.d**2))
        discarded = max(total - kept, 0.0) / total if total > 0 else 0.0

    predicted = SqrtGaussian._wrap(mean_pred, LowRankFactor._wrap(factor))
    return predicted, {"discarded_singular_mass": discarded}


def correct_low_rank(
    pred: SqrtGaussian, obs: ObservationModel, y: np.ndarray
) -> tuple[SqrtGaussian, float, UpdateInternals]:
    """Correction for r <= m: rotate the predicted factor's column space.

    Works on the SVD of the whitened projected factor (R^{-1/2} C Pi^{1/2})^T
    = U D V^T; the gain is applied right-to-left so no m-by-n matrix is ever
    formed, and the posterior factor is Pi^{1/2} U (I + D^2)^{-1/2}.
    """
    r = pred.rank
    m = obs.m
    if r > m:
        raise ValueError(f"branch requires r <= m, got r={r}, m={m}; "
                         f"use correct_wide_rank")
    y = np.asarray(y, dtype=float)
    if y.shape != (m,):
        raise ValueError(f"measurement shape {y.shape} != ({m},)")

    pi = pred.cov_factor.data
    e = obs.r_sqrt_inv_apply(y - obs.c.apply(pred.mean))
    w = obs.r_sqrt_inv_apply(obs.c.apply_mat(pi))  # m-by-r whitened projection
    u, d, vt = scipy.linalg.svd(w.T, full_matrices=False, check_finite=False)
    v = vt.T  # m-by-r

    vte = v.T @ e
    gain_weights = d / (1.0 + d**2)
    mean = pred.mean + pi @ (u @ (gain_weights * vte))
    factor = LowRankFactor(pi @ (u / np.sqrt(1.0 + d**2)))

    loglik = (
        -0.5 * m * LOG_2PI
        - obs.log_det_r_sqrt
        - 0.5 * float(np.sum(np.log1p(d**2)))
        - 0.5 * float(e @ e)
        + 0.5 * float(vte @ (d**2 / (1.0 + d**2) * vte))
    )
    internals = UpdateInternals(u, d, v, e, "low_rank")
    return SqrtGaussian(mean, factor), loglik, internals


def correct_wide_rank(
    pred: SqrtGaussian, obs: ObservationModel, y: np.ndarray
) -> tuple[SqrtGaussian, float, UpdateInternals]:
    """Correction for m < r <= n via the factored innovation covariance.

    The innovation covariance S = C Pi C^T + R is factored through the SVD of
    the m-by-(r+m) block [C Pi^{1/2}, R^{1/2}]; the posterior factor follows
    from the SVD of the small gain core and keeps exactly r columns.
    """
    r = pred.rank
    m = obs.m
    if m >= r:
        raise ValueError(f"branch requires m < r, got r={r}, m={m}; "
                         f"use correct_low_rank")
    y = np.asarray(y, dtype=float)
    if y.shape != (m,):
        raise ValueError(f"measurement shape {y.shape} != ({m},)")

    pi = pred.cov_factor.data
    c_pi = obs.c.apply_mat(pi)  # m-by-r
    block = np.hstack([c_pi, obs.r_sqrt_matrix()])  # m-by-(r+m)
    us, ds, _ = np.linalg.svd(block, full_matrices=False)  # us m-by-m
    cutoff = 1e-12 * (ds[0] if ds.size else 0.0)
    ds_inv = np.where(ds > cutoff, 1.0 / np.maximum(ds, 1e-300), 0.0)

    k_core = c_pi.T @ (us * ds_inv)  # r-by-m gain core
    e_raw = y - obs.c.apply(pred.mean)
    whitened = ds_inv * (us.T @ e_raw)
    mean = pred.mean + pi @ (k_core @ whitened)

    uk, dk, _ = np.linalg.svd(k_core, full_matrices=True)  # uk r-by-r
    dk_full = np.zeros(r)
    dk_full[: dk.shape[0]] = dk
    if np.any(dk_full > 1.0 + 1e-8):
        raise FloatingPointError(
            f"gain-core singular value {dk_full.max():.6g} exceeds 1; "
            f"inconsistent prediction/observation inputs"
        )
    one_minus = 1.0 - dk_full**2
    clamped = float(-np.sum(one_minus[one_minus < 0.0]))
    one_minus = np.clip(one_minus, 0.0, None)
    factor = LowRankFactor(pi @ (uk * np.sqrt(one_minus)))

    # log N(y; C mu, S) evaluated through the factorization of S.
    loglik = (
        -0.5 * m * LOG_2PI
        - float(np.sum(np.log(ds)))
        - 0.5 * float(whitened @ whitened)
    )
    internals = UpdateInternals(uk, dk_full, None, e_raw, "wide_rank", clamped)
    return SqrtGaussian(mean, factor), loglik, internals


def correct(
    pred: SqrtGaussian, obs: ObservationModel, y: np.ndarray
) -> tuple[SqrtGaussian, float, UpdateInternals]:
    """Dispatch to the branch selected by the rank/measurement dimensions."""
    if pred.rank <= obs.m:
        return correct_low_rank(pred, obs, y)
    return correct_wide_rank(pred, obs, y)


@dataclass
class DlraConfig:
    """Knobs for the low-rank process-noise integration inside the filter."""

    substeps: int = 1
    k_step: str = "rk4"
    reuse_basis: bool = True  # False redraws a random basis each step


class DiscreteDynamics:
    """Transition actions per step plus the process-noise source.

    `phi` is a single operator (time-invariant step) or one per step, indexed
    by the destination step. Process noise comes from explicit per-step
    factors (`q_sqrts`, shared across methods when comparing them), from the
    low-rank integrator driven by `model`, or is zero. `q_exact_sqrt` is the
    dense-oracle noise factor consumed by the reference filter only.
    """

    def __init__(
        self,
        phi: Union[LinearOperator, Sequence[LinearOperator], None] = None,
        model: Optional[LtiSdeModel] = None,
        q_sqrts: Optional[Sequence[Optional[LowRankFactor]]] = None,
        q_exact_sqrt: Optional[np.ndarray] = None,
    ):
        if phi is None and model is None:
            raise ValueError("need a transition action or a model to build one")
        self._phi = phi
        self.model = model
        self.q_sqrts = q_sqrts
        self.q_exact_sqrt = q_exact_sqrt
        self._phi_cache: dict = {}

    @property
    def n(self) -> int:
        if self.model is not None:
            return self.model.n
        op = self._phi if isinstance(self._phi, LinearOperator) else self._phi[1]
        return op.in_dim

    def phi_for(self, step: int, dt: float) -> LinearOperator:
        if isinstance(self._phi, LinearOperator):
            return self._phi
        if self._phi is not None:
            return self._phi[step]
        key = round(dt, 12)
        if key not in self._phi_cache:
            self._phi_cache[key] = LinearOperator.from_matrix(
                scipy.linalg.expm(self.model.drift.to_dense() * dt)
            )
        return self._phi_cache[key]

    def exact_q_sqrt(self, dt: float) -> Optional[np.ndarray]:
        """Dense noise factor for the reference filter, cached per step size."""
        if self.q_exact_sqrt is not None:
            return self.q_exact_sqrt
        if self.model is None or not self.model.has_diffusion:
            return None
        key = ("exact", round(dt, 12))
        if key not in self._phi_cache:
            q = exact_process_noise(self.model, dt)
            w, v = np.linalg.eigh(q)
            keep = w > 1e-14 * max(w.max(), 1e-300)
            self._phi_cache[key] = v[:, keep] * np.sqrt(w[keep])
        return self._phi_cache[key]


def filter_pass(
    dynamics: Union[LtiSdeModel, DiscreteDynamics],
    obs_seq: Sequence[Observation],
    init: SqrtGaussian,
    rank: int,
    dlra: Optional[DlraConfig] = None,
    seed: int = 0,
    record_mode: str = "full",
) -> FilterTrace:
    """Run the full prediction/correction recursion over a measurement grid.

    The initial moments are the prior at the first grid time; when a
    measurement is present there, the pass starts by conditioning on it (the
    stationary-start protocol). Missing measurements (y = None) copy the
    predicted moments forward with a zero log-likelihood increment.
    `record_mode="lean"` keeps only what error metrics need and skips the
    smoother artifacts.
    """
    if isinstance(dynamics, LtiSdeModel):
        dynamics = DiscreteDynamics(model=dynamics)
    if dlra is None:
        dlra = DlraConfig()
    if init.rank != rank:
        raise ValueError(f"init factor has {init.rank} columns, expected {rank}")
    times = np.array([obs.time for obs in obs_seq], dtype=float)
    if len(times) == 0:
        return FilterTrace([], times, 0.0, init)
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing")

    lean = record_mode == "lean"
    model = dynamics.model
    records = []
    total = 0.0
    current = init
    basis = None

    for l, obs in enumerate(obs_seq):
        gain_core = None
        q_factor = None
        phi = None
        diag: dict = {}

        if l == 0:
            predicted = init
        else:
            dt = times[l] - times[l - 1]
            phi = dynamics.phi_for(l, dt)

            if dynamics.q_sqrts is not None:
                q_factor = dynamics.q_sqrts[l]
            elif model is not None and model.has_diffusion:
                noise = process_noise_factor(
                    model,
                    basis if dlra.reuse_basis else None,
                    dt,
                    substeps=dlra.substeps,
                    seed=seed + l,
                    rank=rank,
                    k_step=dlra.k_step,
                )
                q_factor = noise.factor
                basis = noise.basis
                if noise.clamped_mass > CLAMP_WARN_FRACTION * max(
                    np.trace(q_factor.data.T @ q_factor.data), 1e-300
                ):
                    diag["q_clamped_mass"] = noise.clamped_mass
                if noise.completed_columns:
                    diag["basis_completed"] = noise.completed_columns

            phi_sigma = phi.apply_mat(current.cov_factor.data)
            predicted, pdiag = predict(
                current, phi, q_factor, rank, phi_cov_factor=phi_sigma
            )
            diag.update(pdiag)
            if not lean:
                gain_core = tall_pinv_apply(
                    predicted.cov_factor.data, phi_sigma
                ).T

        if obs.y is None:
            corrected = predicted
            loglik = 0.0
            diag["branch"] = "none"
        else:
            corrected, loglik, internals = correct(predicted, obs.model, obs.y)
            diag["branch"] = internals.branch
            if internals.clamped_mass:
                diag["update_clamped_mass"] = internals.clamped_mass
            if not lean:
                diag["whitened_residual"] = (
                    internals.residual
                    if internals.branch == "low_rank"
                    else obs.model.r_sqrt_inv_apply(internals.residual)
                )

        total += loglik
        records.append(
            FilterStepRecord(
                time=times[l],
                predicted=None if lean else predicted,
                corrected=corrected,
                gain_core=gain_core,
                q_factor=None if lean else q_factor,
                phi_ref=None if lean else phi,
                loglik_increment=loglik,
                diagnostics=diag,
            )
        )
        current = corrected

    return FilterTrace(records, times, total, init)
