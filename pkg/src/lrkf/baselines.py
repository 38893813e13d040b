"""Reference filters: dense square-root KF/RTS oracle and ensemble methods.

The dense pass is the accuracy oracle for everything else in the package. It
propagates exact covariance factors (QR-recompressed, optionally compressed
at machine precision, never rank-truncated) and applies the correction in
Joseph factor form. The ensemble filters are the stochastic competitors: the
perturbed-observation variant and the deterministic square-root transform
variant, both with gains computed in factored ensemble space so no n-by-n
sample covariance is ever formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .dlra import process_noise_factor
from .filtering import DiscreteDynamics, DlraConfig, Observation
from .linalg import LowRankFactor

LOG_2PI = math.log(2.0 * math.pi)
DENSE_CAP_DEFAULT = 2048


@dataclass
class DenseGaussian:
    """Dense-oracle Gaussian; covariance kept as an exact factor."""

    mean: np.ndarray
    factor: np.ndarray  # n-by-w with cov = factor @ factor.T, w <= n

    @staticmethod
    def from_cov(mean: np.ndarray, cov: np.ndarray) -> "DenseGaussian":
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        floor = -1e-9 * max(w.max(), 0.0)
        if w.min() < floor:
            raise ValueError(f"covariance has eigenvalue {w.min():.3e} < {floor:.3e}")
        keep = w > 1e-14 * max(w.max(), 1e-300)
        return DenseGaussian(np.asarray(mean, dtype=float), v[:, keep] * np.sqrt(w[keep]))

    def cov(self) -> np.ndarray:
        return self.factor @ self.factor.T


@dataclass
class DenseStepRecord:
    time: float
    mean_pred: np.ndarray
    factor_pred: Optional[np.ndarray]
    mean: np.ndarray
    factor: Optional[np.ndarray]
    phi_ref: Optional[object]
    q_sqrt: Optional[np.ndarray]
    loglik_increment: float


@dataclass
class DenseTrace:
    records: list
    times: np.ndarray
    total_loglik: float

    def means(self) -> np.ndarray:
        return np.array([rec.mean for rec in self.records])


def _recompress(factor: np.ndarray, tol: Optional[float]) -> np.ndarray:
    """Cap the factor width at n exactly via QR; drop machine-zero columns.

    Neither step truncates rank in any meaningful sense: the QR rewrite is
    algebraically exact, and the SVD step only removes singular values below
    `tol` relative to the largest (roundoff residue of an exactly low-rank
    problem). Pass tol=None to keep every column.
    """
    n, w = factor.shape
    if w > n:
        _, rr = np.linalg.qr(factor.T)
        factor = rr.T
    if tol is not None and factor.shape[1] > 1:
        u, d, _ = np.linalg.svd(factor, full_matrices=False)
        keep = d > tol * (d[0] if d.size else 0.0)
        keep_n = max(int(np.sum(keep)), 1)
        factor = u[:, :keep_n] * d[:keep_n]
    return factor


def dense_kf_pass(
    dynamics: DiscreteDynamics,
    obs_seq: Sequence[Observation],
    init: DenseGaussian,
    dense_cap: int = DENSE_CAP_DEFAULT,
    compress_tol="auto",
    keep_stride: int = 1,
    lean: bool = False,
) -> DenseTrace:
    """Exact square-root Kalman filter; the oracle for the low-rank methods.

    Prediction stacks [Phi Sigma^{1/2}, Q^{1/2}] and recompresses by QR;
    correction uses the Joseph update in factor form, so the posterior factor
    is [(I - K C) Pi^{1/2}, K R^{1/2}] recompressed. The per-step
    log-likelihood is the exact Gaussian predictive density. Factors are
    stored every `keep_stride` steps (means always); `lean` drops the
    artifacts only the smoother needs.
    """
    n = init.mean.shape[0]
    if n > dense_cap:
        raise ValueError(f"n = {n} exceeds the dense cap {dense_cap}")
    if compress_tol == "auto":
        compress_tol = 1e-14 if n > 256 else None
    times = np.array([obs.time for obs in obs_seq], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing")

    records: list = []
    total = 0.0
    mean, factor = init.mean.copy(), init.factor.copy()

    for l, obs in enumerate(obs_seq):
        phi = None
        q_sqrt = None
        if l > 0:
            dt = times[l] - times[l - 1]
            phi = dynamics.phi_for(l, dt)
            q_sqrt = dynamics.exact_q_sqrt(dt)
            mean = phi.apply(mean)
            factor = phi.apply_mat(factor)
            if q_sqrt is not None:
                factor = _recompress(np.hstack([factor, q_sqrt]), compress_tol)
        mean_pred, factor_pred = mean, factor

        loglik = 0.0
        if obs.y is not None:
            om = obs.model
            w_blk = om.c.apply_mat(factor)  # m-by-w
            r_sqrt = om.r_sqrt_matrix()
            s = w_blk @ w_blk.T + r_sqrt @ r_sqrt.T
            chol = np.linalg.cholesky(s)
            e_raw = obs.y - om.c.apply(mean)
            half = scipy.linalg.solve_triangular(chol, e_raw, lower=True)
            loglik = (
                -0.5 * om.m * LOG_2PI
                - float(np.sum(np.log(np.diag(chol))))
                - 0.5 * float(half @ half)
            )
            # K = Pi C^T S^{-1} assembled right-to-left on the factor.
            kt = scipy.linalg.cho_solve((chol, True), w_blk)  # m-by-w, = S^{-1} C Pi^{1/2}
            gain = factor @ kt.T  # n-by-m
            mean = mean + gain @ e_raw
            factor = _recompress(
                np.hstack([factor - gain @ w_blk, gain @ r_sqrt]), compress_tol
            )

        total += loglik
        keep = (l % keep_stride == 0) or (l == len(obs_seq) - 1)
        records.append(
            DenseStepRecord(
                time=times[l],
                mean_pred=mean_pred,
                factor_pred=None if lean or not keep else factor_pred,
                mean=mean,
                factor=factor if keep else None,
                phi_ref=None if lean else phi,
                q_sqrt=None if lean else q_sqrt,
                loglik_increment=loglik,
            )
        )

    return DenseTrace(records, times, total)


def dense_rts_pass(trace: DenseTrace) -> list[DenseGaussian]:
    """Classical fixed-interval smoother on a dense filter trace.

    The gain is Sigma_l Phi^T Pi_{l+1}^+ with a symmetric pseudoinverse, so
    exactly rank-deficient predicted covariances are handled.
    """
    records = trace.records
    if not records:
        raise ValueError("cannot smooth an empty trace")
    for rec in records:
        if rec.factor is None or (rec.factor_pred is None and rec is not records[0]):
            raise ValueError("smoothing needs a trace with keep_stride=1, lean=False")

    out: list[Optional[DenseGaussian]] = [None] * len(records)
    last = records[-1]
    out[-1] = DenseGaussian(last.mean, last.factor)
    cov_next = last.factor @ last.factor.T
    mean_next = last.mean

    for l in range(len(records) - 2, -1, -1):
        rec, nxt = records[l], records[l + 1]
        sigma = rec.factor @ rec.factor.T
        pi_next = nxt.factor_pred @ nxt.factor_pred.T
        phi_t_pinv = nxt.phi_ref.apply_adjoint_mat(scipy.linalg.pinvh(pi_next))
        gain = sigma @ phi_t_pinv  # Sigma Phi^T Pi^+
        mean_next = rec.mean + gain @ (mean_next - nxt.mean_pred)
        cov_next = sigma + gain @ (cov_next - pi_next) @ gain.T
        cov_next = 0.5 * (cov_next + cov_next.T)
        out[l] = DenseGaussian.from_cov(mean_next, cov_next)
    return out


@dataclass
class Ensemble:
    """Columns are state samples; the centered, scaled ensemble is a factor."""

    members: np.ndarray  # n-by-r
    time: float = 0.0

    @property
    def size(self) -> int:
        return self.members.shape[1]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=1)

    def anomaly_factor(self) -> np.ndarray:
        """Factor A with sample covariance = A @ A.T."""
        centered = self.members - self.members.mean(axis=1, keepdims=True)
        return centered / np.sqrt(self.size - 1)


@dataclass
class EnsembleTrace:
    times: np.ndarray
    means: np.ndarray  # N-by-n
    factors: dict = field(default_factory=dict)  # step -> anomaly factor
    final: Optional[Ensemble] = None


def _ensemble_pass(
    dynamics: DiscreteDynamics,
    obs_seq: Sequence[Observation],
    init: Ensemble,
    seed: int,
    correct_members: Callable,
    keep_stride: int,
    dlra: Optional[DlraConfig],
) -> EnsembleTrace:
    if init.size < 2:
        raise ValueError("ensemble size must be at least 2")
    if dlra is None:
        dlra = DlraConfig()
    times = np.array([obs.time for obs in obs_seq], dtype=float)
    rng = np.random.default_rng(seed)
    x = init.members.copy()
    n, size = x.shape
    model = dynamics.model

    means = np.empty((len(obs_seq), n))
    factors: dict = {}
    basis = None

    for l, obs in enumerate(obs_seq):
        if l > 0:
            dt = times[l] - times[l - 1]
            phi = dynamics.phi_for(l, dt)
            x = phi.apply_mat(x)
            q_factor = None
            if dynamics.q_sqrts is not None:
                q_factor = dynamics.q_sqrts[l]
            elif model is not None and model.has_diffusion:
                noise = process_noise_factor(
                    model,
                    basis if dlra.reuse_basis else None,
                    dt,
                    substeps=dlra.substeps,
                    seed=seed + l,
                    rank=min(size, model.n),
                    k_step=dlra.k_step,
                )
                q_factor = noise.factor
                basis = noise.basis
            if q_factor is not None and q_factor.r > 0:
                x = x + q_factor.data @ rng.standard_normal((q_factor.r, size))

        if obs.y is not None:
            x = correct_members(x, obs.model, obs.y, rng)

        means[l] = x.mean(axis=1)
        if (l % keep_stride == 0) or (l == len(obs_seq) - 1):
            centered = x - means[l][:, None]
            factors[l] = centered / np.sqrt(size - 1)

    return EnsembleTrace(times, means, factors, Ensemble(x, times[-1]))


def _whitened_projection(om, anomalies: np.ndarray) -> np.ndarray:
    return om.r_sqrt_inv_apply(om.c.apply_mat(anomalies))


def _enkf_correct(x: np.ndarray, om, y: np.ndarray, rng) -> np.ndarray:
    """Perturbed-observation update with the gain in factored ensemble space.

    With whitened projected anomalies Yw, the gain action reduces through the
    push-through identity to A (I + Yw^T Yw)^{-1} Yw^T R^{-1/2} d, costing
    O(m r^2 + r^3) and never forming an m-by-m or n-by-n matrix.
    """
    size = x.shape[1]
    a = (x - x.mean(axis=1, keepdims=True)) / np.sqrt(size - 1)
    yw = _whitened_projection(om, a)  # m-by-r
    perturbed = y[:, None] + om.r_sqrt_apply(rng.standard_normal((om.m, size)))
    d_wh = om.r_sqrt_inv_apply(perturbed - om.c.apply_mat(x))  # m-by-r
    core = np.eye(size) + yw.T @ yw
    w = np.linalg.solve(core, yw.T @ d_wh)
    return x + a @ w


def _etkf_correct(x: np.ndarray, om, y: np.ndarray, rng) -> np.ndarray:
    """Deterministic square-root transform in ensemble space.

    The mean moves by the exact Kalman increment computed on the sample
    statistics; the anomalies are post-multiplied by the symmetric inverse
    square root of (I + Yw^T Yw), so the posterior sample covariance equals
    the Kalman-updated prior sample covariance.
    """
    del rng  # transform is deterministic; stochasticity only via propagation
    size = x.shape[1]
    x_mean = x.mean(axis=1)
    centered = x - x_mean[:, None]
    a = centered / np.sqrt(size - 1)
    yw = _whitened_projection(om, a)
    gamma, v = np.linalg.eigh(yw.T @ yw)
    gamma = np.clip(gamma, 0.0, None)
    e = om.r_sqrt_inv_apply(y - om.c.apply(x_mean))
    w_mean = v @ ((v.T @ (yw.T @ e)) / (1.0 + gamma))
    new_mean = x_mean + a @ w_mean
    transform = (v / np.sqrt(1.0 + gamma)) @ v.T
    return new_mean[:, None] + centered @ transform


def enkf_pass(
    dynamics: DiscreteDynamics,
    obs_seq: Sequence[Observation],
    init: Ensemble,
    seed: int = 0,
    keep_stride: int = 1,
    dlra: Optional[DlraConfig] = None,
) -> EnsembleTrace:
    """Stochastic ensemble filter with perturbed observations."""
    return _ensemble_pass(dynamics, obs_seq, init, seed, _enkf_correct,
                          keep_stride, dlra)


def etkf_pass(
    dynamics: DiscreteDynamics,
    obs_seq: Sequence[Observation],
    init: Ensemble,
    seed: int = 0,
    keep_stride: int = 1,
    dlra: Optional[DlraConfig] = None,
) -> EnsembleTrace:
    """Deterministic-transform ensemble square-root filter."""
    return _ensemble_pass(dynamics, obs_seq, init, seed, _etkf_correct,
                          keep_stride, dlra)
