"""Rank-r integrator for the symmetric Lyapunov equation.

One step updates a factorization Y = U D U^T (U orthonormal n-by-r, D
symmetric r-by-r) in two substeps: the basis is propagated through the tall
ODE for K = U D ("K-step"), re-orthonormalized, and the core is obtained by
solving the Lyapunov equation projected onto the new basis ("S-step"). The
projected equation is itself a small symmetric Lyapunov equation and is
solved exactly by matrix-fraction decomposition; a Runge-Kutta S-step is
available for convergence studies only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .linalg import LowRankFactor, orthonormalize
from .sde import LtiSdeModel, lyapunov_mfd


@dataclass(frozen=True)
class DlraState:
    """Low-rank state Y = u @ d @ u.T at time t; u orthonormal, d symmetric."""

    u: np.ndarray
    d: np.ndarray
    t: float

    def matrix(self) -> np.ndarray:
        """Materialize Y (small instances only)."""
        return self.u @ self.d @ self.u.T


class ProcessNoiseResult(NamedTuple):
    factor: LowRankFactor  # n-by-r factor of the process-noise covariance
    basis: np.ndarray  # final orthonormal basis, reusable at the next step
    clamped_mass: float  # total negative eigenvalue mass clamped to zero
    completed_columns: int  # basis columns that had to be completed


def random_orthogonal(n: int, r: int, seed: int) -> np.ndarray:
    """Seeded random n-by-r matrix with orthonormal columns."""
    rng = np.random.default_rng(seed)
    return orthonormalize(rng.standard_normal((n, r)), seed=seed).q


def _rk4_affine(k0: np.ndarray, rhs, h: float) -> np.ndarray:
    """One classical RK4 step for a matrix ODE with right-hand side rhs."""
    k1 = rhs(k0)
    k2 = rhs(k0 + 0.5 * h * k1)
    k3 = rhs(k0 + 0.5 * h * k2)
    k4 = rhs(k0 + h * k3)
    return k0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _k_step_exact(
    model: LtiSdeModel, k0: np.ndarray, s0: np.ndarray, g0: np.ndarray, h: float
) -> np.ndarray:
    """Exact solution of dK/dt = A K + K S0 + G0 via an augmented exponential.

    exp of [[A, G0], [0, -S0]] * h has top blocks (e^{Ah}, M12) with
    M12 e^{S0 h} the particular solution, so K(h) = e^{Ah} K0 e^{S0 h}
    + M12 e^{S0 h}. Dense in n; intended for convergence studies.
    """
    n, r = k0.shape
    if n > 512:
        raise ValueError("exact K-step materializes exp(A h); n > 512 refused")
    a = model.drift.to_dense()
    blk = np.zeros((n + r, n + r))
    blk[:n, :n] = a
    blk[:n, n:] = g0
    blk[n:, n:] = -s0
    m = scipy.linalg.expm(blk * h)
    exp_s = scipy.linalg.expm(s0 * h)
    return m[:n, :n] @ k0 @ exp_s + m[:n, n:] @ exp_s


def bug_step(
    state: DlraState,
    model: LtiSdeModel,
    h: float,
    k_step: str = "rk4",
    s_step: str = "exact",
    ortho_seed: int = 0,
) -> tuple[DlraState, int]:
    """One basis-update/Galerkin step of size h.

    Returns the new state and the number of basis columns that had to be
    completed (nonzero whenever the propagated K block was rank deficient,
    which is routine for the zero cold start). `s_step="rk4"` replaces the
    exact core solve with a single RK4 step; use only for order studies.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    u0, d0 = state.u, state.d
    n, r = u0.shape

    # K-step: propagate the tall block K = U0 D0 and refresh the basis.
    s0 = u0.T @ model.drift.apply_adjoint_mat(u0)  # U0^T A^T U0
    g0 = model.diffusion_apply_mat(u0)  # B B^T U0, constant over the step
    k0 = u0 @ d0

    def k_rhs(k):
        return model.drift.apply_mat(k) + k @ s0 + g0

    if k_step == "rk4":
        k_h = _rk4_affine(k0, k_rhs, h)
    elif k_step == "exponential":
        k_h = _k_step_exact(model, k0, s0, g0, h)
    else:
        raise ValueError(f"unknown k_step {k_step!r}")
    if not np.all(np.isfinite(k_h)):
        raise FloatingPointError(
            f"non-finite K block after step of size {h} at t = {state.t}"
        )

    u_h, completed = orthonormalize(k_h, seed=ortho_seed, fallback=u0)
    m = u_h.T @ u0

    # S-step: solve the projected Lyapunov equation from D(t0) = M D0 M^T.
    d_init = m @ d0 @ m.T
    a_d = u_h.T @ model.drift.apply_mat(u_h)
    g_d = u_h.T @ model.diffusion_apply_mat(u_h)
    if s_step == "exact":
        d_h = lyapunov_mfd(a_d, g_d, h, y0=d_init)
    elif s_step == "rk4":
        d_h = _rk4_affine(d_init, lambda d: a_d @ d + d @ a_d.T + g_d, h)
    else:
        raise ValueError(f"unknown s_step {s_step!r}")
    d_h = 0.5 * (d_h + d_h.T)

    return DlraState(u_h, d_h, state.t + h), completed


def process_noise_factor(
    model: LtiSdeModel,
    basis_prev: Optional[np.ndarray],
    dt: float,
    substeps: int = 1,
    seed: int = 0,
    rank: Optional[int] = None,
    k_step: str = "rk4",
) -> ProcessNoiseResult:
    """Low-rank factor of the process-noise covariance over one step.

    Integrates the Lyapunov equation from the zero matrix: the basis starts
    at `basis_prev` when given (the propagated basis of the previous filter
    step) and at a seeded random orthogonal matrix otherwise. The final core
    is rooted by symmetric eigendecomposition; negative eigenvalues are
    clamped to zero and the clamped mass is reported, never silent.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    if basis_prev is not None:
        u0 = np.asarray(basis_prev, dtype=float)
    else:
        if rank is None:
            raise ValueError("rank is required when no previous basis is given")
        u0 = random_orthogonal(model.n, rank, seed)
    r = u0.shape[1]

    if not model.has_diffusion:
        # Homogeneous equation with zero initial data stays zero.
        return ProcessNoiseResult(LowRankFactor.zero(model.n, r), u0, 0.0, 0)

    state = DlraState(u0, np.zeros((r, r)), 0.0)
    completed = 0
    h = dt / substeps
    for i in range(substeps):
        state, comp = bug_step(state, model, h, k_step=k_step, ortho_seed=seed + i)
        completed += comp

    w, v = np.linalg.eigh(state.d)
    clamped = float(-np.sum(w[w < 0.0]))
    w = np.clip(w, 0.0, None)
    d_sqrt = (v * np.sqrt(w)) @ v.T
    factor = LowRankFactor(state.u @ d_sqrt)
    return ProcessNoiseResult(factor, state.u, clamped, completed)
