"""Continuous-time linear SDE priors and their exact discretization.

The prior is dx = A x dt + B dw. Between measurement times it induces a
linear Gaussian transition with matrix Phi = exp(A dt) and process-noise
covariance Q(dt) solving the Lyapunov ODE

    dQ/dt = A Q + Q A^T + B B^T,   Q(0) = 0.

Small instances are solved exactly by matrix-fraction decomposition; large
ones go through the low-rank integrator in `lrkf.dlra`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

DENSE_CAP_DEFAULT = 2048


class LinearOperator:
    """Matrix action with an explicit adjoint and a declared cost class.

    cost_class is "linear" when apply is O(dim) and "quadratic" when it is
    O(dim^2); the benchmark harness keys its scaling regimes off this flag.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        apply_mat: Callable[[np.ndarray], np.ndarray],
        apply_adjoint_mat: Callable[[np.ndarray], np.ndarray],
        cost_class: str = "quadratic",
        matrix: Optional[np.ndarray] = None,
    ):
        if cost_class not in ("linear", "quadratic"):
            raise ValueError(f"unknown cost_class {cost_class!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._apply_mat = apply_mat
        self._apply_adjoint_mat = apply_adjoint_mat
        self.cost_class = cost_class
        self._matrix = matrix

    def apply(self, x: np.ndarray) -> np.ndarray:
        """A @ x for a vector x."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._apply_mat(x[:, None])[:, 0]
        return self._apply_mat(x)

    def apply_mat(self, x: np.ndarray) -> np.ndarray:
        """Columnwise extension: A @ X for an in_dim-by-k block."""
        return self._apply_mat(np.asarray(x, dtype=float))

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """A.T @ y for a vector y."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            return self._apply_adjoint_mat(y[:, None])[:, 0]
        return self._apply_adjoint_mat(y)

    def apply_adjoint_mat(self, y: np.ndarray) -> np.ndarray:
        return self._apply_adjoint_mat(np.asarray(y, dtype=float))

    def to_dense(self) -> np.ndarray:
        """Materialize the matrix (oracle scale only)."""
        if self._matrix is not None:
            return self._matrix
        return self.apply_mat(np.eye(self.in_dim))

    @staticmethod
    def from_matrix(a: np.ndarray, cost_class: str = "quadratic") -> "LinearOperator":
        a = np.asarray(a, dtype=float)
        return LinearOperator(
            a.shape[1], a.shape[0],
            lambda x: a @ x,
            lambda y: a.T @ y,
            cost_class=cost_class,
            matrix=a,
        )

    @staticmethod
    def identity(n: int) -> "LinearOperator":
        return LinearOperator(n, n, lambda x: x, lambda y: y, cost_class="linear")


@dataclass
class LtiSdeModel:
    """LTI SDE prior: drift A (n->n) and diffusion Gram B B^T (n->n, PSD)."""

    drift: LinearOperator
    diffusion_gram: Optional[LinearOperator]  # None encodes B = 0 exactly
    n: int
    wiener_dim: Optional[int] = None  # metadata only, unused in computations

    @property
    def has_diffusion(self) -> bool:
        return self.diffusion_gram is not None

    def diffusion_apply_mat(self, x: np.ndarray) -> np.ndarray:
        if self.diffusion_gram is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.diffusion_gram.apply_mat(x)


@dataclass
class DiscreteTransition:
    """One discrete step: transition action Phi, step size, noise factor."""

    phi: LinearOperator
    dt: float
    q_sqrt: Optional[np.ndarray] = None  # n-by-k factor of Q(dt), None when B = 0
    diagnostics: dict = field(default_factory=dict)


def discretize_transition(
    model: LtiSdeModel,
    dt: float,
    phi_action: Optional[LinearOperator] = None,
    probe_seed: int = 0,
) -> LinearOperator:
    """Action of the transition matrix exp(A dt).

    Without `phi_action` the matrix exponential is materialized by
    scaling-and-squaring (dense path). A caller-supplied closed-form action
    is validated on random probes against the dense exponential whenever the
    state dimension admits it (n <= 512), then returned as-is.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if phi_action is not None:
        if model.n <= 512:
            dense = scipy.linalg.expm(model.drift.to_dense() * dt)
            rng = np.random.default_rng(probe_seed)
            probes = rng.standard_normal((model.n, 3))
            got = phi_action.apply_mat(probes)
            want = dense @ probes
            err = np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-30)
            if err > 1e-8:
                raise ValueError(
                    f"supplied transition action disagrees with exp(A dt) "
                    f"on probes (relative error {err:.2e})"
                )
        return phi_action
    phi = scipy.linalg.expm(model.drift.to_dense() * dt)
    return LinearOperator.from_matrix(phi)


def lyapunov_mfd(
    a: np.ndarray, g: np.ndarray, dt: float, y0: Optional[np.ndarray] = None
) -> np.ndarray:
    """Exact solution at time dt of dY/dt = A Y + Y A^T + G, Y(0) = y0.

    Matrix-fraction decomposition: exponentiate the stacked block matrix
    [[A, G], [0, -A^T]] * dt; with blocks M11 = exp(A dt) and M12, the
    zero-initialized solution is M12 @ M11^T, and a nonzero initial value
    propagates homogeneously as M11 @ y0 @ M11^T. A scalar-drift shortcut
    (A = alpha I) avoids the 2n exponential where it applies.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    n = a.shape[0]

    alpha = np.trace(a) / n
    if np.abs(a - alpha * np.eye(n)).max() <= 1e-13 * max(abs(alpha), 1.0):
        # dY/dt = 2 alpha Y + G in closed form.
        if abs(alpha) < 1e-300:
            y = g * dt
        else:
            e = np.exp(2.0 * alpha * dt)
            y = g * ((e - 1.0) / (2.0 * alpha))
        if y0 is not None:
            y = y + (np.exp(2.0 * alpha * dt) if abs(alpha) > 0 else 1.0) * y0
        return 0.5 * (y + y.T)

    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = a
    blk[:n, n:] = g
    blk[n:, n:] = -a.T
    m = scipy.linalg.expm(blk * dt)
    m11, m12 = m[:n, :n], m[:n, n:]
    y = m12 @ m11.T
    if y0 is not None:
        y = y + m11 @ y0 @ m11.T
    return 0.5 * (y + y.T)


def exact_process_noise(
    model: LtiSdeModel, dt: float, dense_cap: int = DENSE_CAP_DEFAULT
) -> np.ndarray:
    """Dense process-noise covariance Q(dt), symmetrized; oracle-scale only."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if model.n > dense_cap:
        raise ValueError(
            f"n = {model.n} exceeds the dense cap {dense_cap}; "
            f"use the low-rank integrator instead"
        )
    if not model.has_diffusion:
        return np.zeros((model.n, model.n))
    a = model.drift.to_dense()
    g = model.diffusion_gram.to_dense()
    return lyapunov_mfd(a, g, dt)


def lyapunov_rhs_apply(
    model: LtiSdeModel,
    on: np.ndarray,
    factor_basis: Optional[np.ndarray] = None,
    form: Optional[str] = None,
) -> np.ndarray:
    """Actions of the Lyapunov flow field F(Q) = A Q + Q A^T + B B^T.

    Without `factor_basis` this evaluates F(on) densely (oracle use). With a
    basis, two factored forms are available, neither of which forms an
    n-by-n matrix:

    - "tall": `on` is the n-by-r block K and `factor_basis` the basis U0;
      returns F(K U0^T) U0 = A K + K (U0^T A^T U0) + B B^T U0.
    - "projected": `on` is the r-by-r core D and `factor_basis` the updated
      basis U; returns U^T F(U D U^T) U.

    The form is inferred from shapes when unambiguous; at full rank (n = r)
    it must be given explicitly.
    """
    on = np.asarray(on, dtype=float)
    if factor_basis is None:
        if on.shape != (model.n, model.n):
            raise ValueError(f"dense form needs an n-by-n argument, got {on.shape}")
        a = model.drift.to_dense()
        g = (
            model.diffusion_gram.to_dense()
            if model.has_diffusion
            else np.zeros((model.n, model.n))
        )
        return a @ on + on @ a.T + g

    u = np.asarray(factor_basis, dtype=float)
    if form is None:
        tall = on.shape[0] == model.n
        projected = on.shape[0] == u.shape[1]
        if tall and projected:
            raise ValueError("ambiguous shapes at full rank; pass form=...")
        form = "tall" if tall else "projected"
    if form == "tall":
        core = u.T @ model.drift.apply_adjoint_mat(u)  # U0^T A^T U0
        return model.drift.apply_mat(on) + on @ core + model.diffusion_apply_mat(u)
    if form == "projected":
        a_d = u.T @ model.drift.apply_mat(u)
        g_d = u.T @ model.diffusion_apply_mat(u)
        return a_d @ on + on @ a_d.T + g_d
    raise ValueError(f"unknown form {form!r}")
