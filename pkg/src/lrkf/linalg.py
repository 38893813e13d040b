"""Factor-level linear algebra: truncated SVD, orthonormalization, tall pseudoinverse.

Covariances are carried everywhere as tall factors L with Sigma = L @ L.T.
All contracts in this module are on outer products or column spans, never on
the signs or ordering of individual factor columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

# Relative cutoff below which singular values are treated as zero.
PINV_CUTOFF = 1e-12
# Condition-number threshold above which the QR solve falls back to SVD.
QR_COND_LIMIT = 1e8


@dataclass(frozen=True)
class LowRankFactor:
    """Tall n-by-r factor of a PSD matrix Sigma = data @ data.T."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError(f"factor must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("factor contains non-finite entries")
        object.__setattr__(self, "data", data)

    @staticmethod
    def _wrap(data: np.ndarray) -> "LowRankFactor":
        """Internal fast path: wrap an array known to satisfy the invariants.

        Skips the finiteness scan; only for hot loops whose inputs were
        validated at construction (non-finite arithmetic then surfaces in
        results rather than at wrap time).
        """
        out = object.__new__(LowRankFactor)
        object.__setattr__(out, "data", data)
        return out

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def r(self) -> int:
        return self.data.shape[1]

    def outer(self) -> np.ndarray:
        """Materialize the represented covariance (small instances only)."""
        return self.data @ self.data.T

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.data, compute_uv=False)

    @staticmethod
    def zero(n: int, r: int) -> "LowRankFactor":
        return LowRankFactor(np.zeros((n, r)))


class SvdTriple(NamedTuple):
    """Top-k singular triple: u (a-by-k), d (k, descending), v (b-by-k)."""

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray


class OrthoBasis(NamedTuple):
    """Orthonormal basis plus the number of columns that had to be completed."""

    q: np.ndarray
    completed: int


def truncated_svd(m: np.ndarray, rank: int) -> SvdTriple:
    """Best rank-`rank` approximation of m via full thin SVD plus truncation.

    Returns the top-`rank` singular triple so that u @ diag(d) @ v.T is the
    Frobenius-optimal rank-`rank` approximation of m.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("truncated_svd: input contains non-finite entries")
    if not 1 <= rank <= min(m.shape):
        raise ValueError(
            f"rank must be in [1, {min(m.shape)}] for shape {m.shape}, got {rank}"
        )
    u, d, vt = np.linalg.svd(m, full_matrices=False)
    return SvdTriple(u[:, :rank], d[:rank], vt[:rank].T)


def orthonormalize(
    m: np.ndarray,
    seed: int = 0,
    fallback: Optional[np.ndarray] = None,
) -> OrthoBasis:
    """Orthonormal basis for the column space of m, completed if rank deficient.

    Full-column-rank input returns Q of a thin QR factorization. Deficient
    columns are replaced deterministically: candidate directions are taken
    from `fallback` (if given) and then from a generator seeded with `seed`,
    orthogonalized against the basis accumulated so far. The number of
    completed columns is reported so callers can flag the event.
    """
    m = np.asarray(m, dtype=float)
    n, r = m.shape
    if r > n:
        raise ValueError(f"need n >= r, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("orthonormalize: input contains non-finite entries")

    sv = np.linalg.svd(m, compute_uv=False) if m.size else np.zeros(0)
    smax = sv[0] if sv.size else 0.0
    if smax > 0 and sv[-1] > PINV_CUTOFF * smax:
        q, rr = np.linalg.qr(m)
        return OrthoBasis(q, 0)

    # Rank-deficient path (routine for the zero cold start): keep the
    # numerically significant left singular directions, complete the rest.
    if smax > 0:
        u, d, _ = np.linalg.svd(m, full_matrices=False)
        k = int(np.sum(d > PINV_CUTOFF * smax))
        cols = [u[:, :k]]
    else:
        k = 0
        cols = []

    rng = np.random.default_rng(seed)
    basis = cols[0] if cols else np.zeros((n, 0))
    fb_iter = iter(fallback.T) if fallback is not None else iter(())
    while basis.shape[1] < r:
        cand = next(fb_iter, None)
        if cand is None:
            cand = rng.standard_normal(n)
        cand = cand - basis @ (basis.T @ cand)
        nrm = np.linalg.norm(cand)
        if nrm < 1e-8 * max(1.0, np.sqrt(n)):
            continue  # candidate inside the current span, try the next one
        basis = np.hstack([basis, cand[:, None] / nrm])
    return OrthoBasis(basis, r - k)


def tall_pinv_apply(l: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the Moore-Penrose pseudoinverse of a tall matrix: L^+ @ x.

    Solves the normal equations through a thin QR factorization while L is
    well conditioned; near rank deficiency it switches to an SVD solve with
    singular values below PINV_CUTOFF * d_max zeroed (true pseudoinverse
    semantics). Never forms an n-by-n matrix.
    """
    l = np.asarray(l, dtype=float)
    x = np.asarray(x, dtype=float)
    if l.ndim != 2 or l.shape[0] < l.shape[1]:
        raise ValueError(f"expected a tall matrix, got shape {l.shape}")
    if x.shape[0] != l.shape[0]:
        raise ValueError(f"dimension mismatch: {l.shape} vs {x.shape}")

    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]

    q, rr = np.linalg.qr(l)
    # cond(R) = cond(L); the r-by-r singular values are cheap to get exactly.
    sv = np.linalg.svd(rr, compute_uv=False)
    if sv[-1] > 0 and sv[0] / sv[-1] < QR_COND_LIMIT:
        y = scipy.linalg.solve_triangular(rr, q.T @ x)
    else:
        u, d, vt = np.linalg.svd(l, full_matrices=False)
        mask = d > PINV_CUTOFF * (d[0] if d.size else 0.0)
        d_inv = np.zeros_like(d)
        d_inv[mask] = 1.0 / d[mask]
        y = vt.T @ (d_inv[:, None] * (u.T @ x))
    return y[:, 0] if squeeze else y
