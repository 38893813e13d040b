"""Error metrics against the exact filter, plus calibration scores.

Covariance distances are evaluated through Gram matrices of the two factors,
so an n-by-n covariance is never materialized: for factors L and F,
||L L^T - F F^T||_F^2 = ||L^T L||_F^2 - 2 ||F^T L||_F^2 + ||F^T F||_F^2.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple, Optional, Union

import numpy as np
import scipy.stats


def metric_rmse_to_kf(approx_means: np.ndarray, kf_means: np.ndarray) -> float:
    """Root-mean-squared deviation over all (time, component) pairs."""
    a = np.asarray(approx_means, dtype=float)
    b = np.asarray(kf_means, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _frob_distance_sq(l: np.ndarray, f: np.ndarray) -> float:
    ll = l.T @ l
    fl = f.T @ l
    ff = f.T @ f
    val = float(np.sum(ll * ll) - 2.0 * np.sum(fl * fl) + np.sum(ff * ff))
    return max(val, 0.0)


def metric_cov_frobenius(
    approx_factors: dict, ref_factors: dict
) -> float:
    """Time-averaged relative Frobenius distance of the covariances.

    Both arguments map step indices to covariance factors; the metric is the
    mean over common steps of ||L L^T - F F^T||_F / ||F F^T||_F (mean of
    ratios). Steps with a zero-norm reference are excluded with a warning.
    """
    steps = sorted(set(approx_factors) & set(ref_factors))
    if not steps:
        raise ValueError("no common steps between the factor sequences")
    ratios = []
    skipped = 0
    for l in steps:
        f = np.asarray(ref_factors[l], dtype=float)
        den = np.linalg.norm(f.T @ f)
        if den <= 0.0:
            skipped += 1
            continue
        ratios.append(
            np.sqrt(_frob_distance_sq(np.asarray(approx_factors[l], float), f)) / den
        )
    if skipped:
        warnings.warn(f"excluded {skipped} steps with zero reference covariance")
    if not ratios:
        raise ValueError("every reference covariance had zero norm")
    return float(np.mean(ratios))


class ZscoreResult(NamedTuple):
    scores: np.ndarray  # signed z-scores of the included components
    ks_statistic: float  # one-sample KS of |z| against Chi(1)
    excluded: int  # components dropped for a vanishing marginal std
    hist_edges: np.ndarray
    hist_counts: np.ndarray


def metric_zscores(
    means: np.ndarray,
    scale: Union[np.ndarray, None],
    reference: np.ndarray,
    factor: Optional[np.ndarray] = None,
    bins: int = 30,
) -> ZscoreResult:
    """Per-component (mean - reference) / marginal std with a Chi(1) KS test.

    The marginal standard deviations come either from `scale` directly or
    from the row norms of a covariance `factor` (the square roots of the
    diagonal of L L^T). Components with std below 1e-12 are flagged as
    infinite-risk, excluded, and counted.
    """
    means = np.asarray(means, dtype=float).ravel()
    reference = np.asarray(reference, dtype=float).ravel()
    if factor is not None:
        scale = np.sqrt(np.sum(np.asarray(factor, float) ** 2, axis=1))
    scale = np.asarray(scale, dtype=float).ravel()
    if means.shape != reference.shape or means.shape != scale.shape:
        raise ValueError("means, scale, and reference must share a shape")

    ok = scale >= 1e-12
    z = (means[ok] - reference[ok]) / scale[ok]
    absz = np.abs(z)
    ks = scipy.stats.kstest(absz, scipy.stats.chi(df=1).cdf).statistic if z.size else np.nan
    edges = np.linspace(0.0, max(5.0, absz.max() if absz.size else 5.0), bins + 1)
    counts, _ = np.histogram(absz, bins=edges)
    return ZscoreResult(z, float(ks), int(np.sum(~ok)), edges, counts)
