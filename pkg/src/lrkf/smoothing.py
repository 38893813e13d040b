"""Backward-Markov smoothing and posterior sampling on low-rank factors.

The filtering pass leaves behind, per step, the predicted/corrected factors,
the small backward-gain core, and the process-noise factor. The smoother
assembles the backward transition kernels from those artifacts alone (no
dynamics are re-run) and recurses from the final step to the first. Sampled
realizations of the backward process are posterior trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .filtering import FilterStepRecord, FilterTrace, SqrtGaussian
from .linalg import LowRankFactor, tall_pinv_apply, truncated_svd


@dataclass
class BackwardKernel:
    """Gaussian backward transition x_l | x_{l+1}: gain action, shift, noise.

    The gain never exists as an n-by-n matrix; its action factors through
    the stored square core and two tall factors, applied right-to-left.
    """

    gain_apply: Callable[[np.ndarray], np.ndarray]
    shift: np.ndarray
    noise_factor: LowRankFactor


def _make_gain(sigma_factor: np.ndarray, core: np.ndarray, pi_factor: np.ndarray):
    def gain_apply(x: np.ndarray) -> np.ndarray:
        return sigma_factor @ (core @ tall_pinv_apply(pi_factor, x))

    return gain_apply


def build_backward_kernel(
    record_l: FilterStepRecord, record_lplus1: FilterStepRecord
) -> BackwardKernel:
    """Backward kernel between two consecutive filter steps.

    The shift is mu_l - G mu^-_{l+1}; the noise factor is the rank-r
    truncation of the stacked block [(I - G Phi) Sigma_l^{1/2}, G Q_{l+1}^{1/2}]
    with every G and Phi application operator-level.
    """
    nxt = record_lplus1
    if nxt.gain_core is None or nxt.predicted is None or nxt.phi_ref is None:
        raise ValueError("smoothing needs a full-mode filter trace")
    sigma = record_l.corrected.cov_factor.data
    pi_next = nxt.predicted.cov_factor.data
    gain_apply = _make_gain(sigma, nxt.gain_core, pi_next)

    shift = record_l.corrected.mean - gain_apply(nxt.predicted.mean)

    r = sigma.shape[1]
    residual = sigma - gain_apply(nxt.phi_ref.apply_mat(sigma))  # (I - G Phi) S
    if nxt.q_factor is not None and nxt.q_factor.r > 0 and np.any(nxt.q_factor.data):
        block = np.hstack([residual, gain_apply(nxt.q_factor.data)])
    else:
        block = residual
    if block.shape[1] <= r:
        u, d, _ = np.linalg.svd(block, full_matrices=False)
        noise = u * d
        if noise.shape[1] < r:
            noise = np.hstack([noise, np.zeros((noise.shape[0], r - noise.shape[1]))])
    else:
        triple = truncated_svd(block, r)
        noise = triple.u * triple.d
    return BackwardKernel(gain_apply, shift, LowRankFactor(noise))


def smooth_pass(trace: FilterTrace) -> list[SqrtGaussian]:
    """Smoothing marginals for every step of a filter trace.

    The final step's smoothing marginal is its filtering marginal; earlier
    steps recurse through the backward kernels, compressing the stacked
    covariance factor [G Lambda^{1/2}, P^{1/2}] back to rank r each step.
    """
    if len(trace) == 0:
        raise ValueError("cannot smooth an empty trace")
    records = trace.records
    out: list[Optional[SqrtGaussian]] = [None] * len(records)
    out[-1] = records[-1].corrected

    for l in range(len(records) - 2, -1, -1):
        kernel = build_backward_kernel(records[l], records[l + 1])
        nxt = out[l + 1]
        mean = kernel.gain_apply(nxt.mean) + kernel.shift
        r = records[l].corrected.rank
        block = np.hstack(
            [kernel.gain_apply(nxt.cov_factor.data), kernel.noise_factor.data]
        )
        triple = truncated_svd(block, r)
        out[l] = SqrtGaussian(mean, LowRankFactor(triple.u * triple.d))
    return out


def sample_posterior(trace: FilterTrace, count: int, seed: int = 0) -> np.ndarray:
    """Joint posterior trajectories by backward simulation.

    Draws land in the factor column space (the represented Gaussian has rank
    at most r, so factor-space sampling is exact for it and O(n r) per step).
    Streams are spawned per sample, so results are deterministic given
    (seed, sample index) independently of `count`.

    Returns an array of shape (count, N, n).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if len(trace) == 0:
        raise ValueError("cannot sample from an empty trace")
    records = trace.records
    n_steps = len(records)
    n = records[-1].corrected.n
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]

    paths = np.empty((count, n_steps, n))
    last = records[-1].corrected
    z = np.column_stack([rng.standard_normal(last.rank) for rng in rngs])
    paths[:, -1, :] = (last.mean[:, None] + last.cov_factor.data @ z).T

    for l in range(n_steps - 2, -1, -1):
        kernel = build_backward_kernel(records[l], records[l + 1])
        r_l = kernel.noise_factor.r
        z = np.column_stack([rng.standard_normal(r_l) for rng in rngs])
        x = (
            kernel.gain_apply(paths[:, l + 1, :].T)
            + kernel.shift[:, None]
            + kernel.noise_factor.data @ z
        )
        paths[:, l, :] = x.T
    return paths
