"""Deterministic low-rank square-root Kalman filtering and smoothing.

State estimation for linear Gaussian state-space models whose covariances
are propagated as tall n-by-r factors: prediction through a dynamical
low-rank integrator for the process-noise Lyapunov equation, correction by
rotating the predicted factor's column space, backward-Markov smoothing, and
posterior sampling. Ships with a dense square-root oracle, ensemble
baselines, benchmark problems, and a CLI experiment harness.
"""

__version__ = "0.1.0"

from .baselines import (
    DenseGaussian,
    Ensemble,
    dense_kf_pass,
    dense_rts_pass,
    enkf_pass,
    etkf_pass,
)
from .dlra import DlraState, bug_step, process_noise_factor
from .filtering import (
    DiscreteDynamics,
    DlraConfig,
    FilterTrace,
    Observation,
    ObservationModel,
    SqrtGaussian,
    correct_low_rank,
    correct_wide_rank,
    filter_pass,
    predict,
)
from .linalg import LowRankFactor, SvdTriple, orthonormalize, tall_pinv_apply, truncated_svd
from .metrics import metric_cov_frobenius, metric_rmse_to_kf, metric_zscores
from .sde import (
    DiscreteTransition,
    LinearOperator,
    LtiSdeModel,
    discretize_transition,
    exact_process_noise,
    lyapunov_rhs_apply,
)
from .smoothing import BackwardKernel, build_backward_kernel, sample_posterior, smooth_pass

__all__ = [
    "BackwardKernel",
    "DenseGaussian",
    "DiscreteDynamics",
    "DiscreteTransition",
    "DlraConfig",
    "DlraState",
    "Ensemble",
    "FilterTrace",
    "LinearOperator",
    "LowRankFactor",
    "LtiSdeModel",
    "Observation",
    "ObservationModel",
    "SqrtGaussian",
    "SvdTriple",
    "bug_step",
    "build_backward_kernel",
    "correct_low_rank",
    "correct_wide_rank",
    "dense_kf_pass",
    "dense_rts_pass",
    "discretize_transition",
    "enkf_pass",
    "etkf_pass",
    "exact_process_noise",
    "filter_pass",
    "lyapunov_rhs_apply",
    "metric_cov_frobenius",
    "metric_rmse_to_kf",
    "metric_zscores",
    "orthonormalize",
    "predict",
    "process_noise_factor",
    "sample_posterior",
    "smooth_pass",
    "tall_pinv_apply",
    "truncated_svd",
]
