"""Phase estimation with parametric amplification before photon counting.

The package models a coherent probe that picks up a phase, is amplified by
a two-mode-polarization parametric amplifier and is read out by photon
counting.  It provides the exact Gaussian output state, quantum and
classical Fisher information, photon-number statistics, the moment-based
sensitivity and a Monte Carlo simulator of the Bayesian two-step protocol.
"""

__version__ = "0.1.0"

from .estimation import (
    AdaptiveBoundInputs,
    BayesianPhaseEstimator,
    CountData,
    ExperimentConfig,
    PhiPosterior,
    TwoStepResult,
    adaptive_bound,
    optimal_fraction,
    point_estimate,
    posterior_update,
    simulate_counts,
    two_step_run,
)
from .exceptions import (
    ConvergenceError,
    InsensitivePointError,
    ModelMismatchWarning,
    MultimodalPosteriorWarning,
    PoissonRegimeWarning,
    PosteriorUnderflowError,
)
from .fisher import qfi_numeric, qfi_optimal, qfi_phase_dependent, qfi_sql
from .gaussian import ModeGaussian, ProtocolParams, TwoModeGaussian, output_state
from .photon_stats import (
    Pmf,
    averaged_sensitivity,
    averaged_signal,
    cfi,
    enhancement,
    mean_d,
    photon_pmf,
    pmf_derivative,
    pmf_oracle,
    sensitivity,
    sensitivity_optimal,
    var_d,
)

__all__ = [
    "AdaptiveBoundInputs",
    "BayesianPhaseEstimator",
    "ConvergenceError",
    "CountData",
    "ExperimentConfig",
    "InsensitivePointError",
    "ModeGaussian",
    "ModelMismatchWarning",
    "MultimodalPosteriorWarning",
    "PhiPosterior",
    "Pmf",
    "PoissonRegimeWarning",
    "PosteriorUnderflowError",
    "ProtocolParams",
    "TwoModeGaussian",
    "TwoStepResult",
    "adaptive_bound",
    "averaged_sensitivity",
    "averaged_signal",
    "cfi",
    "enhancement",
    "mean_d",
    "optimal_fraction",
    "output_state",
    "photon_pmf",
    "pmf_derivative",
    "pmf_oracle",
    "point_estimate",
    "posterior_update",
    "qfi_numeric",
    "qfi_optimal",
    "qfi_phase_dependent",
    "qfi_sql",
    "sensitivity",
    "sensitivity_optimal",
    "simulate_counts",
    "two_step_run",
    "var_d",
]
