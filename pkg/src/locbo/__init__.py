"""Bayesian optimisation with a GP surrogate calibrated by localized online conformal prediction."""

from .gp import GpModel, KernelParams, PredictiveNormal
from .conformal import ThresholdFunction, interval, locp_update
from .calibration import calibrated_likelihood, denoised_posterior
from .optimizer import BoConfig, Trace, run, simple_regret
from .problems import Problem, make_ackley2d, make_synthetic1d

__version__ = "0.1.0"

__all__ = [
    "BoConfig",
    "GpModel",
    "KernelParams",
    "PredictiveNormal",
    "Problem",
    "ThresholdFunction",
    "Trace",
    "calibrated_likelihood",
    "denoised_posterior",
    "interval",
    "locp_update",
    "make_ackley2d",
    "make_synthetic1d",
    "run",
    "simple_regret",
]
