"""Diffusion-model denoisers that reduce to the conditional mean estimator.

A GMM prior gives closed-form posterior means at every diffusion step, so
the reverse chain can be run with an exact oracle and compared against the
closed-form conditional mean of the observation.
"""

__version__ = "0.1.0"

from .diffusion import (Observation, OracleDenoiser, StepwiseDenoiser, deterministic_denoise,
                        stochastic_reverse)
from .errors import ConfigError, NumericError, ParameterError
from .gmm import Gmm, cme, normalize_gmm, random_gmm
from .schedule import NoiseSchedule, build_linear_schedule, match_timestep, reference_schedule

__all__ = [
    "__version__", "ConfigError", "Gmm", "NoiseSchedule", "NumericError", "Observation",
    "OracleDenoiser", "ParameterError", "StepwiseDenoiser", "build_linear_schedule", "cme",
    "deterministic_denoise", "match_timestep", "normalize_gmm", "random_gmm", "stochastic_reverse",
    "reference_schedule",
]
