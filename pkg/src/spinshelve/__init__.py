"""Rate-equation simulation of optically detected spin shelving.

Subpackages and modules:

* :mod:`spinshelve.model` - level scheme, rate matrix, steady states, calibration
* :mod:`spinshelve.kinetics` - time propagation under laser and MW control
* :mod:`spinshelve.pulseseq` - pulse-sequence language and timeline compiler
* :mod:`spinshelve.detector` - photon-counting histograms and derived metrics
* :mod:`spinshelve.fitting` - analytic models and a Levenberg-Marquardt engine
* :mod:`spinshelve.experiments` - the measurement protocols end to end
"""
from .config import ExperimentConfig, available_presets, default_config, load_config
from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateSteadyStateError,
    NotReachedError,
    ParameterError,
    PositivityError,
    SpinShelveError,
)
from .model import (
    LEVELS,
    CalibrationTargets,
    Populations,
    RateParams,
    calibrate_rates,
    rate_matrix,
    steady_state,
)

__version__ = "0.1.0"

__all__ = [
    "LEVELS", "CalibrationError", "CalibrationTargets", "ConfigError", "DegenerateSteadyStateError",
    "ExperimentConfig", "NotReachedError", "ParameterError", "Populations", "PositivityError",
    "RateParams", "SpinShelveError", "available_presets", "calibrate_rates", "default_config",
    "load_config", "rate_matrix", "steady_state",
]
