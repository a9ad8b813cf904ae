"""Inertial navigation toolkit: IMU kinematics, classical baselines, an attention-based
velocity network with uncertainty, and trajectory-error metrics."""

from .errors import ConfigError, CtinError, DataError, DivergenceError, FormatError

__version__ = "0.1.0"

__all__ = ["ConfigError", "CtinError", "DataError", "DivergenceError", "FormatError", "__version__"]
