"""Noise avalanche and its quenching in bosonic chains with random couplings."""

__version__ = "0.1.0"

from .errors import ChainError, NumericalError, SlowConvergenceWarning, ValidationError
from .model import ChainSpec, InitialState, TimeGrid, validate

__all__ = [
    "__version__",
    "ChainError",
    "ChainSpec",
    "InitialState",
    "NumericalError",
    "SlowConvergenceWarning",
    "TimeGrid",
    "ValidationError",
    "validate",
]
