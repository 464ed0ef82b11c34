"""Diversity-controlled ensembles trained with the Amended Cross Entropy loss."""
from .errors import (AceError, ConfigError, DimensionError, IdxParseError,
                     InvalidInputError, InvalidStateError, NumericError)
from .losses import AceCoefficients, NclCoefficients
from .models import MlpParams, MlpSpec, Optimizer
from .numerics import SeededRng

__version__ = "0.1.0"

__all__ = [
    "AceError", "ConfigError", "DimensionError", "IdxParseError", "InvalidInputError",
    "InvalidStateError", "NumericError", "AceCoefficients", "NclCoefficients",
    "MlpParams", "MlpSpec", "Optimizer", "SeededRng", "__version__",
]
