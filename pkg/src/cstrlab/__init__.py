"""Desk-scale scene text recognition lab.

A character-classification recognizer (convolutional backbone with
attention-assisted downsampling, three decoupled prediction heads, CE and
CTC objectives) built on a small numpy-backed reverse-mode autodiff
engine, plus a synthetic bitmap-text data pipeline and training harness.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    CstrError,
    DataError,
    DtypeError,
    GraphError,
    NonFiniteGradientError,
    ShapeError,
)
from .tensor import ParameterStore, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "CstrError",
    "DataError",
    "DtypeError",
    "GraphError",
    "NonFiniteGradientError",
    "ParameterStore",
    "ShapeError",
    "Tape",
    "Tensor",
    "__version__",
]
