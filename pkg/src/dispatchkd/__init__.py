"""Selective patch distillation over spectrograms."""

from .kernels import BACKEND
from .exceptions import (
    DispatchError,
    InvalidInputError,
    PatchGridError,
    TrainingDivergedError,
    WavFormatError,
)

__version__ = "0.1.0"
