"""Unified single-/multi-channel acoustic model built on numpy."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (
    CheckpointError,
    ConfigError,
    DataIOError,
    DegenerateInputError,
    InvalidInputError,
    NumericalError,
    PartitionMissingError,
    UasrError,
)

__version__ = "0.1.0"
