"""Anytime image classification under a wall-clock budget.

Budgeted training with softmax annealing, a light augmentation-policy search,
and a challenge-style scoring program for time-weighted learning curves.
"""
from .errors import (
    AnytimeError,
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    OrderingError,
    ScoringError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "AnytimeError",
    "BACKEND",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "OrderingError",
    "ScoringError",
    "__version__",
]
