"""
Core functionality for XAI Inversion.

This module provides the foundations used throughout the package:
configuration, the exception hierarchy, logging and seeding helpers,
checkpoint containers and tensor conversions.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    EXPLANATION_KINDS,
    INVERSION_METHODS,
    MULTI_EXPLANATION_KINDS,
    ExperimentConfig,
    TrainingConfig,
    load_config,
)
from .exceptions import XAIInversionError
from .logging import configure_logging
from .seeding import seed_everything
from .tensors import to_batch, to_images

__all__ = [
    "EXPLANATION_KINDS",
    "INVERSION_METHODS",
    "MULTI_EXPLANATION_KINDS",
    "ExperimentConfig",
    "TrainingConfig",
    "XAIInversionError",
    "configure_logging",
    "load_checkpoint",
    "load_config",
    "save_checkpoint",
    "seed_everything",
    "to_batch",
    "to_images",
]
