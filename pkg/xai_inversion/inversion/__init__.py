"""
Inversion attacks for XAI Inversion.

This module provides the five XAI input methods (prediction only, Flatten,
CNN, U-Net, Flatten+U-Net), breach simulation against an explainable target,
the breach store, reconstruction training and image inversion.
"""

from .architectures import explanation_inverter_spec, inversion_spec, stage_channels
from .breach import BreachBatch, BreachedTuple, BreachStore, check_provenance, simulate_breach
from .model import (
    InversionMethod,
    InversionModel,
    build_inversion_model,
    invert,
    invert_batch,
    load_inversion_model,
    prepare_explanations,
    save_inversion_model,
)
from .training import fit_inversion, reconstruction_loss, train_inversion

__all__ = [
    "BreachBatch",
    "BreachStore",
    "BreachedTuple",
    "InversionMethod",
    "InversionModel",
    "build_inversion_model",
    "check_provenance",
    "explanation_inverter_spec",
    "fit_inversion",
    "inversion_spec",
    "invert",
    "invert_batch",
    "load_inversion_model",
    "prepare_explanations",
    "reconstruction_loss",
    "save_inversion_model",
    "simulate_breach",
    "stage_channels",
    "train_inversion",
]
