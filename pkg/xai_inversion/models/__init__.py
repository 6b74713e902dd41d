"""
Model zoo for XAI Inversion.

This module provides declarative layer specs, the spec-driven torch network,
the classifiers used as target, surrogate and attack-evaluation models, and
the shared training loop.
"""

from .classifier import (
    Classifier,
    ClassifierTrace,
    PredictionVector,
    accuracy,
    build_classifier,
    embed,
    embed_batch,
    load_classifier,
    predict,
    predict_batch,
    save_classifier,
    train_classifier,
)
from .network import SpecNetwork
from .spec import LayerSpec, ModelSpec, infer_shapes
from .training import EpochRecord, TrainingLog, fit
from .zoo import evaluation_spec, target_spec

__all__ = [
    "Classifier",
    "ClassifierTrace",
    "EpochRecord",
    "LayerSpec",
    "ModelSpec",
    "PredictionVector",
    "SpecNetwork",
    "TrainingLog",
    "accuracy",
    "build_classifier",
    "embed",
    "embed_batch",
    "evaluation_spec",
    "fit",
    "infer_shapes",
    "load_classifier",
    "predict",
    "predict_batch",
    "save_classifier",
    "target_spec",
    "train_classifier",
]
