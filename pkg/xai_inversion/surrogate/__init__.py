"""
Attention transfer for XAI Inversion.

This module provides the surrogate attack on non-explainable targets: an
explainable surrogate target, the explanation inverter reconstructing its
Grad-CAM from target predictions, and the composed image inversion.
"""

from .transfer import (
    SURROGATE_MODES,
    SurrogateBundle,
    SurrogateTrainer,
    attack_nonexplainable,
    attack_nonexplainable_batch,
    check_attacker_indices,
    evaluation_cams,
    invert_with_bundle,
    load_bundle,
    reconstruct_cams,
    reconstruct_surrogate_explanation,
    save_bundle,
    surrogate_cams,
    train_explanation_inverter,
    train_surrogate_target,
)

__all__ = [
    "SURROGATE_MODES",
    "SurrogateBundle",
    "SurrogateTrainer",
    "attack_nonexplainable",
    "attack_nonexplainable_batch",
    "check_attacker_indices",
    "evaluation_cams",
    "invert_with_bundle",
    "load_bundle",
    "reconstruct_cams",
    "reconstruct_surrogate_explanation",
    "save_bundle",
    "surrogate_cams",
    "train_explanation_inverter",
    "train_surrogate_target",
]
