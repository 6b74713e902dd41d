"""
Explanation engine for XAI Inversion.

Gradient, Gradient x Input, Grad-CAM and LRP saliency maps, the Sigma-CAM
and partial-CAM stacks, and the black-box target API that serves them.
"""

from .api import ExplainableTargetAPI, TargetResponse, explain_batch, explanation_shape, render_heatmap
from .maps import (
    ExplanationMap,
    ExplanationStack,
    compose_cam,
    normalize_batch,
    normalize_explanation,
)
from .methods import (
    grad_cam,
    gradient_input_map,
    gradient_map,
    lrp_map,
    partial_cams,
    sigma_cam,
)

__all__ = [
    "ExplainableTargetAPI",
    "ExplanationMap",
    "ExplanationStack",
    "TargetResponse",
    "compose_cam",
    "explain_batch",
    "explanation_shape",
    "grad_cam",
    "gradient_input_map",
    "gradient_map",
    "lrp_map",
    "normalize_batch",
    "normalize_explanation",
    "partial_cams",
    "render_heatmap",
    "sigma_cam",
]
