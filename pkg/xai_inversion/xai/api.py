"""
Batched explanation API and the black-box target it backs.

``ExplainableTargetAPI`` is what the attacker talks to: it answers image
queries with prediction vectors and, when configured with an explanation
kind, the explanation of the predicted class.
"""

import logging
from pathlib import Path
from typing import Any, NamedTuple, Optional

import matplotlib
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from ..core.config import EXPLANATION_KINDS, MULTI_EXPLANATION_KINDS
from ..core.exceptions import UnsupportedExplanationError
from ..core.io import PathLike
from ..core.tensors import iter_slices, to_batch
from ..models.classifier import Classifier
from .maps import normalize_explanation
from .methods import (
    grad_cam_maps,
    gradient_input_maps,
    gradient_maps,
    lrp_maps,
    partial_cam_maps,
    sigma_cam_maps,
)

logger = logging.getLogger("xai_inversion.xai")

ALL_KINDS = EXPLANATION_KINDS + MULTI_EXPLANATION_KINDS


def explanation_shape(model: Classifier, kind: str) -> tuple:
    """(H_e, W_e, D) of the explanations ``kind`` produces for ``model``."""
    h, w, _ = model.input_shape
    if kind in ("gradient", "grad_input", "lrp"):
        return (h, w, 1)
    if model.last_conv is None:
        raise UnsupportedExplanationError(f"{kind} needs a conv layer; model {model.spec.name!r} has none")
    ch, cw, kernels = model.shapes[model.last_conv]
    if kind == "grad_cam":
        return (ch, cw, 1)
    if kind == "sigma_cam":
        return (ch, cw, model.class_count)
    if kind == "partial_cam":
        return (ch, cw, kernels)
    raise UnsupportedExplanationError(f"Unknown explanation kind {kind!r}; choose one of {ALL_KINDS}")


def _explain(model: Classifier, batch: torch.Tensor, kind: str, classes: torch.Tensor) -> torch.Tensor:
    if kind == "gradient":
        return gradient_maps(model, batch, classes)[:, None]
    if kind == "grad_input":
        return gradient_input_maps(model, batch, classes)[:, None]
    if kind == "grad_cam":
        return grad_cam_maps(model, batch, classes)[:, None]
    if kind == "lrp":
        return lrp_maps(model, batch, classes)[:, None]
    if kind == "sigma_cam":
        return sigma_cam_maps(model, batch)
    if kind == "partial_cam":
        return partial_cam_maps(model, batch, classes)
    raise UnsupportedExplanationError(f"Unknown explanation kind {kind!r}; choose one of {ALL_KINDS}")


def explain_batch(
    model: Classifier,
    images: Any,
    kind: str,
    classes: Optional[Any] = None,
    batch_size: int = 64,
) -> np.ndarray:
    """Compute raw (unnormalised) explanations for a stack of images.

    Args:
        model: Classifier to explain.
        images: (N, H, W, C) images.
        kind: Any single or multi explanation kind.
        classes: Class per image; defaults to the predicted class.
        batch_size: Images per autograd pass.

    Returns:
        float32 array of shape (N, D, H_e, W_e); D is 1 for single maps.
    """
    explanation_shape(model, kind)
    array = np.asarray(images, dtype=np.float32)
    device = next(model.parameters()).device
    if classes is None:
        with torch.no_grad():
            classes = np.concatenate(
                [model(to_batch(array[part], device)).argmax(dim=1).cpu().numpy() for part in iter_slices(len(array), batch_size)]
            ) if len(array) else np.zeros(0, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    parts = []
    for part in iter_slices(len(array), batch_size):
        batch = to_batch(array[part], device)
        model.check_input(batch)
        parts.append(_explain(model, batch, kind, torch.as_tensor(classes[part], device=device)).float().cpu().numpy())
    if not parts:
        h, w, d = explanation_shape(model, kind)
        return np.zeros((0, d, h, w), dtype=np.float32)
    return np.concatenate(parts)


class TargetResponse(NamedTuple):
    """Answer of the target API to a batch of queries.

    Attributes:
        predictions: (N, |C|) softmax confidences.
        explained_classes: (N,) argmax of each prediction.
        explanations: (N, D, H_e, W_e) raw explanations, or None.
    """

    predictions: np.ndarray
    explained_classes: np.ndarray
    explanations: Optional[np.ndarray]


class ExplainableTargetAPI:
    """Black-box access to a deployed target model.

    With ``explanation_kind=None`` the target is non-explainable and only
    prediction vectors are returned.
    """

    def __init__(self, model: Classifier, explanation_kind: Optional[str] = None, batch_size: int = 64):
        """Initialize the target API.

        Args:
            model: Trained target classifier.
            explanation_kind: Explanation returned with each prediction.
            batch_size: Images per forward/backward pass.
        """
        if explanation_kind is not None:
            explanation_shape(model, explanation_kind)
        self.model = model
        self.explanation_kind = explanation_kind
        self.batch_size = batch_size
        self.queries = 0

    @property
    def explainable(self) -> bool:
        return self.explanation_kind is not None

    def query(self, images: Any) -> TargetResponse:
        """Answer queries for a stack of (N, H, W, C) images."""
        array = np.asarray(images, dtype=np.float32)
        device = next(self.model.parameters()).device
        predictions = []
        with torch.no_grad():
            for part in iter_slices(len(array), self.batch_size):
                batch = to_batch(array[part], device)
                self.model.check_input(batch)
                predictions.append(F.softmax(self.model(batch).double(), dim=1).cpu().numpy())
        predictions_array = (
            np.concatenate(predictions) if predictions else np.zeros((0, self.model.class_count))
        )
        classes = predictions_array.argmax(axis=1).astype(np.int64)
        explanations = None
        if self.explainable:
            explanations = explain_batch(self.model, array, self.explanation_kind, classes, self.batch_size)
        self.queries += len(array)
        return TargetResponse(predictions_array, classes, explanations)


def render_heatmap(values: np.ndarray, path: PathLike, cmap: str = "jet", size: Optional[int] = None) -> Path:
    """Write a 2D map as an 8-bit RGB PNG heatmap.

    Args:
        values: 2D map (normalised internally).
        path: Destination PNG.
        cmap: Matplotlib colormap name.
        size: Optional output side length (nearest-neighbour upscaling).

    Returns:
        The written path.
    """
    grid = normalize_explanation(np.asarray(values, dtype=np.float32))
    if grid.ndim != 2:
        raise ValueError(f"render_heatmap needs a 2D map, got shape {grid.shape}")
    rgba = matplotlib.colormaps[cmap](grid)
    image = Image.fromarray((rgba[..., :3] * 255).round().astype(np.uint8), mode="RGB")
    if size is not None:
        image = image.resize((size, size), Image.NEAREST)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path)
    return path
