"""
Inversion models and reconstruction.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np
import torch

from ..core.checkpoint import load_checkpoint, save_checkpoint
from ..core.config import EXPLANATION_KINDS, MULTI_EXPLANATION_KINDS
from ..core.exceptions import MissingExplanationError, ShapeMismatchError, SpecValidationError
from ..core.io import PathLike
from ..core.tensors import iter_slices, to_images
from ..data.profiles import DatasetProfile, ImageTensor
from ..models.network import SpecNetwork
from ..models.spec import ModelSpec
from ..xai.maps import normalize_batch
from .architectures import BYPASS_METHODS, inversion_spec

logger = logging.getLogger("xai_inversion.inversion")

CHECKPOINT_KIND = "inversion"
OUTPUT_ACTIVATIONS = ("clamp", "sigmoid")


@dataclass(frozen=True)
class InversionMethod:
    """An XAI input method bound to its explanation kind and layer table.

    Attributes:
        name: prediction_only, flatten, cnn, unet or flatten_unet.
        explanation_kind: Explanation consumed (None for prediction_only).
        spec: Inversion ModelSpec.
    """

    name: str
    explanation_kind: Optional[str]
    spec: ModelSpec

    def __post_init__(self) -> None:
        if self.name == "prediction_only":
            if self.explanation_kind is not None or self.spec.explanation_shape is not None:
                raise SpecValidationError("prediction_only consumes no explanation")
        else:
            if self.explanation_kind is None or self.spec.explanation_shape is None:
                raise SpecValidationError(f"Method {self.name!r} requires an explanation")
            if self.explanation_kind not in EXPLANATION_KINDS + MULTI_EXPLANATION_KINDS:
                raise SpecValidationError(f"Unknown explanation kind {self.explanation_kind!r}")
        if self.name in BYPASS_METHODS and not any(layer.bypass_link for layer in self.spec.layers):
            raise SpecValidationError(f"Method {self.name!r} needs at least one bypass link")

    @property
    def run_id(self) -> str:
        """Run-matrix identifier, e.g. ``flatten_unet__grad_cam``."""
        return self.name if self.explanation_kind is None else f"{self.name}__{self.explanation_kind}"

    @classmethod
    def create(
        cls,
        name: str,
        image_shape,
        class_count: int,
        explanation_kind: Optional[str] = None,
        explanation_shape=None,
        width_scale: float = 1.0,
        max_flatten_features: int = 1024,
    ) -> "InversionMethod":
        """Generate the layer table for a method.

        Args:
            name: Input method.
            image_shape: (H, W, C) of the reconstruction.
            class_count: Prediction width.
            explanation_kind: Explanation consumed; ignored for prediction_only.
            explanation_shape: (H_e, W_e, D) of that explanation.
            width_scale: Multiplier for hidden widths.
            max_flatten_features: Projection threshold for flattened stacks.

        Returns:
            The method.
        """
        if name == "prediction_only":
            explanation_kind, explanation_shape = None, None
        spec = inversion_spec(
            name,
            tuple(image_shape),
            class_count,
            explanation_shape,
            width_scale=width_scale,
            max_flatten_features=max_flatten_features,
            name=name if explanation_kind is None else f"{name}__{explanation_kind}",
        )
        return cls(name, explanation_kind, spec)


class InversionModel(SpecNetwork):
    """Decoder network mapping (prediction, explanation) to an image.

    ``forward`` returns the training output: the raw decoder output for the
    ``clamp`` activation or its sigmoid. ``reconstruct`` clamps to [0, 1].
    """

    def __init__(self, method: InversionMethod, seed: int = 0, output_activation: str = "clamp"):
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise SpecValidationError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")
        super().__init__(method.spec, seed)
        self.method = method
        self.output_activation = output_activation

    @property
    def image_shape(self):
        return tuple(self.spec.input_shape)

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    @property
    def needs_explanation(self) -> bool:
        return self.spec.explanation_shape is not None

    def check_inputs(self, predictions: torch.Tensor, explanations: Optional[torch.Tensor]) -> None:
        """Validate prediction width and explanation shape.

        Raises:
            ShapeMismatchError: On a width or shape mismatch.
            MissingExplanationError: If a required explanation is absent.
        """
        if predictions.dim() != 2 or predictions.shape[1] != self.class_count:
            raise ShapeMismatchError(
                f"Model {self.spec.name!r} expects predictions of width {self.class_count}, "
                f"got shape {tuple(predictions.shape)}"
            )
        if not self.needs_explanation:
            return
        if explanations is None:
            logger.error(f"Model {self.spec.name!r} called without its {self.method.explanation_kind} explanation")
            raise MissingExplanationError(
                f"Method {self.method.name!r} requires a {self.method.explanation_kind} explanation"
            )
        h, w, d = self.spec.explanation_shape
        if tuple(explanations.shape[1:]) != (d, h, w) or len(explanations) != len(predictions):
            raise ShapeMismatchError(
                f"Model {self.spec.name!r} expects explanations of shape (N, {d}, {h}, {w}), "
                f"got {tuple(explanations.shape)}"
            )

    def forward(self, predictions: torch.Tensor, explanations: Optional[torch.Tensor] = None) -> torch.Tensor:
        inputs: Dict[str, torch.Tensor] = {"prediction": predictions}
        if self.needs_explanation:
            inputs["explanation"] = explanations
        out = self.run(inputs)[self.output_name()]
        if self.output_activation == "sigmoid":
            out = torch.sigmoid(out)
        return out

    def reconstruct(self, predictions: torch.Tensor, explanations: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Reconstructed NCHW images clamped to [0, 1]."""
        return self.forward(predictions, explanations).clamp(0.0, 1.0)


def build_inversion_model(
    method: InversionMethod, profile: Optional[DatasetProfile] = None, seed: int = 0, output_activation: str = "clamp"
) -> InversionModel:
    """Build an inversion model with deterministic initial parameters.

    Args:
        method: Input method and layer table.
        profile: Dataset profile the reconstructions must match; checked
            against the method's image shape when given.
        seed: Initialisation seed.
        output_activation: ``clamp`` or ``sigmoid``.

    Returns:
        The model in eval mode.

    Raises:
        SpecValidationError: If the decoder output differs from the profile's
            image shape.
    """
    if profile is not None and tuple(method.spec.input_shape) != tuple(profile.image_shape):
        raise SpecValidationError(
            f"Inversion spec {method.spec.name!r} reconstructs {tuple(method.spec.input_shape)} images, "
            f"profile {profile.name!r} has {tuple(profile.image_shape)}"
        )
    model = InversionModel(method, seed, output_activation)
    model.eval()
    logger.info(f"Built inversion model {method.run_id!r} ({model.parameter_count():,} parameters, seed {seed})")
    return model


def prepare_explanations(explanations: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Per-artifact min-max normalisation of raw (N, D, H, W) explanations."""
    if explanations is None:
        return None
    return normalize_batch(np.asarray(explanations, dtype=np.float32))


def invert_batch(
    model: InversionModel,
    predictions: np.ndarray,
    explanations: Optional[np.ndarray] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Reconstruct images for a batch of breached tuples.

    Args:
        model: Trained inversion model.
        predictions: (N, |C|) prediction vectors.
        explanations: Raw (N, D, H_e, W_e) explanations; ignored by
            prediction_only models.
        batch_size: Tuples per forward pass.

    Returns:
        (N, H, W, C) float32 reconstructions in [0, 1].

    Raises:
        MissingExplanationError: If the model needs an explanation and none is given.
        ShapeMismatchError: On input shape mismatches.
    """
    device = next(model.parameters()).device
    preds = torch.as_tensor(np.asarray(predictions, dtype=np.float32))
    expl = None
    if model.needs_explanation:
        prepared = prepare_explanations(explanations)
        expl = torch.from_numpy(prepared) if prepared is not None else None
    model.check_inputs(preds, expl)
    h, w, c = model.image_shape
    parts = []
    model.eval()
    with torch.no_grad():
        for part in iter_slices(len(preds), batch_size):
            batch_expl = expl[part].to(device) if expl is not None else None
            parts.append(to_images(model.reconstruct(preds[part].to(device), batch_expl)))
    return np.concatenate(parts) if parts else np.zeros((0, h, w, c), dtype=np.float32)


def invert(model: InversionModel, breached: Any) -> ImageTensor:
    """Reconstruct the private image behind one breached tuple.

    Args:
        model: Trained inversion model.
        breached: A ``BreachedTuple``.

    Returns:
        The reconstruction.
    """
    explanation = None
    if model.needs_explanation:
        explanation = breached.explanation(model.method.explanation_kind)[None]
    prediction = np.asarray(breached.prediction.confidences)[None]
    return ImageTensor(invert_batch(model, prediction, explanation)[0])


def save_inversion_model(model: InversionModel, path: PathLike, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    """Write an inversion checkpoint."""
    meta = {
        "seed": model.seed,
        "method": model.method.name,
        "explanation_kind": model.method.explanation_kind,
        "output_activation": model.output_activation,
        **(metadata or {}),
    }
    return save_checkpoint(path, CHECKPOINT_KIND, model.spec.to_dict(), model.state_dict(), meta)


def load_inversion_model(path: PathLike) -> InversionModel:
    """Rebuild an inversion model from a checkpoint."""
    payload = load_checkpoint(path, kind=CHECKPOINT_KIND)
    meta = payload["metadata"]
    method = InversionMethod(meta["method"], meta.get("explanation_kind"), ModelSpec.from_dict(payload["spec"]))
    model = InversionModel(method, seed=int(meta.get("seed", 0)), output_activation=meta.get("output_activation", "clamp"))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
