"""
Classifiers: target model, surrogate target and attack-evaluation model.

All three share the same building blocks: a ``SpecNetwork`` with ReLU after
every conv and hidden fc layer and logits at the output. ``predict`` applies
the softmax.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..core.checkpoint import load_checkpoint, save_checkpoint
from ..core.config import TrainingConfig
from ..core.exceptions import DatasetValidationError, ShapeMismatchError, SpecValidationError
from ..core.io import PathLike
from ..core.tensors import iter_slices, to_batch
from ..data.profiles import ImageTensor
from .network import SpecNetwork
from .spec import ModelSpec
from .training import TrainingLog, fit

logger = logging.getLogger("xai_inversion.models")

CHECKPOINT_KIND = "classifier"


@dataclass(frozen=True)
class PredictionVector:
    """Class-confidence vector of one prediction.

    Attributes:
        confidences: Non-negative float vector of length |C| summing to 1.
    """

    confidences: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.confidences, dtype=np.float64).reshape(-1)
        if len(values) < 1 or (values < 0).any() or abs(values.sum() - 1.0) > 1e-5:
            raise DatasetValidationError("PredictionVector entries must be >= 0 and sum to 1")
        object.__setattr__(self, "confidences", values)

    def __len__(self) -> int:
        return len(self.confidences)

    @property
    def label(self) -> int:
        """Most confident class (lowest index on ties)."""
        return int(np.argmax(self.confidences))

    @property
    def confidence(self) -> float:
        return float(self.confidences[self.label])


class ClassifierTrace(NamedTuple):
    """Forward-pass values explanation methods need."""

    logits: torch.Tensor
    activation: torch.Tensor
    embedding: torch.Tensor


class Classifier(SpecNetwork):
    """Image classifier built from a classifier ``ModelSpec``."""

    def __init__(self, spec: ModelSpec, seed: int = 0):
        if spec.role != "classifier":
            raise SpecValidationError(f"Spec {spec.name!r} is not a classifier spec")
        super().__init__(spec, seed)

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.spec.input_shape)

    @property
    def class_count(self) -> int:
        return self.spec.class_count

    @property
    def last_conv(self) -> Optional[str]:
        """Name of the last conv layer, if any."""
        convs = self.spec.conv_layers
        return convs[-1].name if convs else None

    @property
    def penultimate(self) -> str:
        """Name of the fully connected layer feeding the output layer."""
        if len(self.spec.layers) < 2 or self.spec.layers[-2].kind != "fc":
            raise SpecValidationError(f"Spec {self.spec.name!r} has no penultimate fc layer")
        return self.spec.layers[-2].name

    def check_input(self, batch: torch.Tensor) -> None:
        h, w, c = self.input_shape
        if tuple(batch.shape[1:]) != (c, h, w):
            got = tuple(batch.shape[2:]) + (batch.shape[1],)
            raise ShapeMismatchError(f"Model {self.spec.name!r} expects images of shape {self.input_shape}, got {got}")

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Logits for an NCHW batch."""
        return self.run({"image": images})[self.output_name()]

    def trace(self, images: torch.Tensor) -> ClassifierTrace:
        """Logits, last-conv activation (post-ReLU, pre-pool) and embedding."""
        outputs = self.run({"image": images})
        activation = outputs[self.last_conv] if self.last_conv else None
        return ClassifierTrace(outputs[self.output_name()], activation, outputs[self.penultimate])


def build_classifier(spec: ModelSpec, seed: int) -> Classifier:
    """Build a classifier with deterministic initial parameters.

    Args:
        spec: Classifier spec.
        seed: Initialisation seed.

    Returns:
        The classifier in eval mode.

    Raises:
        SpecValidationError: If the spec is inconsistent.
    """
    model = Classifier(spec, seed)
    model.eval()
    logger.info(f"Built classifier {spec.name!r} ({model.parameter_count():,} parameters, seed {seed})")
    return model


def _device_of(model: torch.nn.Module) -> torch.device:
    return next(model.parameters()).device


def predict_batch(model: Classifier, images: Any, batch_size: int = 256) -> np.ndarray:
    """Softmax confidences for a stack of (N, H, W, C) images."""
    probabilities = []
    array = np.asarray(images, dtype=np.float32) if not isinstance(images, torch.Tensor) else images
    with torch.no_grad():
        for part in iter_slices(len(array), batch_size):
            batch = to_batch(array[part], _device_of(model))
            model.check_input(batch)
            probabilities.append(F.softmax(model(batch).double(), dim=1).cpu().numpy())
    if not probabilities:
        return np.zeros((0, model.class_count))
    return np.concatenate(probabilities)


def predict(model: Classifier, image: ImageTensor) -> PredictionVector:
    """Softmax prediction for one image.

    Raises:
        ShapeMismatchError: If the image shape differs from the model input.
    """
    pixels = image.pixels if isinstance(image, ImageTensor) else np.asarray(image)
    if pixels.ndim != 3:
        raise ShapeMismatchError(f"Expected one (H, W, C) image, got shape {pixels.shape}")
    return PredictionVector(predict_batch(model, pixels[None])[0])


def embed_batch(model: Classifier, images: Any, batch_size: int = 256) -> np.ndarray:
    """Penultimate-layer activations for a stack of images."""
    embeddings = []
    array = np.asarray(images, dtype=np.float32) if not isinstance(images, torch.Tensor) else images
    with torch.no_grad():
        for part in iter_slices(len(array), batch_size):
            batch = to_batch(array[part], _device_of(model))
            model.check_input(batch)
            embeddings.append(model.trace(batch).embedding.double().cpu().numpy())
    return np.concatenate(embeddings) if embeddings else np.zeros((0, 0))


def embed(model: Classifier, image: ImageTensor) -> np.ndarray:
    """Penultimate-layer feature vector of one image."""
    pixels = image.pixels if isinstance(image, ImageTensor) else np.asarray(image)
    if pixels.ndim != 3:
        raise ShapeMismatchError(f"Expected one (H, W, C) image, got shape {pixels.shape}")
    return embed_batch(model, pixels[None])[0]


def accuracy(model: Classifier, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    """Fraction of images whose argmax prediction equals the label."""
    if len(images) == 0:
        return float("nan")
    predicted = predict_batch(model, images, batch_size).argmax(axis=1)
    return float((predicted == np.asarray(labels)).mean())


def train_classifier(
    model: Classifier,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainingConfig,
    held_out: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    desc: str = "classifier",
) -> Tuple[Classifier, TrainingLog]:
    """Train a classifier with cross-entropy and ADAM.

    Args:
        model: Classifier to train in place.
        images: (N, H, W, C) training images.
        labels: Training labels in [0, |C|).
        cfg: Training configuration.
        held_out: Optional (images, labels) evaluated after every epoch.
        desc: Progress and log label.

    Returns:
        The trained model and its training log.

    Raises:
        DatasetValidationError: If a label is out of range.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) and (labels.min() < 0 or labels.max() >= model.class_count):
        raise DatasetValidationError(f"Labels must lie in [0, {model.class_count})")
    device = _device_of(model)
    batch = to_batch(np.asarray(images, dtype=np.float32))
    model.check_input(batch)
    targets = torch.from_numpy(labels)

    def loss_fn(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return F.cross_entropy(model(x), y)

    validate = None
    if held_out is not None:
        held_images, held_labels = held_out

        def validate() -> Dict[str, float]:
            return {"accuracy": accuracy(model, held_images, held_labels)}

    log = fit(model, (batch, targets), loss_fn, cfg, validate=validate, desc=desc, device=str(device))
    return model, log


def save_classifier(model: Classifier, path: PathLike, metadata: Optional[Mapping[str, Any]] = None) -> Path:
    """Write a classifier checkpoint."""
    return save_checkpoint(
        path, CHECKPOINT_KIND, model.spec.to_dict(), model.state_dict(), {"seed": model.seed, **(metadata or {})}
    )


def load_classifier(path: PathLike) -> Classifier:
    """Rebuild a classifier from a checkpoint."""
    payload = load_checkpoint(path, kind=CHECKPOINT_KIND)
    model = Classifier(ModelSpec.from_dict(payload["spec"]), seed=int(payload["metadata"].get("seed", 0)))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
