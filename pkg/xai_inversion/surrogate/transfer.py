"""
Attention transfer against non-explainable targets.

The attacker trains an explainable surrogate of the target on its own data,
learns to predict the surrogate's Grad-CAM (s-CAM) from the target's
prediction alone (the reconstruction is the rs-CAM), and feeds rs-CAMs into
an image inversion model. Training runs in three ordered stages.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from ..core.config import TrainingConfig
from ..core.exceptions import ConfigurationError, ProvenanceError, SpecValidationError, StageOrderError
from ..core.io import PathLike, read_json, write_json_once
from ..data.profiles import ImageTensor
from ..data.splits import SplitPlan, carve_validation
from ..inversion.architectures import explanation_inverter_spec
from ..inversion.breach import BreachBatch
from ..inversion.model import (
    InversionMethod,
    InversionModel,
    build_inversion_model,
    invert_batch,
    load_inversion_model,
    save_inversion_model,
)
from ..inversion.training import fit_inversion
from ..models.classifier import Classifier, build_classifier, load_classifier, save_classifier, train_classifier
from ..models.spec import ModelSpec
from ..models.training import TrainingLog
from ..xai.api import explain_batch, explanation_shape
from ..xai.maps import ExplanationMap, normalize_batch

logger = logging.getLogger("xai_inversion.surrogate")

SURROGATE_MODES = ("rs_cam", "s_cam")
EXPLANATION_KIND = "grad_cam"
STAGES = ("surrogate_target", "explanation_inverter", "image_inverter")


def check_attacker_indices(indices: np.ndarray, plan: SplitPlan) -> None:
    """Ensure the attacker trains on attack-train records only.

    Raises:
        ProvenanceError: If any index lies in the target or attack-test split.
    """
    indices = np.asarray(indices, dtype=np.int64)
    outside = ~np.isin(indices, plan.attack_train_indices)
    if outside.any():
        leaked = sorted({plan.partition_of(int(i)) for i in indices[outside][:50]})
        logger.error(f"Surrogate data includes {int(outside.sum())} records from {leaked}")
        raise ProvenanceError(f"Surrogate training data includes {int(outside.sum())} records from {leaked}")


def train_surrogate_target(
    spec: ModelSpec,
    images: np.ndarray,
    labels: np.ndarray,
    indices: np.ndarray,
    cfg: TrainingConfig,
    plan: Optional[SplitPlan] = None,
    held_out_fraction: float = 0.1,
) -> Tuple[Classifier, TrainingLog]:
    """Train the explainable surrogate target on attacker data.

    Args:
        spec: Classifier spec (by default the target's own).
        images: Full (N, H, W, C) image array.
        labels: Target-task labels aligned with ``images``.
        indices: Records the attacker owns.
        cfg: Training configuration; ``cfg.seed`` also seeds initialisation.
        plan: Split plan checked for provenance when given.
        held_out_fraction: Share of ``indices`` used for held-out accuracy.

    Returns:
        The surrogate and its training log.

    Raises:
        ProvenanceError: If ``indices`` leave the attack-train split.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if plan is not None:
        check_attacker_indices(indices, plan)
    train, held = carve_validation(indices, held_out_fraction, cfg.seed)
    model = build_classifier(spec, cfg.seed)
    held_out = (images[held], labels[held]) if len(held) else None
    return train_classifier(model, images[train], labels[train], cfg, held_out=held_out, desc="surrogate_target")


def surrogate_cams(surrogate: Classifier, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Raw s-CAMs (N, 1, h, w) of the surrogate's predicted classes."""
    return explain_batch(surrogate, images, EXPLANATION_KIND, batch_size=batch_size)


def train_explanation_inverter(
    predictions: np.ndarray,
    cams: np.ndarray,
    cfg: TrainingConfig,
    width_scale: float = 1.0,
    validation_fraction: float = 0.1,
    output_activation: str = "clamp",
) -> Tuple[InversionModel, TrainingLog]:
    """Train the model predicting s-CAMs from target predictions.

    Args:
        predictions: (N, |C|) prediction vectors from the true target.
        cams: Raw (N, 1, h, w) s-CAMs of the same images; normalised here.
        cfg: Training configuration; ``cfg.seed`` also seeds initialisation.
        width_scale: Multiplier for hidden widths.
        validation_fraction: Held-out share for validation logging.
        output_activation: ``clamp`` or ``sigmoid``.

    Returns:
        The explanation inverter and its log.
    """
    cams = np.asarray(cams, dtype=np.float32)
    if cams.ndim == 3:
        cams = cams[:, None]
    targets = normalize_batch(cams).transpose(0, 2, 3, 1)
    _, _, h, w = cams.shape
    spec = explanation_inverter_spec((h, w), predictions.shape[1], width_scale)
    model = build_inversion_model(InversionMethod("prediction_only", None, spec), seed=cfg.seed,
                                  output_activation=output_activation)
    return fit_inversion(model, predictions, None, targets, cfg, validation_fraction, desc="explanation_inverter")


def reconstruct_cams(inverter: InversionModel, predictions: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """rs-CAMs (N, 1, h, w), non-negative, for a batch of predictions."""
    return invert_batch(inverter, predictions, batch_size=batch_size).transpose(0, 3, 1, 2)


@dataclass
class SurrogateBundle:
    """The three trained stages of the attention-transfer attack.

    Attributes:
        surrogate_target: Explainable surrogate of the target.
        explanation_inverter: Prediction to rs-CAM model.
        image_inverter: (prediction, CAM) to image model.
        mode: Explanation the image inverter trained on (rs_cam or s_cam).
        explanation_kind: Always grad_cam.
        provenance: Data hashes recorded at training time.
    """

    surrogate_target: Classifier
    explanation_inverter: InversionModel
    image_inverter: InversionModel
    mode: str = "rs_cam"
    explanation_kind: str = EXPLANATION_KIND
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        h, w, _ = explanation_shape(self.surrogate_target, self.explanation_kind)
        if tuple(self.explanation_inverter.image_shape) != (h, w, 1):
            raise SpecValidationError(
                f"Explanation inverter outputs {self.explanation_inverter.image_shape}, surrogate CAMs are {(h, w, 1)}"
            )
        if tuple(self.image_inverter.spec.explanation_shape or ()) != (h, w, 1):
            raise SpecValidationError(
                f"Image inverter consumes {self.image_inverter.spec.explanation_shape}, surrogate CAMs are {(h, w, 1)}"
            )
        if self.mode not in SURROGATE_MODES:
            raise SpecValidationError(f"Unknown surrogate mode {self.mode!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "explanation_kind": self.explanation_kind,
            "surrogate_target": self.surrogate_target.spec.name,
            "explanation_inverter": self.explanation_inverter.spec.name,
            "image_inverter": self.image_inverter.spec.name,
            "provenance": dict(self.provenance),
        }


def reconstruct_surrogate_explanation(bundle: SurrogateBundle, prediction: Any) -> ExplanationMap:
    """rs-CAM for one prediction vector."""
    confidences = np.asarray(getattr(prediction, "confidences", prediction), dtype=np.float64)
    cam = reconstruct_cams(bundle.explanation_inverter, confidences[None])[0, 0]
    return ExplanationMap(
        cam, EXPLANATION_KIND, int(confidences.argmax()), source_layer=bundle.surrogate_target.last_conv
    )


def attack_nonexplainable_batch(bundle: SurrogateBundle, predictions: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Reconstruct (N, H, W, C) images from predictions alone."""
    cams = reconstruct_cams(bundle.explanation_inverter, predictions, batch_size)
    return invert_batch(bundle.image_inverter, predictions, cams, batch_size)


def attack_nonexplainable(bundle: SurrogateBundle, prediction: Any) -> ImageTensor:
    """Reconstruct one image from a non-explainable target's prediction."""
    confidences = np.asarray(getattr(prediction, "confidences", prediction), dtype=np.float64)
    return ImageTensor(attack_nonexplainable_batch(bundle, confidences[None])[0])


def evaluation_cams(
    bundle: SurrogateBundle,
    predictions: np.ndarray,
    images: Optional[np.ndarray] = None,
    batch_size: int = 256,
) -> Tuple[str, np.ndarray]:
    """CAMs fed to a bundle's image inverter when it is scored.

    An rs_cam bundle is scored on the attack itself, with CAMs reconstructed
    from the predictions. An s_cam bundle is the upper bound: its inverter
    gets the surrogate's own CAMs of the queried images, which a real
    attacker never observes.

    Args:
        bundle: Trained surrogate bundle.
        predictions: (N, |C|) target predictions.
        images: (N, H, W, C) queried images; required in s_cam mode.
        batch_size: Inference batch size.

    Returns:
        The fed explanation (``rs_cam`` or ``s_cam``) and the (N, 1, h, w) CAMs.

    Raises:
        ConfigurationError: If an s_cam bundle is scored without ``images``.
    """
    if bundle.mode == "rs_cam":
        return "rs_cam", reconstruct_cams(bundle.explanation_inverter, predictions, batch_size)
    if images is None:
        logger.error("Scoring an s_cam bundle needs the queried images")
        raise ConfigurationError("Scoring an s_cam bundle needs the queried images")
    images = np.asarray(images)
    if len(images) != len(predictions):
        raise SpecValidationError(f"{len(images)} images for {len(predictions)} predictions")
    return "s_cam", surrogate_cams(bundle.surrogate_target, images, min(batch_size, 64))


def invert_with_bundle(
    bundle: SurrogateBundle,
    predictions: np.ndarray,
    images: Optional[np.ndarray] = None,
    batch_size: int = 256,
) -> Tuple[np.ndarray, str]:
    """Reconstructions of a bundle's comparison row and the explanation it was fed."""
    fed, cams = evaluation_cams(bundle, predictions, images, batch_size)
    logger.debug(f"Scoring surrogate bundle ({bundle.mode}) on {fed} inputs")
    return invert_batch(bundle.image_inverter, predictions, cams, batch_size), fed


class SurrogateTrainer:
    """Staged builder for a ``SurrogateBundle``.

    Stages must run in order: ``fit_surrogate_target``,
    ``fit_explanation_inverter``, ``fit_image_inverter``.

    Args:
        breach: Target predictions on the attacker's training images.
        images: Full (N, H, W, C) image array indexed by source index.
        labels: Target-task labels aligned with ``images``.
        surrogate_spec: Classifier spec of the surrogate.
        method: Image inverter input method.
        mode: rs_cam or s_cam (explanation the image inverter trains on).
        training: TrainingConfig per stage name.
        plan: Split plan for provenance checks; None for out-of-distribution data.
    """

    def __init__(
        self,
        breach: BreachBatch,
        images: np.ndarray,
        labels: np.ndarray,
        surrogate_spec: ModelSpec,
        method: str = "flatten_unet",
        mode: str = "rs_cam",
        training: Optional[Mapping[str, TrainingConfig]] = None,
        plan: Optional[SplitPlan] = None,
        width_scale: float = 1.0,
        max_flatten_features: int = 1024,
        output_activation: str = "clamp",
        validation_fraction: float = 0.1,
        batch_size: int = 64,
    ):
        if mode not in SURROGATE_MODES:
            raise ConfigurationError(f"Unknown surrogate mode {mode!r}; choose one of {SURROGATE_MODES}")
        if plan is not None:
            check_attacker_indices(breach.source_index, plan)
        self.breach = breach
        self.images = np.asarray(images)
        self.labels = np.asarray(labels)
        self.surrogate_spec = surrogate_spec
        self.method = method
        self.mode = mode
        self.training = dict(training or {})
        self.plan = plan
        self.width_scale = width_scale
        self.max_flatten_features = max_flatten_features
        self.output_activation = output_activation
        self.validation_fraction = validation_fraction
        self.batch_size = batch_size
        self.logs: Dict[str, TrainingLog] = {}
        self.surrogate_target: Optional[Classifier] = None
        self.explanation_inverter: Optional[InversionModel] = None
        self.image_inverter: Optional[InversionModel] = None
        self._s_cams: Optional[np.ndarray] = None

    def _cfg(self, stage: str) -> TrainingConfig:
        return self.training.get(stage, TrainingConfig())

    def _require(self, stage: str, done: Any, previous: str) -> None:
        if done is None:
            logger.error(f"Surrogate stage {stage!r} invoked before {previous!r}")
            raise StageOrderError(f"Surrogate stage {stage!r} requires {previous!r} to run first")

    def fit_surrogate_target(self) -> Classifier:
        """Stage 1: the explainable surrogate target."""
        self.surrogate_target, self.logs["surrogate_target"] = train_surrogate_target(
            self.surrogate_spec,
            self.images,
            self.labels,
            self.breach.source_index,
            self._cfg("surrogate_target"),
            plan=self.plan,
            held_out_fraction=self.validation_fraction,
        )
        self._s_cams = surrogate_cams(self.surrogate_target, self.images[self.breach.source_index], self.batch_size)
        return self.surrogate_target

    def fit_explanation_inverter(self) -> InversionModel:
        """Stage 2: target prediction to surrogate explanation."""
        self._require("explanation_inverter", self.surrogate_target, "surrogate_target")
        self.explanation_inverter, self.logs["explanation_inverter"] = train_explanation_inverter(
            self.breach.predictions,
            self._s_cams,
            self._cfg("explanation_inverter"),
            width_scale=self.width_scale,
            validation_fraction=self.validation_fraction,
            output_activation=self.output_activation,
        )
        return self.explanation_inverter

    def fit_image_inverter(self) -> InversionModel:
        """Stage 3: (prediction, s-CAM or rs-CAM) to image."""
        self._require("image_inverter", self.surrogate_target, "surrogate_target")
        if self.mode == "rs_cam":
            self._require("image_inverter", self.explanation_inverter, "explanation_inverter")
            cams = reconstruct_cams(self.explanation_inverter, self.breach.predictions)
        else:
            cams = self._s_cams
        cfg = self._cfg("image_inverter")
        method = InversionMethod.create(
            self.method,
            self.surrogate_spec.input_shape,
            self.breach.class_count,
            EXPLANATION_KIND,
            cams.shape[2:] + (1,),
            width_scale=self.width_scale,
            max_flatten_features=self.max_flatten_features,
        )
        model = build_inversion_model(method, seed=cfg.seed, output_activation=self.output_activation)
        targets = self.images[self.breach.source_index]
        self.image_inverter, self.logs["image_inverter"] = fit_inversion(
            model, self.breach.predictions, cams, targets, cfg, self.validation_fraction,
            desc=f"surrogate_image_inverter ({self.mode})",
        )
        return self.image_inverter

    def run(self) -> SurrogateBundle:
        """Run every stage in order and return the bundle."""
        self.fit_surrogate_target()
        self.fit_explanation_inverter()
        self.fit_image_inverter()
        return self.bundle()

    def bundle(self) -> SurrogateBundle:
        """Assemble the trained stages.

        Raises:
            StageOrderError: If any stage has not run.
        """
        self._require("bundle", self.surrogate_target, "surrogate_target")
        self._require("bundle", self.explanation_inverter, "explanation_inverter")
        self._require("bundle", self.image_inverter, "image_inverter")
        provenance = {"breach_sha256": self.breach.checksum(), "records": len(self.breach)}
        if self.plan is not None:
            provenance["split_sha256"] = self.plan.checksum()
        return SurrogateBundle(
            self.surrogate_target, self.explanation_inverter, self.image_inverter, self.mode, provenance=provenance
        )


def save_bundle(bundle: SurrogateBundle, directory: PathLike) -> Path:
    """Persist a bundle as three checkpoints plus ``manifest.json``."""
    directory = Path(directory)
    save_classifier(bundle.surrogate_target, directory / "surrogate_target.pt")
    save_inversion_model(bundle.explanation_inverter, directory / "explanation_inverter.pt")
    save_inversion_model(bundle.image_inverter, directory / "image_inverter.pt")
    write_json_once(directory / "manifest.json", bundle.to_dict())
    return directory


def load_bundle(directory: PathLike) -> SurrogateBundle:
    """Load a bundle written by :func:`save_bundle`."""
    directory = Path(directory)
    manifest = read_json(directory / "manifest.json")
    return SurrogateBundle(
        load_classifier(directory / "surrogate_target.pt"),
        load_inversion_model(directory / "explanation_inverter.pt"),
        load_inversion_model(directory / "image_inverter.pt"),
        mode=manifest["mode"],
        explanation_kind=manifest.get("explanation_kind", EXPLANATION_KIND),
        provenance=manifest.get("provenance", {}),
    )
