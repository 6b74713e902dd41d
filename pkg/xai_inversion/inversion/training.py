"""Reconstruction training for inversion models."""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..core.config import TrainingConfig
from ..core.exceptions import DatasetValidationError
from ..core.tensors import iter_slices, to_batch
from ..data.splits import carve_validation
from ..models.training import TrainingLog, fit
from .breach import BreachBatch
from .model import InversionModel, prepare_explanations

logger = logging.getLogger("xai_inversion.inversion")


def reconstruction_loss(
    model: InversionModel,
    predictions: torch.Tensor,
    explanations: Optional[torch.Tensor],
    targets: torch.Tensor,
    batch_size: int = 256,
) -> float:
    """Mean squared reconstruction error over a held-out set."""
    if len(predictions) == 0:
        return float("nan")
    device = next(model.parameters()).device
    total = 0.0
    with torch.no_grad():
        for part in iter_slices(len(predictions), batch_size):
            expl = explanations[part].to(device) if explanations is not None else None
            output = model(predictions[part].to(device), expl)
            total += float(F.mse_loss(output, targets[part].to(device), reduction="sum"))
    return total / targets[0].numel() / len(targets)


def fit_inversion(
    model: InversionModel,
    predictions: np.ndarray,
    explanations: Optional[np.ndarray],
    targets: np.ndarray,
    cfg: TrainingConfig,
    validation_fraction: float = 0.1,
    desc: Optional[str] = None,
) -> Tuple[InversionModel, TrainingLog]:
    """Train ``model`` to map (prediction, explanation) tuples to ``targets``.

    Args:
        model: Inversion model trained in place.
        predictions: (N, |C|) prediction vectors.
        explanations: Raw (N, D, H_e, W_e) explanations, or None for
            prediction_only models.
        targets: (N, H, W, C) images the model must reconstruct.
        cfg: Training configuration.
        validation_fraction: Share of tuples held out for the per-epoch
            validation loss.
        desc: Progress and log label.

    Returns:
        The trained model and its log (``validation_loss`` per epoch when a
        validation carve exists).
    """
    desc = desc or model.method.run_id
    if len(predictions) != len(targets):
        raise DatasetValidationError(f"{len(predictions)} tuples but {len(targets)} target images")
    preds = torch.as_tensor(np.asarray(predictions, dtype=np.float32))
    images = to_batch(np.asarray(targets, dtype=np.float32))
    expl = None
    if model.needs_explanation:
        prepared = prepare_explanations(explanations)
        expl = torch.from_numpy(prepared) if prepared is not None else None
    model.check_inputs(preds, expl)
    if tuple(images.shape[1:]) != (model.image_shape[2],) + tuple(model.image_shape[:2]):
        raise DatasetValidationError(
            f"Target images have shape {tuple(targets.shape[1:])}, model reconstructs {model.image_shape}"
        )

    train_pos, val_pos = carve_validation(np.arange(len(preds)), validation_fraction, cfg.seed)
    train_idx = torch.from_numpy(train_pos)
    val_idx = torch.from_numpy(val_pos)
    tensors = [preds[train_idx], images[train_idx]]
    if expl is not None:
        tensors.append(expl[train_idx])

    def loss_fn(p: torch.Tensor, x: torch.Tensor, e: Optional[torch.Tensor] = None) -> torch.Tensor:
        return F.mse_loss(model(p, e), x)

    validate = None
    if len(val_idx):
        val_expl = expl[val_idx] if expl is not None else None

        def validate() -> Dict[str, float]:
            return {"validation_loss": reconstruction_loss(model, preds[val_idx], val_expl, images[val_idx])}

    device = str(next(model.parameters()).device)
    log = fit(model, tensors, loss_fn, cfg, validate=validate, desc=desc, device=device)
    if len(log):
        logger.info(f"{desc}: reconstruction MSE {log.first_loss:.5f} -> {log.final_loss:.5f}")
    return model, log


def train_inversion(
    model: InversionModel,
    breach: BreachBatch,
    images: np.ndarray,
    cfg: TrainingConfig,
    validation_fraction: float = 0.1,
    explanations: Optional[np.ndarray] = None,
) -> Tuple[InversionModel, TrainingLog]:
    """Train an inversion model on the attacker's breached tuples.

    Each tuple is paired with the attacker's own image through its
    ``source_index``.

    Args:
        model: Inversion model trained in place.
        breach: Tuples breached on the attack-train partition.
        images: Full (N_total, H, W, C) image array indexed by source index.
        cfg: Training configuration.
        validation_fraction: Held-out share for validation logging.
        explanations: Explanations to train on instead of the breached ones
            (the surrogate attack substitutes s-CAMs or rs-CAMs).

    Returns:
        The trained model and its log.

    Raises:
        MissingExplanationError: If the breach lacks the model's explanation kind.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    if explanations is None and model.needs_explanation:
        explanations = breach.explanation(model.method.explanation_kind)
    targets = np.asarray(images)[breach.source_index]
    return fit_inversion(model, breach.predictions, explanations, targets, cfg, validation_fraction)
