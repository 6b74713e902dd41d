"""
Shared ADAM training loop and per-epoch log.

Classifier, inversion and explanation-inversion training all run through
``fit``: fixed epoch budget, seeded shuffling, abort on a non-finite loss.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset
from tqdm import trange

from ..core.config import TrainingConfig
from ..core.exceptions import TrainingDivergedError

logger = logging.getLogger("xai_inversion.training")


@dataclass
class EpochRecord:
    """Statistics of one epoch.

    Attributes:
        epoch: 1-based epoch number.
        train_loss: Mean training loss over the epoch.
        metrics: Held-out metrics (e.g. ``validation_loss``, ``accuracy``).
    """

    epoch: int
    train_loss: float
    metrics: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"epoch": self.epoch, "train_loss": self.train_loss, **self.metrics}


@dataclass
class TrainingLog:
    """Per-epoch training history."""

    epochs: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, record: EpochRecord) -> None:
        self.epochs.append(record)

    @property
    def losses(self) -> List[float]:
        return [record.train_loss for record in self.epochs]

    @property
    def first_loss(self) -> Optional[float]:
        return self.epochs[0].train_loss if self.epochs else None

    @property
    def final_loss(self) -> Optional[float]:
        return self.epochs[-1].train_loss if self.epochs else None

    def metric(self, name: str) -> List[Optional[float]]:
        """Per-epoch values of a held-out metric."""
        return [record.metrics.get(name) for record in self.epochs]

    def to_dict(self) -> Dict[str, Any]:
        """Convert the log to a dictionary.

        Returns:
            Dictionary representation of the log.
        """
        return {"epochs": [record.to_dict() for record in self.epochs]}


def make_optimizer(model: nn.Module, cfg: TrainingConfig) -> torch.optim.Optimizer:
    """ADAM with the configured learning rate and betas."""
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2))


def fit(
    model: nn.Module,
    tensors: Sequence[torch.Tensor],
    loss_fn: Callable[..., torch.Tensor],
    cfg: TrainingConfig,
    validate: Optional[Callable[[], Dict[str, float]]] = None,
    desc: str = "train",
    device: str = "cpu",
) -> TrainingLog:
    """Train ``model`` for ``cfg.epochs`` epochs.

    Args:
        model: Module to optimise in place.
        tensors: Aligned training tensors; each mini-batch is passed to
            ``loss_fn`` positionally.
        loss_fn: Returns the mean loss of a mini-batch.
        cfg: Optimiser and schedule settings.
        validate: Called without gradients after every epoch; its metrics
            are added to the epoch record.
        desc: Progress bar label.
        device: Device mini-batches are moved to.

    Returns:
        The training log (empty for zero epochs).

    Raises:
        TrainingDivergedError: If a mini-batch loss is not finite.
    """
    log = TrainingLog()
    if cfg.epochs == 0:
        return log

    dataset = TensorDataset(*tensors)
    generator = torch.Generator().manual_seed(cfg.seed)
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True, generator=generator)
    optimizer = make_optimizer(model, cfg)

    for epoch in trange(1, cfg.epochs + 1, desc=desc, disable=None, leave=False):
        model.train()
        total, count = 0.0, 0
        for batch_index, batch in enumerate(loader):
            batch = [t.to(device) for t in batch]
            optimizer.zero_grad(set_to_none=True)
            loss = loss_fn(*batch)
            value = float(loss.detach())
            if not math.isfinite(value):
                logger.error(f"{desc}: non-finite loss {value} at epoch {epoch}, batch {batch_index}")
                raise TrainingDivergedError(
                    f"{desc} diverged at epoch {epoch}, batch {batch_index} (loss {value})",
                    epoch=epoch,
                    batch=batch_index,
                    loss=value,
                )
            loss.backward()
            optimizer.step()
            total += value * len(batch[0])
            count += len(batch[0])

        record = EpochRecord(epoch=epoch, train_loss=total / max(count, 1))
        if validate is not None:
            model.eval()
            with torch.no_grad():
                record.metrics.update(validate())
        log.append(record)
        extra = ", ".join(f"{k}={v:.4f}" for k, v in record.metrics.items() if v is not None)
        logger.info(f"{desc} epoch {epoch}/{cfg.epochs}: loss={record.train_loss:.5f}{', ' + extra if extra else ''}")

    model.eval()
    return log
