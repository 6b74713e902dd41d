"""
Breach simulation and the breach store.

The attacker observes, for every private image it queries, the target's
prediction vector and any explanations the target API releases. The breach
store keeps these tuples column-wise, one directory per split partition::

    breach/
        manifest.json
        attack_train/predictions.npz
        attack_train/explanations_grad_cam.npz
        attack_test/...

Files are write-once; adding an explanation kind appends a file and extends
the manifest.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from ..core.exceptions import DatasetLoadError, DatasetValidationError, MissingExplanationError, ProvenanceError
from ..core.io import PathLike, npz_bytes, read_json, sha256_arrays, write_bytes_once, write_json_atomic
from ..data.splits import SplitPlan
from ..models.classifier import Classifier, PredictionVector
from ..xai.api import ExplainableTargetAPI, explain_batch

logger = logging.getLogger("xai_inversion.breach")

PARTITIONS = ("attack_train", "attack_test")


@dataclass
class BreachedTuple:
    """One attacker-observed (prediction, explanations) tuple.

    Attributes:
        prediction: Target prediction vector.
        explanations: Raw explanations by kind, each (D, H_e, W_e).
        source_index: Dataset index of the queried image. Used for training
            pairs and metrics only, never as a model input.
        run_id: Identifier of the breach run.
        timestamp: Unix time of the query.
    """

    prediction: PredictionVector
    explanations: Dict[str, np.ndarray] = field(default_factory=dict)
    source_index: Optional[int] = None
    run_id: str = ""
    timestamp: float = 0.0

    def explanation(self, kind: str) -> np.ndarray:
        """Raw explanation of ``kind``.

        Raises:
            MissingExplanationError: If the tuple carries no such explanation.
        """
        if kind not in self.explanations:
            raise MissingExplanationError(f"Breached tuple carries no {kind} explanation")
        return self.explanations[kind]


@dataclass
class BreachBatch:
    """Column-wise collection of breached tuples from one partition.

    Attributes:
        predictions: (N, |C|) float64 prediction vectors.
        source_index: (N,) dataset indices.
        explanations: Raw (N, D, H_e, W_e) arrays by kind.
        partition: Split partition the images came from.
        run_id: Identifier of the breach run.
        timestamp: Unix time of the breach.
    """

    predictions: np.ndarray
    source_index: np.ndarray
    explanations: Dict[str, np.ndarray] = field(default_factory=dict)
    partition: str = "attack_test"
    run_id: str = ""
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        self.predictions = np.asarray(self.predictions, dtype=np.float64)
        self.source_index = np.asarray(self.source_index, dtype=np.int64)
        if self.predictions.ndim != 2 or len(self.predictions) != len(self.source_index):
            raise DatasetValidationError(
                f"Breach batch needs (N, |C|) predictions and N source indices, got "
                f"{self.predictions.shape} and {self.source_index.shape}"
            )
        for kind, values in list(self.explanations.items()):
            values = np.asarray(values, dtype=np.float32)
            if values.ndim != 4 or len(values) != len(self):
                raise DatasetValidationError(
                    f"{kind} explanations must be (N, D, H, W) with N={len(self)}, got {values.shape}"
                )
            self.explanations[kind] = values

    def __len__(self) -> int:
        return len(self.predictions)

    @property
    def class_count(self) -> int:
        return int(self.predictions.shape[1])

    @property
    def explained_classes(self) -> np.ndarray:
        return self.predictions.argmax(axis=1)

    def explanation(self, kind: Optional[str]) -> Optional[np.ndarray]:
        """Explanations of ``kind``; None when ``kind`` is None.

        Raises:
            MissingExplanationError: If the batch holds no such explanation.
        """
        if kind is None:
            return None
        if kind not in self.explanations:
            raise MissingExplanationError(
                f"Breach batch {self.partition!r} holds no {kind} explanations (has {sorted(self.explanations)})"
            )
        return self.explanations[kind]

    def tuple(self, i: int) -> BreachedTuple:
        """The i-th breached tuple."""
        return BreachedTuple(
            prediction=PredictionVector(self.predictions[i]),
            explanations={kind: values[i] for kind, values in self.explanations.items()},
            source_index=int(self.source_index[i]),
            run_id=self.run_id,
            timestamp=self.timestamp,
        )

    def subset(self, positions: Sequence[int]) -> "BreachBatch":
        positions = np.asarray(positions, dtype=np.int64)
        return BreachBatch(
            self.predictions[positions],
            self.source_index[positions],
            {kind: values[positions] for kind, values in self.explanations.items()},
            self.partition,
            self.run_id,
            self.timestamp,
        )

    def checksum(self) -> str:
        arrays = [self.predictions, self.source_index]
        arrays += [self.explanations[kind] for kind in sorted(self.explanations)]
        return sha256_arrays(arrays)


def check_provenance(batch: BreachBatch, plan: SplitPlan) -> None:
    """Ensure every tuple's source image lies in the batch's partition.

    Raises:
        ProvenanceError: If any source index belongs to another partition.
    """
    allowed = plan.indices(batch.partition)
    outside = ~np.isin(batch.source_index, allowed)
    if outside.any():
        leaked = batch.source_index[outside][:5].tolist()
        logger.error(f"{int(outside.sum())} breached tuples originate outside {batch.partition}: {leaked}")
        raise ProvenanceError(
            f"{int(outside.sum())} tuples in the {batch.partition} breach originate outside that partition "
            f"(first indices {leaked})"
        )


def simulate_breach(
    target: Classifier,
    images: np.ndarray,
    source_index: np.ndarray,
    kinds: Iterable[str] = (),
    partition: str = "attack_test",
    batch_size: int = 64,
    run_id: str = "",
) -> BreachBatch:
    """Query the target API on attacker-side images and record what leaks.

    Args:
        target: Trained target model.
        images: (N, H, W, C) images queried, aligned with ``source_index``.
        source_index: Dataset index of each image.
        kinds: Explanation kinds the target releases.
        partition: Partition the images come from.
        batch_size: Images per pass.
        run_id: Breach run identifier.

    Returns:
        The breached tuples.
    """
    api = ExplainableTargetAPI(target, explanation_kind=None, batch_size=batch_size)
    response = api.query(images)
    explanations = {}
    for kind in kinds:
        logger.info(f"Breaching {kind} explanations for {len(images)} {partition} images")
        explanations[kind] = explain_batch(target, images, kind, response.explained_classes, batch_size)
    return BreachBatch(
        response.predictions,
        np.asarray(source_index, dtype=np.int64),
        explanations,
        partition=partition,
        run_id=run_id,
        timestamp=time.time(),
    )


class BreachStore:
    """Append-only on-disk store of breached tuples."""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"

    def manifest(self) -> Dict[str, Any]:
        if not self.manifest_path.exists():
            return {"partitions": {}}
        return read_json(self.manifest_path)

    def partitions(self):
        return sorted(self.manifest()["partitions"])

    def kinds(self, partition: str):
        return sorted(self.manifest()["partitions"].get(partition, {}).get("explanations", {}))

    def write(self, batch: BreachBatch, provenance: Optional[Dict[str, Any]] = None) -> Path:
        """Persist a batch; explanation kinds already stored are left untouched.

        Args:
            batch: Breached tuples of one partition.
            provenance: Extra manifest fields (target checksum, split checksum).

        Returns:
            The partition directory.

        Raises:
            ArtifactExistsError: If stored predictions differ from ``batch``'s.
            DatasetValidationError: If an explanation kind's shape differs
                from the one already stored.
        """
        manifest = self.manifest()
        directory = self.root / batch.partition
        entry = manifest["partitions"].setdefault(batch.partition, {"explanations": {}})

        write_bytes_once(
            directory / "predictions.npz",
            npz_bytes(predictions=batch.predictions, source_index=batch.source_index),
        )
        entry.update(
            {
                "count": len(batch),
                "class_count": batch.class_count,
                "run_id": batch.run_id,
                "timestamp": entry.get("timestamp", batch.timestamp),
            }
        )
        for kind in sorted(batch.explanations):
            values = batch.explanations[kind]
            known = entry["explanations"].get(kind)
            if known is not None and list(known["shape"]) != list(values.shape[1:]):
                raise DatasetValidationError(
                    f"Stored {kind} explanations have shape {known['shape']}, new batch has {list(values.shape[1:])}"
                )
            path = directory / f"explanations_{kind}.npz"
            if known is None or not path.exists():
                write_bytes_once(path, npz_bytes(values=values))
            entry["explanations"][kind] = {"shape": list(values.shape[1:]), "file": path.name}
        if provenance:
            manifest.setdefault("provenance", {}).update(provenance)
        write_json_atomic(self.manifest_path, manifest)
        logger.info(f"Stored {len(batch)} {batch.partition} tuples ({', '.join(sorted(batch.explanations)) or 'predictions only'})")
        return directory

    def load(self, partition: str, kinds: Optional[Iterable[str]] = None) -> BreachBatch:
        """Load a partition with the requested explanation kinds (default: all).

        Raises:
            DatasetLoadError: If the partition was never written.
            MissingExplanationError: If a requested kind is not stored.
        """
        manifest = self.manifest()
        entry = manifest["partitions"].get(partition)
        if entry is None:
            raise DatasetLoadError(f"No {partition} breach stored under {self.root}", record=partition)
        directory = self.root / partition
        with np.load(directory / "predictions.npz") as data:
            predictions, source_index = data["predictions"], data["source_index"]
        wanted = sorted(entry["explanations"]) if kinds is None else list(kinds)
        explanations = {}
        for kind in wanted:
            if kind not in entry["explanations"]:
                raise MissingExplanationError(f"No {kind} explanations stored for {partition}")
            with np.load(directory / entry["explanations"][kind]["file"]) as data:
                explanations[kind] = data["values"]
        return BreachBatch(
            predictions, source_index, explanations, partition, entry.get("run_id", ""), entry.get("timestamp", 0.0)
        )
