"""
Explanation artifacts.

``ExplanationMap`` is a single saliency map, ``ExplanationStack`` a D-slice
stack (one slice per class for sigma_cam, one per last-conv kernel for
partial_cam). Both dump to ``.npz`` with a JSON sidecar.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from ..core.config import EXPLANATION_KINDS, MULTI_EXPLANATION_KINDS
from ..core.exceptions import DatasetValidationError
from ..core.io import PathLike, npz_bytes, write_bytes_once, write_json_once

logger = logging.getLogger("xai_inversion.xai")


def normalize_explanation(values: np.ndarray) -> np.ndarray:
    """Min-max scale one explanation artifact to [0, 1].

    A stack is scaled jointly over all of its slices. Constant inputs map to
    all zeros.
    """
    values = np.asarray(values, dtype=np.float32)
    low, high = float(values.min()), float(values.max())
    if not high > low:
        return np.zeros_like(values)
    return ((values - low) / (high - low)).astype(np.float32)


def normalize_batch(values: np.ndarray) -> np.ndarray:
    """Apply :func:`normalize_explanation` to each leading-axis entry."""
    values = np.asarray(values, dtype=np.float32)
    if len(values) == 0:
        return values
    flat = values.reshape(len(values), -1)
    low = flat.min(axis=1, keepdims=True)
    span = flat.max(axis=1, keepdims=True) - low
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (flat - low) / safe, 0.0)
    return scaled.reshape(values.shape).astype(np.float32)


def compose_cam(partials: np.ndarray) -> np.ndarray:
    """ReLU of the sum over the kernel axis of a (K, h, w) partial-CAM stack."""
    return np.maximum(np.asarray(partials, dtype=np.float32).sum(axis=0), np.float32(0.0))


def _dump(path: PathLike, values: np.ndarray, metadata: Dict[str, Any]) -> Path:
    path = Path(path)
    write_bytes_once(path, npz_bytes(values=values))
    write_json_once(path.with_suffix(path.suffix + ".json"), metadata)
    return path


@dataclass(frozen=True)
class ExplanationMap:
    """A 2D saliency map.

    Attributes:
        values: (H_e, W_e) float grid.
        kind: gradient, grad_input, grad_cam or lrp.
        explained_class: Class the map explains.
        source_layer: Layer the map was taken at (grad_cam).
        normalized: Whether ``values`` were min-max scaled.
    """

    values: np.ndarray
    kind: str
    explained_class: int
    source_layer: Optional[str] = None
    normalized: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise DatasetValidationError(f"ExplanationMap needs a 2D grid, got shape {values.shape}")
        if self.kind not in EXPLANATION_KINDS:
            raise DatasetValidationError(f"Unknown explanation kind {self.kind!r}")
        if self.kind == "grad_cam" and (values < 0).any():
            raise DatasetValidationError("grad_cam values must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    def normalize(self) -> "ExplanationMap":
        """Min-max scaled copy."""
        return ExplanationMap(
            normalize_explanation(self.values), self.kind, self.explained_class, self.source_layer, True
        )

    def to_dict(self) -> Dict[str, Any]:
        """Sidecar metadata.

        Returns:
            Kind, class, layer, normalisation flag and shape.
        """
        return {
            "kind": self.kind,
            "explained_class": self.explained_class,
            "source_layer": self.source_layer,
            "normalized": self.normalized,
            "shape": list(self.values.shape),
        }

    def save(self, path: PathLike) -> Path:
        """Dump values as ``.npz`` plus ``<path>.json``."""
        return _dump(path, self.values, self.to_dict())


@dataclass(frozen=True)
class ExplanationStack:
    """A D x H_e x W_e explanation stack.

    Attributes:
        maps: (D, H_e, W_e) float array.
        kind: sigma_cam or partial_cam.
        explained_class: Class explained by partial_cam stacks (None for sigma_cam).
        source_layer: Layer the stack was taken at.
        normalized: Whether ``maps`` were min-max scaled.
    """

    maps: np.ndarray
    kind: str
    explained_class: Optional[int] = None
    source_layer: Optional[str] = None
    normalized: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        maps = np.asarray(self.maps, dtype=np.float32)
        if maps.ndim != 3:
            raise DatasetValidationError(f"ExplanationStack needs a 3D tensor, got shape {maps.shape}")
        if self.kind not in MULTI_EXPLANATION_KINDS:
            raise DatasetValidationError(f"Unknown explanation stack kind {self.kind!r}")
        object.__setattr__(self, "maps", maps)

    @property
    def depth(self) -> int:
        return int(self.maps.shape[0])

    @property
    def shape(self):
        return self.maps.shape

    def recompose(self) -> np.ndarray:
        """ReLU of the slice sum; for partial_cam stacks this is the Grad-CAM."""
        return compose_cam(self.maps)

    def normalize(self) -> "ExplanationStack":
        """Jointly min-max scaled copy."""
        return ExplanationStack(
            normalize_explanation(self.maps), self.kind, self.explained_class, self.source_layer, True
        )

    def to_dict(self) -> Dict[str, Any]:
        """Sidecar metadata.

        Returns:
            Kind, class, layer, normalisation flag and shape.
        """
        return {
            "kind": self.kind,
            "explained_class": self.explained_class,
            "source_layer": self.source_layer,
            "normalized": self.normalized,
            "shape": list(self.maps.shape),
        }

    def save(self, path: PathLike) -> Path:
        """Dump maps as ``.npz`` plus ``<path>.json``."""
        return _dump(path, self.maps, self.to_dict())
