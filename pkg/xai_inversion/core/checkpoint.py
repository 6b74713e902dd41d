"""
Checkpoint container.

A checkpoint is one torch-serialised mapping::

    {
        "format": "xai-inversion-checkpoint/1",
        "kind": "classifier" | "inversion",
        "spec": <JSON-compatible spec dictionary>,
        "state_dict": <per-layer named parameter tensors>,
        "metadata": <JSON-compatible dictionary>,
    }

It only holds plain containers and tensors, so it loads with
``torch.load(weights_only=True)``.
"""

import io
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import torch

from .exceptions import DatasetLoadError
from .io import PathLike, write_bytes_once

logger = logging.getLogger("xai_inversion.checkpoint")

CHECKPOINT_FORMAT = "xai-inversion-checkpoint/1"


def save_checkpoint(
    path: PathLike,
    kind: str,
    spec: Mapping[str, Any],
    state_dict: Mapping[str, torch.Tensor],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Serialise a model checkpoint (write-once).

    Args:
        path: Destination file.
        kind: Model family ("classifier" or "inversion").
        spec: JSON-compatible spec dictionary.
        state_dict: Named parameters.
        metadata: Extra JSON-compatible metadata.

    Returns:
        The written path.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "spec": dict(spec),
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        "metadata": dict(metadata or {}),
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    written = write_bytes_once(path, buffer.getvalue())
    logger.info(f"Saved {kind} checkpoint to {written}")
    return written


def load_checkpoint(path: PathLike, kind: Optional[str] = None) -> Dict[str, Any]:
    """Load a checkpoint saved by :func:`save_checkpoint`.

    Args:
        path: Checkpoint file.
        kind: Expected model family, checked when given.

    Returns:
        The checkpoint mapping.

    Raises:
        DatasetLoadError: If the file is missing or not a checkpoint of the
            expected kind.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetLoadError(f"Checkpoint not found: {path}", record=str(path))
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DatasetLoadError(f"Not an xai-inversion checkpoint: {path}", record=str(path))
    if kind is not None and payload.get("kind") != kind:
        raise DatasetLoadError(
            f"Checkpoint {path} holds a {payload.get('kind')!r} model, expected {kind!r}",
            record=str(path),
        )
    return payload
