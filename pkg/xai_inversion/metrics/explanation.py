"""
Explanation-quality factors: relevance (IoU with a valid-region mask) and
typicalness (correlation with the class-mean CAM).
"""

import logging
from typing import Any, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..core.exceptions import ShapeMismatchError

logger = logging.getLogger("xai_inversion.metrics")

CAM_THRESHOLD = 0.5
MASK_THRESHOLD = 0.5


def _grid(values: Any) -> np.ndarray:
    grid = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeMismatchError(f"Expected a 2D map, got shape {grid.shape}")
    return grid


def image_mask(image: Any) -> np.ndarray:
    """Valid region of a digit image: pixels brighter than zero in any channel."""
    pixels = np.asarray(getattr(image, "pixels", image))
    return (pixels > 0).any(axis=-1) if pixels.ndim == 3 else pixels > 0


def resize_mask(mask: Any, shape) -> np.ndarray:
    """Area-average a binary mask to ``shape`` and binarise at 0.5."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape == tuple(shape):
        return mask >= MASK_THRESHOLD
    resized = F.interpolate(torch.from_numpy(mask)[None, None], size=tuple(shape), mode="area")[0, 0].numpy()
    return resized >= MASK_THRESHOLD


def binarize_cam(cam: Any, threshold: float = CAM_THRESHOLD) -> np.ndarray:
    """Support of a CAM: pixels at or above ``threshold`` times its maximum."""
    grid = _grid(cam)
    peak = grid.max()
    if not peak > 0:
        return np.zeros(grid.shape, dtype=bool)
    return grid >= threshold * peak


def explanation_relevance(cam: Any, mask: Any) -> float:
    """IoU between the binarised CAM and the valid-region mask.

    Args:
        cam: 2D CAM (array or ``ExplanationMap``).
        mask: Binary grid of any size; resized to the CAM resolution.

    Returns:
        IoU in [0, 1]; 1.0 when both supports are empty.
    """
    support = binarize_cam(cam)
    region = resize_mask(mask, support.shape)
    union = np.logical_or(support, region).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(support, region).sum() / union)


def explanation_typicalness(cam: Any, class_mean_cam: Any) -> Optional[float]:
    """Pearson correlation between a CAM and its class-mean CAM.

    Returns:
        PCC in [-1, 1], or None if either map is constant.
    """
    a, b = _grid(cam), _grid(class_mean_cam)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"CAM shape {a.shape} differs from class-mean shape {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.sqrt((a * a).sum() * (b * b).sum())
    if not denominator > 0:
        return None
    return float(np.clip((a * b).sum() / denominator, -1.0, 1.0))


def class_mean_cams(cams: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    """Pixel-wise mean CAM per class.

    Args:
        cams: (N, h, w) or (N, 1, h, w) CAMs.
        labels: Class of each CAM.
        class_count: Number of classes.

    Returns:
        (class_count, h, w) means; classes without CAMs get zero maps.
    """
    cams = np.asarray(cams, dtype=np.float64)
    if cams.ndim == 4:
        cams = cams[:, 0]
    labels = np.asarray(labels, dtype=np.int64)
    means = np.zeros((class_count,) + cams.shape[1:], dtype=np.float64)
    for c in range(class_count):
        members = labels == c
        if members.any():
            means[c] = cams[members].mean(axis=0)
        else:
            logger.warning(f"No CAMs for class {c}; its class-mean CAM is all zeros")
    return means
