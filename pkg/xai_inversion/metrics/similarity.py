"""
Image similarity and attack-success metrics.

Every metric compares an original image with its reconstruction. The batch
functions return one value per instance; the single-image functions are
their N=1 case. Images are (N, H, W, C) or (H, W, C) arrays in [0, 1].
"""

import logging
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from ..core.exceptions import ShapeMismatchError
from ..models.classifier import Classifier, embed_batch, predict_batch

logger = logging.getLogger("xai_inversion.metrics")

SSIM_K1, SSIM_K2 = 0.01, 0.03
DYNAMIC_RANGE = 1.0


def _pair(a, b) -> tuple:
    a = np.asarray(getattr(a, "pixels", a), dtype=np.float64)
    b = np.asarray(getattr(b, "pixels", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Cannot compare images of shapes {a.shape} and {b.shape}")
    return a, b


def _stack(a, b) -> tuple:
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    return a, b


def mse_batch(originals, reconstructions) -> np.ndarray:
    """Per-instance mean squared pixel error."""
    a, b = _stack(originals, reconstructions)
    return ((a - b) ** 2).reshape(len(a), -1).mean(axis=1)


def pixelwise_similarity(x, x_hat) -> float:
    """1 - MSE over all pixels."""
    return float(1.0 - mse_batch(x, x_hat)[0])


def psnr_batch(originals, reconstructions, max_value: float = DYNAMIC_RANGE) -> np.ndarray:
    """Per-instance PSNR in dB; identical pairs give +inf."""
    errors = mse_batch(originals, reconstructions)
    with np.errstate(divide="ignore"):
        return np.where(errors > 0, 10.0 * np.log10(max_value**2 / np.where(errors > 0, errors, 1.0)), np.inf)


def psnr(x, x_hat, max_value: float = DYNAMIC_RANGE) -> float:
    """10 log10(MAX^2 / MSE); +inf for identical images."""
    return float(psnr_batch(x, x_hat, max_value)[0])


def gaussian_window(sigma: float, limit: Optional[int] = None) -> torch.Tensor:
    """Normalised 2D Gaussian window of radius floor(3.5 sigma + 0.5).

    Args:
        sigma: Standard deviation in pixels.
        limit: Largest allowed side; the window shrinks to the largest odd
            size that fits.
    """
    size = 2 * int(3.5 * sigma + 0.5) + 1
    if limit is not None and size > limit:
        size = limit if limit % 2 else limit - 1
        size = max(size, 1)
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    kernel = g[:, None] * g[None, :]
    return kernel / kernel.sum()


def ssim_batch(originals, reconstructions, sigma: float = 1.5) -> np.ndarray:
    """Per-instance Gaussian-windowed SSIM, averaged over pixels and channels.

    Args:
        originals: (N, H, W, C) images.
        reconstructions: Images of the same shape.
        sigma: Window standard deviation.

    Returns:
        (N,) float64 SSIM values.

    Raises:
        ValueError: If ``sigma`` is not positive.
    """
    if not sigma > 0:
        raise ValueError(f"SSIM sigma must be > 0, got {sigma}")
    a, b = _stack(originals, reconstructions)
    x = torch.from_numpy(a.transpose(0, 3, 1, 2).copy())
    y = torch.from_numpy(b.transpose(0, 3, 1, 2).copy())
    channels = x.shape[1]
    kernel = gaussian_window(sigma, min(x.shape[2:]))
    window = kernel.expand(channels, 1, *kernel.shape).contiguous()

    def blur(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, window, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    mu_x_sq, mu_y_sq, mu_xy = mu_x**2, mu_y**2, mu_x * mu_y
    sigma_x_sq = blur(x * x) - mu_x_sq
    sigma_y_sq = blur(y * y) - mu_y_sq
    sigma_xy = blur(x * y) - mu_xy

    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    cs_map = (2.0 * sigma_xy + c2) / (sigma_x_sq + sigma_y_sq + c2)
    ssim_map = (2.0 * mu_x * mu_y + c1) / (mu_x_sq + mu_y_sq + c1) * cs_map
    return ssim_map.mean(dim=(1, 2, 3)).numpy()


def ssim(x_a, x_b, sigma: float = 1.5) -> float:
    """SSIM of one image pair."""
    return float(ssim_batch(x_a, x_b, sigma)[0])


def attack_correct(eval_model: Classifier, reconstructions, labels, batch_size: int = 256) -> np.ndarray:
    """Per-instance 0/1: does the evaluation model label the reconstruction correctly."""
    reconstructions = np.asarray(reconstructions, dtype=np.float32)
    predicted = predict_batch(eval_model, reconstructions, batch_size).argmax(axis=1)
    return (predicted == np.asarray(labels)).astype(np.float64)


def attack_accuracy(eval_model: Classifier, reconstructions, labels, batch_size: int = 256) -> float:
    """Fraction of reconstructions labelled correctly on the attack task."""
    if len(reconstructions) == 0:
        return float("nan")
    return float(attack_correct(eval_model, reconstructions, labels, batch_size).mean())


def embedding_similarity_batch(eval_model: Classifier, originals, reconstructions, batch_size: int = 256) -> np.ndarray:
    """Per-instance exp(-||z - z_r||^2) of penultimate-layer embeddings."""
    a, b = _stack(originals, reconstructions)
    z = embed_batch(eval_model, a.astype(np.float32), batch_size)
    z_r = embed_batch(eval_model, b.astype(np.float32), batch_size)
    return np.exp(-((z - z_r) ** 2).sum(axis=1))


def embedding_similarity(eval_model: Classifier, x, x_hat) -> float:
    """Embedding similarity of one pair, in (0, 1]."""
    return float(embedding_similarity_batch(eval_model, x, x_hat)[0])


def evaluate_reconstructions(
    eval_model: Classifier,
    originals: np.ndarray,
    reconstructions: np.ndarray,
    labels: np.ndarray,
    sigma: float,
    batch_size: int = 256,
) -> Dict[str, np.ndarray]:
    """All per-instance image metrics of one attack run.

    Returns:
        Metric name to (N,) values: attack_accuracy (0/1 per instance), ssim,
        pixelwise_similarity, embedding_similarity, psnr and mse.
    """
    errors = mse_batch(originals, reconstructions)
    return {
        "attack_accuracy": attack_correct(eval_model, reconstructions, labels, batch_size),
        "ssim": ssim_batch(originals, reconstructions, sigma),
        "pixelwise_similarity": 1.0 - errors,
        "embedding_similarity": embedding_similarity_batch(eval_model, originals, reconstructions, batch_size),
        "psnr": psnr_batch(originals, reconstructions),
        "mse": errors,
    }
