"""
Privacy metrics for XAI Inversion.

This module provides image similarity (pixelwise, SSIM, PSNR), attack
accuracy, embedding similarity, the explanation relevance and typicalness
factors, and per-instance reports with 90% confidence aggregates.
"""

from .explanation import (
    binarize_cam,
    class_mean_cams,
    explanation_relevance,
    explanation_typicalness,
    image_mask,
    resize_mask,
)
from .report import MetricsReport, aggregate, aggregate_values, improvement_ratio, paired_difference
from .similarity import (
    attack_accuracy,
    attack_correct,
    embedding_similarity,
    embedding_similarity_batch,
    evaluate_reconstructions,
    gaussian_window,
    mse_batch,
    pixelwise_similarity,
    psnr,
    psnr_batch,
    ssim,
    ssim_batch,
)

__all__ = [
    "MetricsReport",
    "aggregate",
    "aggregate_values",
    "attack_accuracy",
    "attack_correct",
    "binarize_cam",
    "class_mean_cams",
    "embedding_similarity",
    "embedding_similarity_batch",
    "evaluate_reconstructions",
    "explanation_relevance",
    "explanation_typicalness",
    "gaussian_window",
    "image_mask",
    "improvement_ratio",
    "mse_batch",
    "paired_difference",
    "pixelwise_similarity",
    "psnr",
    "psnr_batch",
    "resize_mask",
    "ssim",
    "ssim_batch",
]
