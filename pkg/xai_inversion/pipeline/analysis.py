"""
Explanation and prediction factors versus attack success.

For every evaluated run, four CSV exports pair a per-instance factor with
that instance's SSIM and attack correctness:

- ``relevance.csv``: IoU between the target's Grad-CAM and the image's
  valid region.
- ``typicalness.csv``: correlation between the Grad-CAM and the mean CAM of
  the instance's class over the attack-train split.
- ``confidence.csv``: the target's top prediction score.
- ``target_accuracy.csv``: the target's accuracy on the instance's class.
"""

import io
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from ..core.io import write_bytes_once
from ..inversion.breach import BreachStore
from ..metrics.explanation import class_mean_cams, explanation_relevance, explanation_typicalness, image_mask
from ..metrics.report import MetricsReport
from ..models.classifier import load_classifier
from ..xai.api import explain_batch
from ..xai.maps import normalize_batch
from .context import RunContext
from .matrix import build_run_matrix

logger = logging.getLogger("xai_inversion.pipeline")

FACTORS = ("relevance", "typicalness", "confidence", "target_accuracy")
FACTOR_COLUMNS = ["instance", "factor", "ssim", "attack_correct"]


def _grad_cams(ctx: RunContext, partition: str, store: BreachStore) -> np.ndarray:
    """Normalised Grad-CAMs of a partition: the breached ones if stored, else recomputed."""
    if "grad_cam" in store.kinds(partition):
        cams = store.load(partition, kinds=("grad_cam",)).explanation("grad_cam")
    else:
        target = load_classifier(ctx.manifest.artifact("train-target", "target"))
        cams = explain_batch(target, ctx.images(ctx.plan.indices(partition)), "grad_cam")
    return normalize_batch(cams)


def class_accuracies(predicted: np.ndarray, labels: np.ndarray, class_count: int) -> np.ndarray:
    """Per-class accuracy; classes without instances get NaN."""
    result = np.full(class_count, np.nan)
    for c in range(class_count):
        members = labels == c
        if members.any():
            result[c] = float((predicted[members] == c).mean())
    return result


def factor_values(ctx: RunContext) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Per-instance factors of the attack-test split.

    Returns:
        The attack-test source indices and one value array per factor.
        Undefined typicalness values are NaN.
    """
    store = BreachStore(ctx.breach_dir)
    test = store.load("attack_test", kinds=())
    train_index = store.load("attack_train", kinds=()).source_index
    labels = ctx.collection.labels

    train_cams = _grad_cams(ctx, "attack_train", store)
    test_cams = _grad_cams(ctx, "attack_test", store)
    means = class_mean_cams(train_cams, labels[train_index], ctx.profile.class_count)

    test_labels = labels[test.source_index]
    images = ctx.images(test.source_index)
    relevance = np.array([explanation_relevance(cam[0], image_mask(image)) for cam, image in zip(test_cams, images)])
    typicalness = np.array(
        [
            np.nan if (value := explanation_typicalness(cam[0], means[label])) is None else value
            for cam, label in zip(test_cams, test_labels)
        ]
    )
    predicted = test.predictions.argmax(axis=1)
    per_class = class_accuracies(predicted, test_labels, ctx.profile.class_count)
    return test.source_index, {
        "relevance": relevance,
        "typicalness": typicalness,
        "confidence": test.predictions.max(axis=1).astype(np.float64),
        "target_accuracy": per_class[test_labels],
    }


def factor_table(instances: np.ndarray, factor: np.ndarray, report: MetricsReport) -> pd.DataFrame:
    """Join a factor with the run's per-instance SSIM and attack correctness."""
    frame = pd.DataFrame({"instance": np.asarray(instances, dtype=np.int64), "factor": factor})
    frame = frame.join(report.values("ssim").rename("ssim"), on="instance")
    frame = frame.join(report.values("attack_accuracy").rename("attack_correct"), on="instance")
    return frame[FACTOR_COLUMNS].sort_values("instance", kind="mergesort").reset_index(drop=True)


def analyze_factors(ctx: RunContext, factors: Optional[Dict[str, np.ndarray]] = None) -> Tuple[Dict[str, Path], Dict]:
    """Write the four factor exports of every run under ``analysis/<run_id>/``.

    Args:
        ctx: Run context with a completed evaluate stage.
        factors: Precomputed ``factor_values`` output (recomputed if None).

    Returns:
        Written paths keyed ``<run_id>/<factor>`` and per-factor summaries.
    """
    instances, values = factor_values(ctx) if factors is None else factors
    artifacts: Dict[str, Path] = {}
    for run in build_run_matrix(ctx.config):
        report = MetricsReport.load(ctx.evaluation_dir(run.run_id))
        directory = ctx.analysis_dir(run.run_id)
        for name in FACTORS:
            table = factor_table(instances, values[name], report)
            buffer = io.StringIO()
            table.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
            artifacts[f"{run.run_id}/{name}"] = write_bytes_once(
                directory / f"{name}.csv", buffer.getvalue().encode("utf-8")
            )
        logger.info(f"Wrote factor exports for {run.run_id}")
    details = {
        name: {"mean": float(np.nanmean(v)) if np.isfinite(v).any() else None, "undefined": int((~np.isfinite(v)).sum())}
        for name, v in values.items()
    }
    return artifacts, details
