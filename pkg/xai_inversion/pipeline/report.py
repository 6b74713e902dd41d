"""
Report rendering: metric bar charts with 90% confidence bars, original
versus reconstruction image grids and ``summary.json`` with the attack
orderings.
"""

import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..core.exceptions import DatasetValidationError  # noqa: E402
from ..core.io import write_bytes_once, write_json_once  # noqa: E402
from ..metrics.report import MetricsReport, aggregate_values, improvement_ratio, paired_difference  # noqa: E402
from .context import RunContext  # noqa: E402
from .matrix import RunSpec, build_run_matrix, run_id_for  # noqa: E402

logger = logging.getLogger("xai_inversion.pipeline")


def _aggregate(report: MetricsReport, metric: str) -> Optional[Dict[str, Any]]:
    if metric not in report.metrics:
        return None
    try:
        return aggregate_values(report.values(metric).to_numpy(), metric)
    except DatasetValidationError as e:
        logger.warning(f"{report.run_id}: {e}")
        return None


def _figure_bytes(figure) -> bytes:
    buffer = io.BytesIO()
    figure.savefig(buffer, format="png", dpi=120, bbox_inches="tight")
    plt.close(figure)
    return buffer.getvalue()


def _group_of(run: RunSpec) -> str:
    if run.family == "surrogate":
        return f"surrogate {run.surrogate_mode}"
    return run.explanation_kind or "none"


def bar_table(runs: Sequence[RunSpec], reports: Dict[str, MetricsReport], metric: str) -> pd.DataFrame:
    """Mean and CI of ``metric`` per run; runs without the metric are left out with a warning."""
    rows = []
    for run in runs:
        summary = _aggregate(reports[run.run_id], metric)
        if summary is None:
            logger.warning(f"No {metric} values for {run.run_id}; omitted from the chart")
            continue
        rows.append({"explanation": _group_of(run), "method": run.method, "mean": summary["mean"], "ci90": summary["ci90"]})
    return pd.DataFrame(rows, columns=["explanation", "method", "mean", "ci90"])


def render_bar_chart(table: pd.DataFrame, metric: str, path: Path) -> Path:
    """Grouped bars: explanation kinds on the x axis, one bar per input method."""
    means = table.pivot(index="explanation", columns="method", values="mean")
    errors = table.pivot(index="explanation", columns="method", values="ci90")
    order = list(dict.fromkeys(table["explanation"]))
    means, errors = means.reindex(order), errors.reindex(order)
    figure, axis = plt.subplots(figsize=(max(4.0, 1.2 * len(order)), 3.5))
    means.plot.bar(yerr=errors, ax=axis, capsize=3, rot=30)
    axis.set_ylabel(metric)
    axis.set_xlabel("")
    axis.legend(fontsize="small", title="input method")
    return write_bytes_once(path, _figure_bytes(figure))


def render_image_grid(originals: np.ndarray, reconstructions: Dict[str, np.ndarray], samples: int, path: Path) -> int:
    """Write a grid with one row per sample: the original, then each run's reconstruction.

    Returns:
        Number of rows drawn.
    """
    rows = min(samples, len(originals))
    columns = ["original"] + list(reconstructions)
    figure, axes = plt.subplots(rows, len(columns), figsize=(1.3 * len(columns), 1.3 * rows), squeeze=False)
    for r in range(rows):
        images = [originals[r]] + [reconstructions[name][r] for name in reconstructions]
        for c, image in enumerate(images):
            axis = axes[r, c]
            if image.shape[-1] == 1:
                axis.imshow(image[..., 0], cmap="gray", vmin=0.0, vmax=1.0)
            else:
                axis.imshow(np.clip(image, 0.0, 1.0))
            axis.set_xticks([])
            axis.set_yticks([])
            if r == 0:
                axis.set_title(columns[c].replace("__", "\n"), fontsize=6)
    write_bytes_once(path, _figure_bytes(figure))
    return rows


def orderings(ctx: RunContext) -> Dict[str, Tuple[List[str], str]]:
    """Studied orderings as (run ids from weakest to strongest, metric)."""
    inversion, surrogate = ctx.config.inversion, ctx.config.surrogate
    input_methods = ["prediction_only"] + [
        run_id_for(m, "grad_cam") for m in ("flatten", "cnn", "unet", "flatten_unet")
    ]
    return {
        "input_methods": (input_methods, "attack_accuracy"),
        "input_methods_ssim": (input_methods, "ssim"),
        "explanation_types": (
            ["prediction_only"] + [run_id_for("flatten_unet", k) for k in ("lrp", "gradient", "grad_cam", "grad_input")],
            "ssim",
        ),
        "multi_explanations": (
            [run_id_for(inversion.multi_method, k) for k in ("grad_cam", "sigma_cam", "partial_cam")],
            "attack_accuracy",
        ),
        "surrogate": (
            ["prediction_only", "surrogate__rs_cam", "surrogate__s_cam", run_id_for(surrogate.method, "grad_cam")],
            "attack_accuracy",
        ),
    }


def summarize_ordering(run_ids: Sequence[str], metric: str, reports: Dict[str, MetricsReport]) -> Optional[Dict[str, Any]]:
    """Means, adjacent checks and the end-to-end paired difference of one ordering.

    The first pair must hold strictly when it starts from prediction_only;
    later pairs may tie. Returns None when fewer than two runs are present.
    """
    present = [run_id for run_id in run_ids if run_id in reports]
    means = {}
    for run_id in present:
        summary = _aggregate(reports[run_id], metric)
        if summary is not None:
            means[run_id] = summary["mean"]
    present = [run_id for run_id in present if run_id in means]
    if len(present) < 2:
        return None
    adjacent = []
    for i, (lower, upper) in enumerate(zip(present, present[1:])):
        strict = i == 0 and lower == "prediction_only"
        holds = means[lower] < means[upper] if strict else means[lower] <= means[upper]
        adjacent.append({"lower": lower, "upper": upper, "strict": strict, "holds": bool(holds)})
    try:
        end_to_end = paired_difference(reports[present[-1]], reports[present[0]], metric)
    except DatasetValidationError as e:
        logger.warning(f"End-to-end difference {present[-1]} - {present[0]} unavailable: {e}")
        end_to_end = None
    return {
        "metric": metric,
        "runs": present,
        "means": means,
        "adjacent": adjacent,
        "holds": all(pair["holds"] for pair in adjacent),
        "end_to_end": end_to_end,
    }


def render_report(ctx: RunContext) -> Tuple[Dict[str, Path], Dict[str, Any]]:
    """Render every chart, the image grid and ``summary.json`` under ``report/``."""
    runs = build_run_matrix(ctx.config)
    reports = {run.run_id: MetricsReport.load(ctx.evaluation_dir(run.run_id)) for run in runs}
    directory = ctx.report_dir
    artifacts: Dict[str, Path] = {}

    for metric in ctx.config.report.metrics:
        table = bar_table(runs, reports, metric)
        if table.empty:
            logger.warning(f"No run reports {metric}; skipping its chart")
            continue
        artifacts[f"bars_{metric}"] = render_bar_chart(table, metric, directory / f"bars_{metric}.png")

    reconstructions = {}
    source_index = None
    for run in runs:
        with np.load(ctx.evaluation_dir(run.run_id) / "reconstructions.npz") as data:
            reconstructions[run.run_id] = data["reconstructions"]
            source_index = data["source_index"]
    rows = 0
    if source_index is not None:
        rows = render_image_grid(
            ctx.images(source_index), reconstructions, ctx.config.report.samples, directory / "reconstructions.png"
        )
        artifacts["grid"] = directory / "reconstructions.png"

    summary: Dict[str, Any] = {"config_hash": ctx.config.config_hash(), "orderings": {}, "improvement_over_prediction_only": {}}
    for name, (run_ids, metric) in orderings(ctx).items():
        result = summarize_ordering(run_ids, metric, reports)
        if result is None:
            logger.info(f"Ordering {name} needs at least two evaluated runs; skipped")
            continue
        summary["orderings"][name] = result
    if "prediction_only" in reports:
        baseline = reports["prediction_only"]
        for run_id, report in reports.items():
            if run_id == "prediction_only":
                continue
            ratios = {}
            for metric in ctx.config.report.metrics:
                if _aggregate(report, metric) is None or _aggregate(baseline, metric) is None:
                    continue
                ratio = improvement_ratio(report, baseline, metric)
                ratios[metric] = ratio if np.isfinite(ratio) else None
            summary["improvement_over_prediction_only"][run_id] = ratios
    artifacts["summary"] = write_json_once(directory / "summary.json", summary)
    return artifacts, {"charts": sum(1 for k in artifacts if k.startswith("bars_")), "grid_rows": rows}
