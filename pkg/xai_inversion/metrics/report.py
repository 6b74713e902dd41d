"""
Per-instance metric tables and their aggregates.

Per-instance results are a long table with the columns
``run_id, instance, metric, value``; aggregates hold, per metric, the mean,
the 90% normal-approximation confidence half-width and the count of finite
values. Non-finite values stay in the table and are left out of aggregates.
"""

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from ..core.exceptions import DatasetValidationError
from ..core.io import PathLike, read_json, write_bytes_once, write_json_once

logger = logging.getLogger("xai_inversion.metrics")

Z_90 = 1.645
COLUMNS = ["run_id", "instance", "metric", "value"]


def aggregate_values(values: Sequence[float], metric: str = "value") -> Dict[str, Any]:
    """Mean and 90% CI half-width (1.645 * population sd / sqrt(n)).

    Raises:
        DatasetValidationError: If fewer than two finite values remain.
    """
    array = np.asarray(values, dtype=np.float64)
    finite = array[np.isfinite(array)]
    excluded = int(len(array) - len(finite))
    if excluded:
        logger.warning(f"Excluding {excluded} non-finite {metric} values from the aggregate")
    if len(finite) < 2:
        raise DatasetValidationError(f"Aggregating {metric} needs at least 2 finite values, got {len(finite)}")
    return {
        "mean": float(finite.mean()),
        "ci90": float(Z_90 * finite.std(ddof=0) / math.sqrt(len(finite))),
        "n": int(len(finite)),
        "excluded": excluded,
    }


@dataclass
class MetricsReport:
    """Per-instance metric rows of one run plus run metadata.

    Attributes:
        run_id: Run-matrix identifier.
        rows: Long table with ``COLUMNS``.
        metadata: Method, explanation kind, dataset, seed, config hash.
    """

    run_id: str
    rows: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_arrays(
        cls,
        run_id: str,
        instances: Sequence[int],
        values: Mapping[str, Sequence[float]],
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "MetricsReport":
        """Build a report from per-metric value arrays aligned with ``instances``."""
        instances = np.asarray(instances, dtype=np.int64)
        frames = []
        for metric in sorted(values):
            column = np.asarray(values[metric], dtype=np.float64)
            if len(column) != len(instances):
                raise DatasetValidationError(f"{metric}: {len(column)} values for {len(instances)} instances")
            frames.append(pd.DataFrame({"run_id": run_id, "instance": instances, "metric": metric, "value": column}))
        rows = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=COLUMNS)
        return cls(run_id, rows, dict(metadata or {}))

    @property
    def metrics(self):
        return sorted(self.rows["metric"].unique())

    def values(self, metric: str) -> pd.Series:
        """Values of ``metric`` indexed by instance."""
        subset = self.rows[self.rows["metric"] == metric]
        return subset.set_index("instance")["value"].sort_index()

    def aggregates(self) -> Dict[str, Dict[str, Any]]:
        """Aggregate of every metric with at least two finite values."""
        result = {}
        for metric in self.metrics:
            try:
                result[metric] = aggregate_values(self.values(metric).to_numpy(), metric)
            except DatasetValidationError as e:
                logger.warning(f"{self.run_id}: {e}")
        return result

    def to_csv(self) -> str:
        ordered = self.rows.sort_values(["metric", "instance"], kind="mergesort")
        buffer = io.StringIO()
        ordered.to_csv(buffer, index=False, columns=COLUMNS, float_format="%.17g", lineterminator="\n")
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        """Aggregates plus metadata.

        Returns:
            JSON-compatible summary of the run.
        """
        return {"run_id": self.run_id, "metadata": dict(self.metadata), "aggregates": self.aggregates()}

    def save(self, directory: PathLike) -> Path:
        """Write ``metrics.csv`` and ``aggregates.json`` (write-once)."""
        directory = Path(directory)
        write_bytes_once(directory / "metrics.csv", self.to_csv().encode("utf-8"))
        write_json_once(directory / "aggregates.json", self.to_dict())
        return directory

    @classmethod
    def load(cls, directory: PathLike) -> "MetricsReport":
        directory = Path(directory)
        rows = pd.read_csv(directory / "metrics.csv", dtype={"run_id": str, "metric": str})
        summary = read_json(directory / "aggregates.json")
        return cls(summary["run_id"], rows, summary.get("metadata", {}))


def aggregate(rows: pd.DataFrame, run_id: Optional[str] = None, metadata: Optional[Dict[str, Any]] = None) -> MetricsReport:
    """Wrap per-instance rows in a report, validating the aggregates.

    Raises:
        DatasetValidationError: If a metric has fewer than two finite rows.
    """
    missing = set(COLUMNS) - set(rows.columns)
    if missing:
        raise DatasetValidationError(f"Metric rows lack columns {sorted(missing)}")
    run_id = run_id if run_id is not None else (str(rows["run_id"].iloc[0]) if len(rows) else "")
    report = MetricsReport(run_id, rows[COLUMNS].copy(), dict(metadata or {}))
    for metric in report.metrics:
        aggregate_values(report.values(metric).to_numpy(), metric)
    return report


def paired_difference(report_a: MetricsReport, report_b: MetricsReport, metric: str) -> Dict[str, Any]:
    """Per-instance difference A - B over shared instances.

    Returns:
        Aggregate of the differences plus ``positive``: whether the 90%
        interval lies above zero.
    """
    a, b = report_a.values(metric), report_b.values(metric)
    joined = pd.concat([a.rename("a"), b.rename("b")], axis=1, join="inner")
    result = aggregate_values((joined["a"] - joined["b"]).to_numpy(), f"{metric} difference")
    result["positive"] = result["mean"] - result["ci90"] > 0
    return result


def improvement_ratio(report: MetricsReport, baseline: MetricsReport, metric: str) -> float:
    """Ratio of mean ``metric`` in ``report`` to the baseline's mean."""
    numerator = aggregate_values(report.values(metric).to_numpy(), metric)["mean"]
    denominator = aggregate_values(baseline.values(metric).to_numpy(), metric)["mean"]
    if denominator == 0:
        return math.inf if numerator > 0 else float("nan")
    return numerator / denominator
