"""
Run manifest.

``manifest.json`` in the run directory records the config hash, split
checksums and, per completed stage, its artifacts and wall-clock time.
Entries are only ever added; a completed stage is never rewritten.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from ..core.exceptions import ArtifactExistsError, ConfigurationError
from ..core.io import PathLike, read_json, write_json_atomic

logger = logging.getLogger("xai_inversion.pipeline")

MANIFEST_NAME = "manifest.json"


@dataclass
class StageRecord:
    """Completion record of one stage.

    Attributes:
        stage: Stage name.
        artifacts: Artifact paths relative to the run directory.
        seconds: Wall-clock duration.
        finished_at: Unix completion time.
        details: Stage-specific JSON-compatible facts.
    """

    stage: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0
    finished_at: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "artifacts": dict(self.artifacts),
            "seconds": self.seconds,
            "finished_at": self.finished_at,
            "details": dict(self.details),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StageRecord":
        return cls(
            data["stage"],
            dict(data.get("artifacts", {})),
            float(data.get("seconds", 0.0)),
            float(data.get("finished_at", 0.0)),
            dict(data.get("details", {})),
        )


@dataclass
class RunManifest:
    """Append-only record of a run's progress.

    Attributes:
        run_dir: Directory the manifest lives in.
        config_hash: Full SHA-256 of the canonical configuration.
        config: The validated configuration.
        splits: Split checksums and sizes.
        stages: Completed stages by name.
    """

    run_dir: Path
    config_hash: str
    config: Dict[str, Any] = field(default_factory=dict)
    splits: Dict[str, Any] = field(default_factory=dict)
    stages: Dict[str, StageRecord] = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.run_dir / MANIFEST_NAME

    @classmethod
    def open(cls, run_dir: PathLike, config_hash: str, config: Optional[Dict[str, Any]] = None) -> "RunManifest":
        """Load the manifest of ``run_dir`` or start a new one.

        Raises:
            ConfigurationError: If the directory belongs to another config hash.
        """
        run_dir = Path(run_dir)
        path = run_dir / MANIFEST_NAME
        if not path.exists():
            manifest = cls(run_dir, config_hash, dict(config or {}))
            manifest.save()
            return manifest
        data = read_json(path)
        if data["config_hash"] != config_hash:
            logger.error(f"Run directory {run_dir} belongs to config {data['config_hash'][:16]}")
            raise ConfigurationError(
                f"Run directory {run_dir} was created by config {data['config_hash'][:16]}, not {config_hash[:16]}"
            )
        return cls(
            run_dir,
            data["config_hash"],
            data.get("config", {}),
            data.get("splits", {}),
            {name: StageRecord.from_dict(record) for name, record in data.get("stages", {}).items()},
        )

    def is_complete(self, stage: str) -> bool:
        return stage in self.stages

    def artifact(self, stage: str, name: str) -> Path:
        """Absolute path of an artifact recorded by ``stage``."""
        return self.run_dir / self.stages[stage].artifacts[name]

    def record_splits(self, splits: Dict[str, Any]) -> None:
        """Record split checksums once; a different plan for the same run is an error."""
        if self.splits and self.splits != splits:
            raise ArtifactExistsError(f"Run {self.run_dir} already records a different split plan")
        if not self.splits:
            self.splits = dict(splits)
            self.save()

    def complete(
        self,
        stage: str,
        artifacts: Dict[str, Path],
        started: float,
        details: Optional[Dict[str, Any]] = None,
    ) -> StageRecord:
        """Mark ``stage`` complete.

        Raises:
            ArtifactExistsError: If the stage was already recorded.
        """
        if stage in self.stages:
            raise ArtifactExistsError(f"Stage {stage!r} is already recorded in {self.path}")
        now = time.time()
        record = StageRecord(
            stage,
            {name: str(Path(p).relative_to(self.run_dir)) for name, p in artifacts.items()},
            round(now - started, 3),
            now,
            dict(details or {}),
        )
        self.stages[stage] = record
        self.save()
        logger.info(f"Stage {stage} complete in {record.seconds:.1f}s")
        return record

    def to_dict(self) -> Dict[str, Any]:
        """Convert the manifest to a dictionary.

        Returns:
            Dictionary representation of the manifest.
        """
        return {
            "config_hash": self.config_hash,
            "config": self.config,
            "splits": self.splits,
            "stages": {name: record.to_dict() for name, record in self.stages.items()},
        }

    def save(self) -> Path:
        return write_json_atomic(self.path, self.to_dict())
