"""
Run context: everything stages share for one configuration.

The context resolves the dataset profile, loads (and caches) the dataset,
derives the split plan, opens the run manifest and knows where every
artifact lives.
"""

import logging
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from ..core.config import ExperimentConfig, TrainingConfig, TrainingSection
from ..core.exceptions import ConfigurationError
from ..core.seeding import seed_everything
from ..data.loader import LabeledImageCollection, load_cached_collection, load_dataset, save_collection
from ..data.profiles import DatasetProfile, resolve_profile
from ..data.splits import SplitPlan, make_splits
from ..models.spec import ModelSpec
from ..models.zoo import TARGET_TABLES, classifier_spec, evaluation_spec, target_spec
from .manifest import RunManifest
from .matrix import RunSpec

logger = logging.getLogger("xai_inversion.pipeline")

# per-stage offsets keep the seeds of independently trained models apart
SEED_OFFSETS = {
    "target": 0,
    "evaluation": 1,
    "inversion": 2,
    "surrogate_target": 3,
    "explanation_inverter": 4,
    "image_inverter": 5,
}


class RunContext:
    """Shared state of one configured run."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.profile: DatasetProfile = resolve_profile(config.dataset)
        self.run_dir: Path = config.run_dir()
        self.seed = config.run.seed
        self.manifest = RunManifest.open(self.run_dir, config.config_hash(), config.to_dict())
        seed_everything(self.seed)

    # paths

    @property
    def data_path(self) -> Path:
        return self.run_dir / "data" / "collection.npz"

    @property
    def target_path(self) -> Path:
        return self.run_dir / "models" / "target.pt"

    @property
    def evaluation_model_path(self) -> Path:
        return self.run_dir / "models" / "evaluation.pt"

    @property
    def breach_dir(self) -> Path:
        return self.run_dir / "breach"

    def inversion_path(self, run: RunSpec) -> Path:
        return self.run_dir / "inversion" / f"{run.run_id}.pt"

    def surrogate_dir(self, mode: str) -> Path:
        return self.run_dir / "surrogate" / mode

    def evaluation_dir(self, run_id: str) -> Path:
        return self.run_dir / "evaluation" / run_id

    def analysis_dir(self, run_id: str) -> Path:
        return self.run_dir / "analysis" / run_id

    @property
    def report_dir(self) -> Path:
        return self.run_dir / "report"

    # data

    @cached_property
    def collection(self) -> LabeledImageCollection:
        """The preprocessed dataset, cached in the run directory when enabled."""
        dataset = self.config.dataset
        if dataset.cache and self.data_path.exists():
            return load_cached_collection(self.data_path, self.profile)
        collection = load_dataset(self.profile, dataset.source, limit=dataset.limit)
        if dataset.cache:
            save_collection(collection, self.data_path)
        return collection

    @cached_property
    def plan(self) -> SplitPlan:
        plan = make_splits(len(self.collection), self.seed)
        self.manifest.record_splits(
            {
                "sha256": plan.checksum(),
                "collection_sha256": self.collection.checksum(),
                "sizes": {"target": len(plan.target_indices), "attack_train": len(plan.attack_train_indices),
                          "attack_test": len(plan.attack_test_indices)},
            }
        )
        return plan

    # models and training

    def training_config(self, section: TrainingSection, role: str) -> TrainingConfig:
        return section.to_training_config(self.seed + SEED_OFFSETS[role])

    def target_spec(self) -> ModelSpec:
        return target_spec(self.profile, self.config.run.width_scale)

    def evaluation_spec(self) -> ModelSpec:
        return evaluation_spec(self.profile, self.config.run.width_scale)

    def surrogate_spec(self) -> ModelSpec:
        """Surrogate architecture: the target's, or another built-in table."""
        architecture = self.config.surrogate.architecture
        if architecture == "target":
            return self.target_spec()
        if architecture not in TARGET_TABLES:
            raise ConfigurationError(
                f"Unknown surrogate architecture {architecture!r}; use 'target' or one of {sorted(TARGET_TABLES)}"
            )
        conv_widths, fc_width = TARGET_TABLES[architecture]
        return classifier_spec(
            f"{self.profile.name}_surrogate_{architecture}",
            self.profile.image_shape,
            self.profile.class_count,
            conv_widths,
            fc_width,
            self.config.run.width_scale,
        )

    def surrogate_collection(self) -> Optional[LabeledImageCollection]:
        """Out-of-distribution attacker data, when configured."""
        section = self.config.surrogate.dataset
        if section is None:
            return None
        profile = resolve_profile(section)
        if profile.image_shape != self.profile.image_shape or profile.class_count != self.profile.class_count:
            raise ConfigurationError(
                f"Surrogate dataset {profile.name!r} must match the target's image shape and class count"
            )
        return load_dataset(profile, section.source, limit=section.limit)

    def images(self, indices: np.ndarray) -> np.ndarray:
        return self.collection.images[np.asarray(indices, dtype=np.int64)]
