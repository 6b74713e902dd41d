"""
Configuration handling for XAI Inversion.

Experiment configuration lives in a single TOML file. This module validates it
against a pydantic schema, applies command-line overrides and derives the
config hash that names every run directory.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigurationError

logger = logging.getLogger("xai_inversion.config")

CONFIG_ENV_VAR = "XAI_INVERSION_CONFIG"
DEFAULT_CONFIG_PATH = "config/mnist.toml"

EXPLANATION_KINDS = ("gradient", "grad_input", "grad_cam", "lrp")
MULTI_EXPLANATION_KINDS = ("sigma_cam", "partial_cam")
INVERSION_METHODS = ("prediction_only", "flatten", "cnn", "unet", "flatten_unet")


@dataclass(frozen=True)
class TrainingConfig:
    """Optimiser and schedule settings for one training run.

    Attributes:
        learning_rate: ADAM learning rate.
        beta1: ADAM first-moment decay.
        beta2: ADAM second-moment decay.
        batch_size: Mini-batch size.
        epochs: Fixed number of epochs (no early stopping).
        seed: Seed for initialisation-independent randomness (shuffling).
    """

    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {value}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")

    def to_dict(self) -> Dict[str, Any]:
        """Convert the configuration to a dictionary.

        Returns:
            Dictionary representation of the configuration.
        """
        return asdict(self)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainingSection(_Section):
    """Training hyperparameters as written in the config file."""

    learning_rate: float = Field(1e-4, gt=0, description="ADAM learning rate")
    beta1: float = Field(0.5, gt=0, lt=1, description="ADAM beta1")
    beta2: float = Field(0.999, gt=0, lt=1, description="ADAM beta2")
    batch_size: int = Field(64, ge=1, description="Mini-batch size")
    epochs: int = Field(20, ge=0, description="Number of epochs")

    def to_training_config(self, seed: int) -> TrainingConfig:
        """Build the runtime training configuration.

        Args:
            seed: Seed for the run.

        Returns:
            Frozen TrainingConfig.
        """
        return TrainingConfig(seed=seed, **self.model_dump())


class DatasetSection(_Section):
    """Dataset source and profile."""

    profile: str = Field("mnist", description="Built-in profile name, or a new name described below")
    source: str = Field("data/mnist", description="IDX directory or image directory with labels.csv")
    cache: bool = Field(True, description="Cache the preprocessed collection next to the run")
    limit: Optional[int] = Field(None, ge=10, description="Use only the first N records")
    image_size: Optional[int] = Field(None, ge=4, description="Square image side for a custom profile")
    channels: Optional[int] = Field(None, ge=1, description="Channel count for a custom profile")
    class_count: Optional[int] = Field(None, ge=2, description="Target classes for a custom profile")
    attack_class_count: Optional[int] = Field(None, ge=2, description="Attack classes if they differ")
    ssim_sigma: Optional[float] = Field(None, gt=0, description="Calibrated SSIM sigma for a custom profile")


class RunSection(_Section):
    """Run-wide settings."""

    seed: int = Field(7, description="Master seed")
    output_dir: str = Field("runs", description="Root directory for run artifacts")
    width_scale: float = Field(1.0, gt=0, description="Multiplier for hidden channel widths")
    eval_batch_size: int = Field(256, ge=1, description="Batch size for inference passes")


class InversionSection(_Section):
    """The XAI input method x explanation type run matrix."""

    methods: List[str] = Field(default_factory=lambda: list(INVERSION_METHODS))
    explanations: List[str] = Field(default_factory=lambda: list(EXPLANATION_KINDS))
    multi_explanations: List[str] = Field(default_factory=lambda: list(MULTI_EXPLANATION_KINDS))
    multi_method: str = Field("flatten_unet", description="Input method used with explanation stacks")
    output_activation: Literal["clamp", "sigmoid"] = "clamp"
    max_flatten_features: int = Field(1024, ge=1)
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    training: TrainingSection = Field(default_factory=TrainingSection)

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(INVERSION_METHODS))
        if unknown:
            raise ValueError(f"unknown inversion methods: {unknown}")
        return value

    @field_validator("multi_method")
    @classmethod
    def _known_multi_method(cls, value: str) -> str:
        if value not in INVERSION_METHODS or value == "prediction_only":
            raise ValueError(f"multi_method must be an explanation-consuming method, got {value!r}")
        return value

    @field_validator("explanations")
    @classmethod
    def _known_explanations(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(EXPLANATION_KINDS))
        if unknown:
            raise ValueError(f"unknown explanation kinds: {unknown}")
        return value

    @field_validator("multi_explanations")
    @classmethod
    def _known_multi(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(MULTI_EXPLANATION_KINDS))
        if unknown:
            raise ValueError(f"unknown multi-explanation kinds: {unknown}")
        return value


class SurrogateSection(_Section):
    """Attention-transfer attack on a non-explainable target."""

    enabled: bool = True
    mode: Literal["rs_cam", "s_cam"] = Field("rs_cam", description="Explanation fed to the image inverter during training")
    method: str = Field("flatten_unet", description="Image inverter input method")
    architecture: str = Field("target", description="'target' reuses the target spec, otherwise a built-in profile name")
    dataset: Optional[DatasetSection] = Field(None, description="Out-of-distribution attacker data")
    classifier: TrainingSection = Field(default_factory=TrainingSection)
    explanation_inverter: TrainingSection = Field(default_factory=TrainingSection)
    image_inverter: TrainingSection = Field(default_factory=TrainingSection)

    @field_validator("method")
    @classmethod
    def _explainable_method(cls, value: str) -> str:
        if value not in INVERSION_METHODS or value == "prediction_only":
            raise ValueError(f"surrogate method must consume an explanation, got {value!r}")
        return value


class MetricsSection(_Section):
    """Metric parameters."""

    ssim_sigma: Optional[float] = Field(None, gt=0, description="Defaults to the profile's calibrated sigma")


class ReportSection(_Section):
    """Figure and summary settings."""

    samples: int = Field(6, ge=1, description="Rows in the reconstruction grid")
    metrics: List[str] = Field(
        default_factory=lambda: ["attack_accuracy", "ssim", "pixelwise_similarity", "embedding_similarity", "psnr"]
    )


class ExperimentConfig(_Section):
    """Complete experiment configuration."""

    dataset: DatasetSection = Field(default_factory=DatasetSection)
    run: RunSection = Field(default_factory=RunSection)
    target: TrainingSection = Field(default_factory=TrainingSection)
    evaluation: TrainingSection = Field(default_factory=TrainingSection)
    inversion: InversionSection = Field(default_factory=InversionSection)
    surrogate: SurrogateSection = Field(default_factory=SurrogateSection)
    metrics: MetricsSection = Field(default_factory=MetricsSection)
    report: ReportSection = Field(default_factory=ReportSection)

    def canonical_json(self) -> str:
        """Canonical serialisation used for hashing."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 digest of the canonical configuration."""
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def short_hash(self) -> str:
        """Truncated hash used for run directory names."""
        return self.config_hash()[:16]

    def run_dir(self) -> Path:
        """Directory holding every artifact of this configuration."""
        return Path(self.run.output_dir) / self.short_hash()

    def to_dict(self) -> Dict[str, Any]:
        """Convert the configuration to a dictionary.

        Returns:
            Dictionary representation of the configuration.
        """
        return self.model_dump(mode="json")


def _apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return data


def load_config(
    config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """Load configuration from a TOML file.

    Args:
        config_path: Path to the configuration file. If None, looks for the path
            in the XAI_INVERSION_CONFIG environment variable, or uses the default path.
        overrides: Dotted-key overrides applied before validation
            (e.g. ``{"run.seed": 3}``).

    Returns:
        Validated configuration.

    Raises:
        ConfigurationError: If an explicitly named file is missing or the
            content does not validate.
    """
    explicit = config_path is not None or CONFIG_ENV_VAR in os.environ
    if config_path is None:
        config_path = os.environ.get(CONFIG_ENV_VAR, DEFAULT_CONFIG_PATH)

    config_file = Path(config_path)
    data: Dict[str, Any] = {}

    if config_file.exists():
        logger.info(f"Loading configuration from {config_file}")
        try:
            data = toml.load(config_file)
        except toml.TomlDecodeError as e:
            logger.error(f"Error parsing configuration: {e}")
            raise ConfigurationError(f"Invalid configuration file {config_file}: {e}")
    elif explicit:
        logger.error(f"Configuration file not found: {config_file}")
        raise ConfigurationError(f"Configuration file not found: {config_file}")
    else:
        logger.warning(f"Configuration file not found: {config_file}")
        logger.info("Using default configuration")

    data = _apply_overrides(data, overrides or {})

    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        logger.error(f"Configuration does not validate: {e}")
        raise ConfigurationError(f"Invalid configuration: {e}")

    logger.info(f"Configuration loaded (hash {config.short_hash()})")
    return config
