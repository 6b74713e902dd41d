"""
Image and dataset profile types.

A ``DatasetProfile`` fixes the geometry every preprocessed image must have and
the label arity of the target and attack tasks. ``ImageTensor`` is one
preprocessed image.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from ..core.exceptions import ConfigurationError, DatasetValidationError

logger = logging.getLogger("xai_inversion.data")


@dataclass(frozen=True)
class ImageTensor:
    """A single H x W x C image with intensities in [0, 1].

    Attributes:
        pixels: float32 array of shape (H, W, C).
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float32)
        if pixels.ndim != 3 or min(pixels.shape) < 1:
            raise DatasetValidationError(f"ImageTensor needs an (H, W, C) grid, got shape {pixels.shape}")
        if not np.isfinite(pixels).all() or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise DatasetValidationError("ImageTensor pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class DatasetProfile:
    """Geometry and label arity of a dataset.

    Attributes:
        name: Profile identifier.
        image_size: (H, W) after preprocessing.
        channels: Channel count after preprocessing (1 = grayscale).
        class_count: Number of target-task classes |C|.
        label_kind: "target" when the attack task reuses the target labels,
            "attack" when records carry a separate attack-task label.
        attack_class_count: Number of attack-task classes.
        ssim_sigma: Gaussian window sigma calibrated for this dataset.
        description: Free-form note.
    """

    name: str
    image_size: Tuple[int, int]
    channels: int
    class_count: int
    label_kind: str = "target"
    attack_class_count: int = 0
    ssim_sigma: float = 1.5
    description: str = ""
    extra: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.class_count < 2:
            raise ConfigurationError(f"Profile {self.name!r}: class_count must be >= 2, got {self.class_count}")
        if min(self.image_size) < 1 or self.channels < 1:
            raise ConfigurationError(f"Profile {self.name!r}: image size and channels must be positive")
        if self.label_kind not in ("target", "attack"):
            raise ConfigurationError(f"Profile {self.name!r}: unknown label_kind {self.label_kind!r}")
        if self.attack_class_count == 0:
            object.__setattr__(self, "attack_class_count", self.class_count)
        if self.label_kind == "target" and self.attack_class_count != self.class_count:
            raise ConfigurationError(
                f"Profile {self.name!r}: shared labels need attack_class_count == class_count"
            )

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        """(H, W, C) of a preprocessed image."""
        return (self.image_size[0], self.image_size[1], self.channels)

    def to_dict(self) -> Dict[str, Any]:
        """Convert the profile to a dictionary.

        Returns:
            Dictionary representation of the profile.
        """
        return {
            "name": self.name,
            "image_size": list(self.image_size),
            "channels": self.channels,
            "class_count": self.class_count,
            "label_kind": self.label_kind,
            "attack_class_count": self.attack_class_count,
            "ssim_sigma": self.ssim_sigma,
        }


BUILTIN_PROFILES: Dict[str, DatasetProfile] = {
    "mnist": DatasetProfile(
        name="mnist",
        image_size=(32, 32),
        channels=1,
        class_count=10,
        ssim_sigma=1.5,
        description="Handwritten digits; digit recognition for both tasks",
    ),
    "icv_mefed": DatasetProfile(
        name="icv_mefed",
        image_size=(128, 128),
        channels=1,
        class_count=6,
        label_kind="attack",
        attack_class_count=115,
        ssim_sigma=1.5,
        description="Facial expressions; emotion target task, identity attack task",
    ),
    "celeba": DatasetProfile(
        name="celeba",
        image_size=(256, 256),
        channels=1,
        class_count=1000,
        ssim_sigma=2.5,
        description="Cropped celebrity faces; identity for both tasks",
    ),
}


def get_profile(name: str) -> DatasetProfile:
    """Look up a built-in dataset profile.

    Args:
        name: Profile name.

    Returns:
        The profile.

    Raises:
        ConfigurationError: If the name is unknown.
    """
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        logger.error(f"Unknown dataset profile: {name}")
        raise ConfigurationError(
            f"Unknown dataset profile {name!r}; choose one of {sorted(BUILTIN_PROFILES)}"
        )


def resolve_profile(section: Any) -> DatasetProfile:
    """Build the profile described by a ``[dataset]`` config section.

    Built-in names resolve to their profile; any geometry keys set in the
    section override it. A name that is not built in must give
    ``image_size`` and ``class_count``.

    Args:
        section: A ``DatasetSection``.

    Returns:
        The resolved profile.
    """
    overrides = {
        key: getattr(section, key)
        for key in ("channels", "class_count", "attack_class_count", "ssim_sigma")
        if getattr(section, key, None) is not None
    }
    if getattr(section, "image_size", None) is not None:
        overrides["image_size"] = (section.image_size, section.image_size)

    base = BUILTIN_PROFILES.get(section.profile)
    if base is None:
        if "image_size" not in overrides or "class_count" not in overrides:
            logger.error(f"Custom profile {section.profile!r} lacks image_size or class_count")
            raise ConfigurationError(
                f"Profile {section.profile!r} is not built in; set dataset.image_size and dataset.class_count"
            )
        attack = overrides.get("attack_class_count", overrides["class_count"])
        return DatasetProfile(
            name=section.profile,
            image_size=overrides["image_size"],
            channels=overrides.get("channels", 1),
            class_count=overrides["class_count"],
            label_kind="attack" if attack != overrides["class_count"] else "target",
            attack_class_count=attack,
            ssim_sigma=overrides.get("ssim_sigma", 1.5),
        )
    if not overrides:
        return base

    values = base.to_dict()
    values.update(overrides)
    values["image_size"] = tuple(values["image_size"])
    if base.label_kind == "target" and "attack_class_count" not in overrides:
        values["attack_class_count"] = values["class_count"]
    values["label_kind"] = "attack" if values["attack_class_count"] != values["class_count"] else "target"
    return DatasetProfile(**values)
