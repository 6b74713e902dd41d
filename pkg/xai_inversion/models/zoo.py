"""Built-in classifier specs for the supported dataset profiles."""

import logging
from typing import Dict, List, Optional, Tuple

from ..data.profiles import DatasetProfile
from .spec import LayerSpec, ModelSpec, conv, fc, infer_shapes, pool, scale_width

logger = logging.getLogger("xai_inversion.models")

# (conv widths, fc width) per image side; each conv is followed by a 2x2 pool.
# Grad-CAM is taken at the last conv, before its pool: 16x16 for MNIST (32x32
# input) and 32x32 for iCV-MEFED (128x128 input). A 16x16 iCV-MEFED CAM would
# need a fourth conv stage; the three-stage table keeps the CAM at 32x32.
TARGET_TABLES: Dict[str, Tuple[Tuple[int, ...], int]] = {
    "mnist": ((128, 256), 512),
    "icv_mefed": ((128, 256, 512), 512),
    "celeba": ((128, 256, 512, 1024), 1024),
}
DEFAULT_TABLE = ((128, 256), 512)


def classifier_spec(
    name: str,
    image_shape: Tuple[int, int, int],
    class_count: int,
    conv_widths: Tuple[int, ...],
    fc_width: int,
    width_scale: float = 1.0,
) -> ModelSpec:
    """Build a conv/pool stack followed by two fully connected layers.

    Args:
        name: Spec name.
        image_shape: (H, W, C) of the input.
        class_count: Output width |C|.
        conv_widths: Output channels of each 3x3 conv; a 2x2 pool follows each.
        fc_width: Width of the penultimate fully connected layer.
        width_scale: Multiplier for hidden widths.

    Returns:
        The validated spec.
    """
    layers: List[LayerSpec] = []
    side = image_shape[0]
    for stage, width in enumerate(conv_widths, start=1):
        layers.append(conv(f"conv{stage}", scale_width(width, width_scale), feature_map=side))
        side //= 2
        layers.append(pool(f"pool{stage}", feature_map=side))
    layers.append(fc("fc1", scale_width(fc_width, width_scale)))
    layers.append(fc("fc2", class_count, activation="softmax"))
    spec = ModelSpec(
        name=name,
        layers=tuple(layers),
        input_shape=tuple(image_shape),
        class_count=class_count,
        role="classifier",
        metadata={"width_scale": width_scale},
    )
    infer_shapes(spec)
    return spec


def target_spec(
    profile: DatasetProfile,
    width_scale: float = 1.0,
    class_count: Optional[int] = None,
    name: Optional[str] = None,
) -> ModelSpec:
    """Classifier spec for a dataset profile.

    Built-in profiles use their layer tables; other profiles get the
    two-stage table of the MNIST target.

    Args:
        profile: Dataset profile.
        width_scale: Multiplier for hidden widths (1.0 reproduces the tables).
        class_count: Output width; defaults to the profile's target classes.
            Pass the attack class count for the attack-evaluation model.
        name: Spec name; defaults to ``<profile>_target``.

    Returns:
        The validated spec.
    """
    conv_widths, fc_width = TARGET_TABLES.get(profile.name, DEFAULT_TABLE)
    if profile.image_size[0] % (2 ** len(conv_widths)):
        logger.warning(
            f"Image side {profile.image_size[0]} is not divisible by {2 ** len(conv_widths)}; "
            "pooling floors the feature maps"
        )
    return classifier_spec(
        name=name or f"{profile.name}_target",
        image_shape=profile.image_shape,
        class_count=class_count if class_count is not None else profile.class_count,
        conv_widths=conv_widths,
        fc_width=fc_width,
        width_scale=width_scale,
    )


def evaluation_spec(profile: DatasetProfile, width_scale: float = 1.0) -> ModelSpec:
    """Attack-evaluation classifier: the target architecture on the attack task."""
    return target_spec(
        profile, width_scale, class_count=profile.attack_class_count, name=f"{profile.name}_evaluation"
    )
