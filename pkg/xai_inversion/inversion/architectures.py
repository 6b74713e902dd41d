"""
Inversion architecture generator.

Every inversion model is a transposed-convolution decoder seeded from a fully
connected layer. The decoder channel count at resolution r is 4096 / r
(floored at 16), with the image channels at the output resolution; a 128x128
image therefore gets the 1024, 512, 256, 128, 64, 1
progression and a 32x32 image keeps its first three stages.

Input methods differ in how the explanation reaches the seed layer:

* ``prediction_only``: no explanation.
* ``flatten``: the flattened explanation is concatenated to the prediction.
* ``cnn``: a conv/pool encoder reduces the explanation to a 64-wide code.
* ``unet``: the encoder plus bypass links from every encoder conv to the
  decoder conv of the same resolution.
* ``flatten_unet``: ``unet`` plus the flattened explanation.
"""

import logging
from typing import List, Optional, Tuple

from ..core.config import INVERSION_METHODS
from ..core.exceptions import SpecValidationError
from ..models.spec import LayerSpec, ModelSpec, Shape, conv, fc, infer_shapes, pool, scale_width, upsample

logger = logging.getLogger("xai_inversion.inversion")

ENCODER_CODE_WIDTH = 64
MIN_DECODER_CHANNELS = 16
BYPASS_METHODS = ("unet", "flatten_unet")
ENCODER_METHODS = ("cnn", "unet", "flatten_unet")
FLATTEN_METHODS = ("flatten", "flatten_unet")


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


def stage_channels(resolution: int, image_side: int, image_channels: int, width_scale: float = 1.0) -> int:
    """Channels of the decoder (and mirrored encoder) stage at ``resolution``."""
    if resolution == image_side:
        return image_channels
    return scale_width(max(MIN_DECODER_CHANNELS, 4096 // resolution), width_scale)


def _encoder(
    explanation_shape: Shape, image_side: int, image_channels: int, width_scale: float
) -> Tuple[List[LayerSpec], List[str]]:
    side, width, _ = explanation_shape
    if side != width:
        raise SpecValidationError(f"Encoder needs a square explanation, got {side}x{width}", layer="enc")
    layers: List[LayerSpec] = []
    convs: List[str] = []
    resolution = side
    while True:
        name = f"enc_conv{resolution}"
        inputs = ("explanation",) if not layers else ()
        layers.append(
            conv(name, stage_channels(resolution, image_side, image_channels, width_scale), resolution, inputs=inputs)
        )
        convs.append(name)
        if resolution <= 2:
            break
        resolution //= 2
        layers.append(pool(f"enc_pool{resolution}", resolution))
        if resolution <= 2:
            break
    layers.append(fc("enc_fc", scale_width(ENCODER_CODE_WIDTH, width_scale)))
    return layers, convs


def inversion_spec(
    method: str,
    image_shape: Shape,
    class_count: int,
    explanation_shape: Optional[Shape] = None,
    width_scale: float = 1.0,
    max_flatten_features: int = 1024,
    name: Optional[str] = None,
) -> ModelSpec:
    """Build the layer table of one inversion model.

    Args:
        method: One of ``INVERSION_METHODS``.
        image_shape: (H, W, C) of the reconstructed image; H must be a power
            of two >= 4.
        class_count: Width |C| of the prediction input.
        explanation_shape: (H_e, W_e, D) of the explanation input; required
            by every method except ``prediction_only`` and ignored by it.
        width_scale: Multiplier for hidden channel widths.
        max_flatten_features: Explanation stacks (D > 1) wider than this
            after flattening pass through a learned 1x1 projection first.
        name: Spec name.

    Returns:
        The validated spec.

    Raises:
        SpecValidationError: If the method is unknown, the image side is not a
            power of two, or the explanation is missing or malformed.
    """
    if method not in INVERSION_METHODS:
        raise SpecValidationError(f"Unknown inversion method {method!r}; choose one of {INVERSION_METHODS}")
    side, width, channels = image_shape
    if side != width or side < 4 or not _is_power_of_two(side):
        raise SpecValidationError(f"Inversion decoders need a square power-of-two image side >= 4, got {side}x{width}")

    if method == "prediction_only":
        explanation_shape = None
    elif explanation_shape is None:
        raise SpecValidationError(f"Method {method!r} consumes an explanation; explanation_shape is required")
    else:
        explanation_shape = tuple(int(v) for v in explanation_shape)

    layers: List[LayerSpec] = []
    encoder_convs: List[str] = []
    fuse_inputs: List[str] = ["prediction"]
    fuse_width = class_count

    if method in ENCODER_METHODS:
        encoder, encoder_convs = _encoder(explanation_shape, side, channels, width_scale)
        layers.extend(encoder)
        fuse_inputs.append("enc_fc")
        fuse_width += encoder[-1].out_channels

    if method in FLATTEN_METHODS:
        eh, ew, depth = explanation_shape
        if depth > 1 and depth * eh * ew > max_flatten_features:
            projected = max(1, max_flatten_features // (eh * ew))
            layers.append(
                LayerSpec("conv", "project", projected, kernel=1, activation="none", inputs=("explanation",))
            )
            fuse_inputs.append("project")
            fuse_width += projected * eh * ew
        else:
            fuse_inputs.append("explanation")
            fuse_width += depth * eh * ew

    layers.append(fc("fuse", fuse_width, inputs=tuple(fuse_inputs)))

    bypass = {}
    if method in BYPASS_METHODS:
        bypass = {int(name[len("enc_conv"):]): name for name in encoder_convs}

    resolution = 4
    while resolution <= side:
        out = stage_channels(resolution, side, channels, width_scale)
        layers.append(upsample(f"up{resolution}", out, resolution, seed=resolution == 4))
        activation = "none" if resolution == side else "relu"
        layers.append(conv(f"dec{resolution}", out, resolution, activation=activation, bypass_link=bypass.get(resolution)))
        resolution *= 2

    spec = ModelSpec(
        name=name or f"{method}_inversion",
        layers=tuple(layers),
        input_shape=tuple(image_shape),
        class_count=class_count,
        role="inversion",
        explanation_shape=explanation_shape,
        metadata={"method": method, "width_scale": width_scale},
    )
    infer_shapes(spec)
    if method in BYPASS_METHODS and not any(layer.bypass_link for layer in spec.layers):
        raise SpecValidationError(
            f"Method {method!r} needs at least one bypass link; explanation {explanation_shape[:2]} shares no "
            f"resolution with the decoder"
        )
    logger.debug(f"Built {method} inversion spec with {len(layers)} layers")
    return spec


def explanation_inverter_spec(
    cam_shape: Tuple[int, int], class_count: int, width_scale: float = 1.0, name: str = "explanation_inverter"
) -> ModelSpec:
    """Prediction-only decoder that outputs a single-channel CAM-sized map."""
    h, w = cam_shape
    return inversion_spec("prediction_only", (h, w, 1), class_count, width_scale=width_scale, name=name)
