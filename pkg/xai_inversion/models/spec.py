"""
Declarative network specifications.

A ``ModelSpec`` is an ordered list of ``LayerSpec`` rows, the same columns a
layer table has (kind, kernel, stride, padding, feature map, outputs). Layers
normally consume the previous layer's output. A layer may instead name its
``inputs``: fully connected layers concatenate the flattened outputs of every
named source, and the reserved names ``prediction`` and ``explanation`` refer
to the inputs of an inversion model. ``bypass_link`` names an earlier layer
whose output is concatenated channel-wise to this layer's input.

Shapes are (H, W, C); a fully connected output of width n is (1, 1, n).
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..core.exceptions import SpecValidationError

logger = logging.getLogger("xai_inversion.models")

LAYER_KINDS = ("conv", "pool", "fc", "upsample")
ACTIVATIONS = ("relu", "softmax", "none")
MODEL_INPUTS = ("image", "prediction", "explanation")

Shape = Tuple[int, int, int]


@dataclass(frozen=True)
class LayerSpec:
    """One row of a layer table.

    Attributes:
        kind: One of conv, pool, fc, upsample.
        name: Unique layer name.
        out_channels: Output channels (conv/upsample), width (fc); ignored for pool.
        kernel: Square kernel size.
        stride: Square stride.
        padding: Zero padding.
        activation: relu, softmax (applied by ``predict``) or none.
        bypass_link: Earlier layer concatenated to this layer's input.
        feature_map: Declared (H, W) of the output, checked when set.
        inputs: Explicit input sources (see module docstring).
    """

    kind: str
    name: str
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    activation: str = "relu"
    bypass_link: Optional[str] = None
    feature_map: Optional[Tuple[int, int]] = None
    inputs: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        """Convert the layer to a JSON-compatible dictionary."""
        data = asdict(self)
        data["feature_map"] = list(self.feature_map) if self.feature_map else None
        data["inputs"] = list(self.inputs)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        values = dict(data)
        if values.get("feature_map") is not None:
            values["feature_map"] = tuple(values["feature_map"])
        values["inputs"] = tuple(values.get("inputs") or ())
        return cls(**values)


def conv(name: str, out_channels: int, feature_map: Optional[int] = None, **kwargs: Any) -> LayerSpec:
    """3x3 stride-1 padding-1 convolution."""
    fm = (feature_map, feature_map) if feature_map else None
    return LayerSpec("conv", name, out_channels, kernel=3, stride=1, padding=1, feature_map=fm, **kwargs)


def pool(name: str, feature_map: Optional[int] = None) -> LayerSpec:
    """2x2 stride-2 max pool."""
    fm = (feature_map, feature_map) if feature_map else None
    return LayerSpec("pool", name, kernel=2, stride=2, padding=0, activation="none", feature_map=fm)


def fc(name: str, width: int, **kwargs: Any) -> LayerSpec:
    """Fully connected layer."""
    return LayerSpec("fc", name, width, kernel=1, stride=1, padding=0, **kwargs)


def upsample(name: str, out_channels: int, feature_map: Optional[int] = None, seed: bool = False,
             **kwargs: Any) -> LayerSpec:
    """Transposed convolution: 4x4 stride 2 (doubling), or stride 1 from a 1x1 seed."""
    fm = (feature_map, feature_map) if feature_map else None
    if seed:
        return LayerSpec("upsample", name, out_channels, kernel=4, stride=1, padding=0, feature_map=fm, **kwargs)
    return LayerSpec("upsample", name, out_channels, kernel=4, stride=2, padding=1, feature_map=fm, **kwargs)


@dataclass(frozen=True)
class ModelSpec:
    """Declarative network.

    Attributes:
        name: Spec identifier.
        layers: Ordered layer rows.
        input_shape: (H, W, C) of the image input (classifiers) or of the
            output image (inversion models).
        class_count: |C|.
        role: "classifier" or "inversion".
        explanation_shape: (H, W, D) of the explanation input, if consumed.
        metadata: Free-form JSON-compatible notes.
    """

    name: str
    layers: Tuple[LayerSpec, ...]
    input_shape: Shape
    class_count: int
    role: str = "classifier"
    explanation_shape: Optional[Shape] = None
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def layer(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def conv_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.kind == "conv"]

    def to_dict(self) -> Dict[str, Any]:
        """Convert the spec to a JSON-compatible dictionary."""
        return {
            "name": self.name,
            "role": self.role,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "explanation_shape": list(self.explanation_shape) if self.explanation_shape else None,
            "layers": [layer.to_dict() for layer in self.layers],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        return cls(
            name=data["name"],
            layers=tuple(LayerSpec.from_dict(layer) for layer in data["layers"]),
            input_shape=tuple(data["input_shape"]),
            class_count=int(data["class_count"]),
            role=data.get("role", "classifier"),
            explanation_shape=tuple(data["explanation_shape"]) if data.get("explanation_shape") else None,
            metadata=dict(data.get("metadata") or {}),
        )


def _fail(message: str, layer: Optional[str]) -> None:
    logger.error(message)
    raise SpecValidationError(message, layer=layer)


def _model_inputs(spec: ModelSpec) -> Dict[str, Shape]:
    if spec.role == "classifier":
        return {"image": tuple(spec.input_shape)}
    inputs: Dict[str, Shape] = {"prediction": (1, 1, spec.class_count)}
    if spec.explanation_shape is not None:
        inputs["explanation"] = tuple(spec.explanation_shape)
    return inputs


def infer_shapes(spec: ModelSpec) -> Dict[str, Shape]:
    """Walk the spec and compute every layer's output shape.

    Validates kinds, shape arithmetic, declared feature maps, bypass links,
    the role restrictions on pool/upsample layers and the output width or
    image shape.

    Args:
        spec: Spec to check.

    Returns:
        Output shape per layer name, plus the model input shapes.

    Raises:
        SpecValidationError: Naming the first inconsistent layer.
    """
    if spec.role not in ("classifier", "inversion"):
        _fail(f"Spec {spec.name!r}: unknown role {spec.role!r}", None)
    if not spec.layers:
        _fail(f"Spec {spec.name!r} has no layers", None)

    shapes: Dict[str, Shape] = dict(_model_inputs(spec))
    previous = "image" if spec.role == "classifier" else "prediction"
    seen_decoder = False

    for layer in spec.layers:
        where = f"Spec {spec.name!r}, layer {layer.name!r}"
        if layer.name in shapes:
            _fail(f"{where}: duplicate layer name", layer.name)
        if layer.kind not in LAYER_KINDS:
            _fail(f"{where}: unknown kind {layer.kind!r}", layer.name)
        if layer.activation not in ACTIVATIONS:
            _fail(f"{where}: unknown activation {layer.activation!r}", layer.name)
        if layer.kind == "upsample" and spec.role != "inversion":
            _fail(f"{where}: upsample layers belong to inversion models only", layer.name)
        if layer.kind == "upsample":
            seen_decoder = True
        if layer.kind == "pool" and seen_decoder:
            _fail(f"{where}: pool layers belong to encoders only", layer.name)

        sources = layer.inputs or (previous,)
        for source in sources:
            if source not in shapes:
                _fail(f"{where}: input {source!r} is not an earlier layer or model input", layer.name)

        if layer.kind == "fc":
            width = sum(h * w * c for h, w, c in (shapes[s] for s in sources))
            if layer.out_channels < 1:
                _fail(f"{where}: fc width must be positive", layer.name)
            out: Shape = (1, 1, layer.out_channels)
        else:
            if len(sources) != 1:
                _fail(f"{where}: only fc layers may take several inputs", layer.name)
            in_shape = shapes[sources[0]]
            h, w, c = in_shape
            if layer.bypass_link is not None:
                if layer.bypass_link not in shapes or layer.bypass_link in MODEL_INPUTS:
                    _fail(f"{where}: bypass link {layer.bypass_link!r} names no earlier layer", layer.name)
                bh, bw, bc = shapes[layer.bypass_link]
                if (bh, bw) != (h, w):
                    _fail(
                        f"{where}: bypass link {layer.bypass_link!r} has feature map {bh}x{bw}, "
                        f"this layer's input is {h}x{w}",
                        layer.name,
                    )
                c = c + bc
            k, s, p = layer.kernel, layer.stride, layer.padding
            if k < 1 or s < 1 or p < 0:
                _fail(f"{where}: kernel/stride must be >= 1 and padding >= 0", layer.name)
            if layer.kind == "upsample":
                oh, ow = (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k
            else:
                oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if oh < 1 or ow < 1:
                _fail(f"{where}: feature map collapses to {oh}x{ow}", layer.name)
            channels = c if layer.kind == "pool" else layer.out_channels
            if channels < 1:
                _fail(f"{where}: output channels must be positive", layer.name)
            out = (oh, ow, channels)

        if layer.feature_map is not None and tuple(layer.feature_map) != out[:2]:
            _fail(
                f"{where}: computed feature map {out[0]}x{out[1]} differs from declared "
                f"{layer.feature_map[0]}x{layer.feature_map[1]}",
                layer.name,
            )
        shapes[layer.name] = out
        previous = layer.name

    final = spec.layers[-1]
    if spec.role == "classifier":
        if final.kind != "fc" or shapes[final.name][2] != spec.class_count:
            _fail(
                f"Spec {spec.name!r}, layer {final.name!r}: final layer must be fc of width "
                f"{spec.class_count}, got {final.kind} with {shapes[final.name][2]} outputs",
                final.name,
            )
    elif shapes[final.name] != tuple(spec.input_shape):
        _fail(
            f"Spec {spec.name!r}, layer {final.name!r}: output {shapes[final.name]} differs from "
            f"image shape {tuple(spec.input_shape)}",
            final.name,
        )
    return shapes


def input_channels(spec: ModelSpec, shapes: Dict[str, Shape], layer: LayerSpec, previous: str) -> int:
    """Input channels (conv/upsample) or input width (fc) of ``layer``."""
    sources = layer.inputs or (previous,)
    if layer.kind == "fc":
        return sum(h * w * c for h, w, c in (shapes[s] for s in sources))
    channels = shapes[sources[0]][2]
    if layer.bypass_link is not None:
        channels += shapes[layer.bypass_link][2]
    return channels


def scale_width(width: int, width_scale: float) -> int:
    """Scale a hidden width, keeping at least one unit."""
    return max(1, int(round(width * width_scale)))
