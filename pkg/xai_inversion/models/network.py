"""
Torch realisation of a ``ModelSpec``.

Every layer row becomes one named module; ``run`` evaluates the rows in order
and returns every intermediate output so explanation methods can reach the
activations they need.
"""

import logging
from typing import Dict, Mapping, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .spec import LayerSpec, ModelSpec, Shape, infer_shapes, input_channels

logger = logging.getLogger("xai_inversion.models")


def _make_module(layer: LayerSpec, in_channels: int) -> nn.Module:
    if layer.kind == "conv":
        return nn.Conv2d(in_channels, layer.out_channels, layer.kernel, layer.stride, layer.padding)
    if layer.kind == "pool":
        return nn.MaxPool2d(layer.kernel, layer.stride, layer.padding)
    if layer.kind == "fc":
        return nn.Linear(in_channels, layer.out_channels)
    return nn.ConvTranspose2d(in_channels, layer.out_channels, layer.kernel, layer.stride, layer.padding)


class SpecNetwork(nn.Module):
    """A network whose layers follow a ``ModelSpec`` row by row.

    Parameters are initialised inside a forked RNG seeded with ``seed``, so
    building a network is deterministic and leaves the global RNG untouched.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.shapes: Dict[str, Shape] = infer_shapes(spec)
        self.input_name = "image" if spec.role == "classifier" else "prediction"

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.layers = nn.ModuleDict()
            previous = self.input_name
            for layer in spec.layers:
                self.layers[layer.name] = _make_module(layer, input_channels(spec, self.shapes, layer, previous))
                previous = layer.name

    def layer_input(self, layer: LayerSpec, outputs: Mapping[str, torch.Tensor], previous: str) -> torch.Tensor:
        """Assemble the tensor a layer consumes from earlier outputs."""
        if layer.kind == "fc":
            sources = layer.inputs or (previous,)
            return torch.cat([outputs[s].flatten(1) for s in sources], dim=1)
        x = outputs[layer.inputs[0] if layer.inputs else previous]
        if x.dim() == 2:
            x = x[:, :, None, None]
        if layer.bypass_link is not None:
            x = torch.cat([x, outputs[layer.bypass_link]], dim=1)
        return x

    def run(self, inputs: Mapping[str, torch.Tensor], stop_at: Optional[str] = None) -> Dict[str, torch.Tensor]:
        """Evaluate the network.

        Args:
            inputs: Model inputs by name (``image``, or ``prediction`` and
                optionally ``explanation``), NCHW or (N, width).
            stop_at: Stop after this layer.

        Returns:
            Model inputs and every evaluated layer output (post-activation).
        """
        outputs: Dict[str, torch.Tensor] = dict(inputs)
        previous = self.input_name
        for layer in self.spec.layers:
            x = self.layer_input(layer, outputs, previous)
            y = self.layers[layer.name](x)
            if layer.activation == "relu":
                y = F.relu(y)
            outputs[layer.name] = y
            previous = layer.name
            if layer.name == stop_at:
                break
        return outputs

    def output_name(self) -> str:
        return self.spec.layers[-1].name

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
