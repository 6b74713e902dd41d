"""
Saliency methods.

The batched ``*_maps`` functions take an NCHW tensor and one class per image
and return tensors; the single-image functions wrap them and return
``ExplanationMap`` / ``ExplanationStack``. Every method differentiates the
pre-softmax logit of the explained class.
"""

import logging
from typing import Any, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..core.exceptions import UnsupportedExplanationError
from ..core.tensors import to_batch
from ..models.classifier import Classifier
from .maps import ExplanationMap, ExplanationStack, compose_cam

logger = logging.getLogger("xai_inversion.xai")

LRP_EPSILON = 1e-6


def _class_tensor(classes: Any, count: int, device: torch.device) -> torch.Tensor:
    tensor = torch.as_tensor(np.asarray(classes, dtype=np.int64).reshape(-1), device=device)
    if len(tensor) == 1 and count > 1:
        tensor = tensor.expand(count)
    if len(tensor) != count:
        raise ValueError(f"Need one class per image: {len(tensor)} classes for {count} images")
    return tensor


def _check_classes(model: Classifier, classes: torch.Tensor) -> None:
    if len(classes) and (int(classes.min()) < 0 or int(classes.max()) >= model.class_count):
        raise ValueError(f"class_index must lie in [0, {model.class_count})")


def _selected_logits(logits: torch.Tensor, classes: torch.Tensor) -> torch.Tensor:
    return logits.gather(1, classes[:, None]).squeeze(1)


def gradient_maps(model: Classifier, images: torch.Tensor, classes: Any) -> torch.Tensor:
    """d logit_c / d x, summed over image channels. Returns (N, H, W)."""
    classes = _class_tensor(classes, len(images), images.device)
    _check_classes(model, classes)
    with torch.enable_grad():
        x = images.detach().clone().requires_grad_(True)
        score = _selected_logits(model(x), classes).sum()
        (grad,) = torch.autograd.grad(score, x)
    return grad.sum(dim=1).detach()


def gradient_input_maps(model: Classifier, images: torch.Tensor, classes: Any) -> torch.Tensor:
    """Gradient times input, summed over image channels. Returns (N, H, W)."""
    classes = _class_tensor(classes, len(images), images.device)
    _check_classes(model, classes)
    with torch.enable_grad():
        x = images.detach().clone().requires_grad_(True)
        score = _selected_logits(model(x), classes).sum()
        (grad,) = torch.autograd.grad(score, x)
    return (grad * images).sum(dim=1).detach()


def partial_cam_maps(model: Classifier, images: torch.Tensor, classes: Any) -> torch.Tensor:
    """alpha_k * A^k at the last conv layer, without ReLU. Returns (N, K, h, w).

    Raises:
        UnsupportedExplanationError: If the model has no conv layer.
    """
    if model.last_conv is None:
        logger.error(f"Model {model.spec.name!r} has no conv layer for Grad-CAM")
        raise UnsupportedExplanationError(f"Grad-CAM needs a conv layer; model {model.spec.name!r} has none")
    classes = _class_tensor(classes, len(images), images.device)
    _check_classes(model, classes)
    with torch.enable_grad():
        outputs = model.run({"image": images.detach()})
        activation = outputs[model.last_conv]
        score = _selected_logits(outputs[model.output_name()], classes).sum()
        (grad,) = torch.autograd.grad(score, activation)
    alpha = grad.mean(dim=(2, 3), keepdim=True)
    return (alpha * activation).detach()


def grad_cam_maps(model: Classifier, images: torch.Tensor, classes: Any) -> torch.Tensor:
    """ReLU of the alpha-weighted activation sum. Returns (N, h, w)."""
    return F.relu(partial_cam_maps(model, images, classes).sum(dim=1))


def sigma_cam_maps(model: Classifier, images: torch.Tensor) -> torch.Tensor:
    """Grad-CAM for every class. Returns (N, |C|, h, w)."""
    slices = [
        grad_cam_maps(model, images, torch.full((len(images),), c, dtype=torch.int64))
        for c in range(model.class_count)
    ]
    return torch.stack(slices, dim=1)


def lrp_maps(model: Classifier, images: torch.Tensor, classes: Any, epsilon: float = LRP_EPSILON) -> torch.Tensor:
    """Epsilon-rule relevance, summed over image channels. Returns (N, H, W).

    The explained logit is redistributed layer by layer in proportion to the
    bias-free contributions ``a_i * w_ij``; relevance passes ReLU unchanged
    and max-pool routes it to the winning input.

    Raises:
        UnsupportedExplanationError: If a layer is not a plain sequential
            conv, pool or fc layer.
    """
    classes = _class_tensor(classes, len(images), images.device)
    _check_classes(model, classes)
    layers = model.spec.layers
    for layer in layers:
        if layer.kind not in ("conv", "pool", "fc") or layer.inputs or layer.bypass_link:
            logger.error(f"LRP cannot propagate through layer {layer.name!r}")
            raise UnsupportedExplanationError(
                f"LRP supports sequential conv/pool/fc layers only; layer {layer.name!r} is {layer.kind}"
            )

    with torch.no_grad():
        outputs = model.run({"image": images})
    logits = outputs[model.output_name()]
    relevance = torch.zeros_like(logits)
    relevance.scatter_(1, classes[:, None], _selected_logits(logits, classes)[:, None])

    names = ["image"] + [layer.name for layer in layers]
    for position in range(len(layers) - 1, -1, -1):
        layer = layers[position]
        module = model.layers[layer.name]
        with torch.enable_grad():
            a = outputs[names[position]].detach().requires_grad_(True)
            if layer.kind == "fc":
                z = F.linear(a.flatten(1), module.weight)
            elif layer.kind == "conv":
                z = F.conv2d(a, module.weight, None, module.stride, module.padding)
            else:
                z = module(a)
            relevance = relevance.reshape(z.shape)
            stabilised = z + epsilon * torch.where(z >= 0, torch.ones_like(z), -torch.ones_like(z))
            sensitivity = (relevance / stabilised).detach()
            sensitivity[z == 0] = 0
            (contribution,) = torch.autograd.grad((z * sensitivity).sum(), a)
        relevance = (a * contribution).detach()
    return relevance.sum(dim=1)


def _single(image: Any, model: Classifier) -> torch.Tensor:
    batch = to_batch(image, next(model.parameters()).device)
    if len(batch) != 1:
        raise ValueError("Expected a single image")
    model.check_input(batch)
    return batch


def gradient_map(model: Classifier, image: Any, class_index: int) -> ExplanationMap:
    """Input gradient of the class logit."""
    values = gradient_maps(model, _single(image, model), [class_index])[0]
    return ExplanationMap(values.cpu().numpy(), "gradient", int(class_index))


def gradient_input_map(model: Classifier, image: Any, class_index: int) -> ExplanationMap:
    """Gradient times input."""
    values = gradient_input_maps(model, _single(image, model), [class_index])[0]
    return ExplanationMap(values.cpu().numpy(), "grad_input", int(class_index))


def grad_cam(model: Classifier, image: Any, class_index: int) -> ExplanationMap:
    """Grad-CAM at the last conv layer (post-ReLU, before the following pool)."""
    values = compose_cam(partial_cams(model, image, class_index).maps)
    return ExplanationMap(values, "grad_cam", int(class_index), source_layer=model.last_conv)


def lrp_map(model: Classifier, image: Any, class_index: int, epsilon: float = LRP_EPSILON) -> ExplanationMap:
    """Epsilon-rule layer-wise relevance propagation."""
    values = lrp_maps(model, _single(image, model), [class_index], epsilon)[0]
    return ExplanationMap(values.cpu().numpy(), "lrp", int(class_index))


def sigma_cam(model: Classifier, image: Any, classes: Optional[Sequence[int]] = None) -> ExplanationStack:
    """Stack of independent ``grad_cam`` calls, one slice per class."""
    classes = range(model.class_count) if classes is None else classes
    maps = np.stack([grad_cam(model, image, c).values for c in classes])
    return ExplanationStack(maps, "sigma_cam", source_layer=model.last_conv)


def partial_cams(model: Classifier, image: Any, class_index: int) -> ExplanationStack:
    """Per-kernel constituents of ``grad_cam``; ReLU of their sum is the CAM."""
    maps = partial_cam_maps(model, _single(image, model), [class_index])[0]
    return ExplanationStack(maps.cpu().numpy(), "partial_cam", int(class_index), source_layer=model.last_conv)
