"""Conversions between H x W x C numpy images and N x C x H x W torch batches."""

from typing import Iterator, Sequence, Union

import numpy as np
import torch

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence[np.ndarray]]


def to_batch(images: ArrayLike, device: Union[str, torch.device] = "cpu") -> torch.Tensor:
    """Convert one image (H, W, C) or a stack (N, H, W, C) to an NCHW tensor.

    Torch tensors are assumed to be NCHW already and are only moved; floating
    tensors keep their precision, everything else becomes float32.
    """
    if isinstance(images, torch.Tensor):
        batch = images if images.dim() == 4 else images.unsqueeze(0)
        dtype = batch.dtype if batch.is_floating_point() else torch.float32
        return batch.to(device=device, dtype=dtype)
    array = np.asarray(getattr(images, "pixels", images), dtype=np.float32)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4:
        raise ValueError(f"expected (H, W, C) or (N, H, W, C) images, got shape {array.shape}")
    return torch.from_numpy(np.ascontiguousarray(array.transpose(0, 3, 1, 2))).to(device)


def to_images(batch: torch.Tensor) -> np.ndarray:
    """Convert an NCHW tensor back to an (N, H, W, C) float32 array."""
    return batch.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float32)


def iter_slices(count: int, batch_size: int) -> Iterator[slice]:
    """Yield consecutive ``slice`` objects covering ``range(count)``."""
    for start in range(0, count, batch_size):
        yield slice(start, min(start + batch_size, count))
