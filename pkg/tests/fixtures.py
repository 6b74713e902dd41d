"""Synthetic datasets and configurations shared by the tests."""

from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from xai_inversion.core.config import ExperimentConfig
from xai_inversion.data.profiles import DatasetProfile

TINY_PROFILE = DatasetProfile(name="tiny", image_size=(8, 8), channels=1, class_count=3)


def synthetic_digits(count: int, seed: int = 0, side: int = 28, classes: int = 10) -> Tuple[np.ndarray, np.ndarray]:
    """uint8 images whose class decides where a bright block sits on a black background."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count, dtype=np.int64) % classes
    images = np.zeros((count, side, side), dtype=np.uint8)
    block = side // 5
    for i, label in enumerate(labels):
        row, col = divmod(int(label), 4)
        top, left = 2 + row * block + 1, 2 + col * block + 1
        images[i, top:top + block, left:left + block] = rng.integers(180, 256, size=(block, block))
    return images, labels


def idx_bytes(array: np.ndarray) -> bytes:
    """Encode an unsigned-byte IDX container."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim]) + b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    return header + array.tobytes()


def write_idx_dataset(directory: Path, images: np.ndarray, labels: np.ndarray) -> Path:
    """Write the MNIST training IDX pair into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "train-images-idx3-ubyte").write_bytes(idx_bytes(images))
    (directory / "train-labels-idx1-ubyte").write_bytes(idx_bytes(labels.astype(np.uint8)))
    return directory


def random_images(count: int, seed: int = 0, shape: Tuple[int, int, int] = (8, 8, 1)) -> np.ndarray:
    """float32 images in [0, 1]."""
    return np.random.default_rng(seed).random((count,) + shape).astype(np.float32)


def tiny_config(root: Path, source: Path, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Smallest configuration that runs the whole pipeline on synthetic MNIST-shaped data."""
    fast = {"epochs": 1, "batch_size": 16, "learning_rate": 1e-3}
    data: Dict[str, Any] = {
        "dataset": {"profile": "mnist", "source": str(source), "limit": 60},
        "run": {"seed": 3, "output_dir": str(root / "runs"), "width_scale": 0.0625, "eval_batch_size": 32},
        "target": fast,
        "evaluation": fast,
        "inversion": {
            "methods": ["prediction_only", "flatten_unet"],
            "explanations": ["grad_cam"],
            "multi_explanations": [],
            "training": fast,
        },
        "surrogate": {
            "enabled": True,
            "classifier": fast,
            "explanation_inverter": fast,
            "image_inverter": fast,
        },
        "report": {"samples": 3},
    }
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return ExperimentConfig.model_validate(data)
