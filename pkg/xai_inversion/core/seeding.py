"""Seeding helpers for reproducible runs."""

import random

import numpy as np
import torch


def seed_everything(seed: int) -> torch.Generator:
    """Seed python, numpy and torch and request deterministic kernels.

    Args:
        seed: Seed value.

    Returns:
        A torch generator seeded with ``seed`` for data-loader shuffling.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator
