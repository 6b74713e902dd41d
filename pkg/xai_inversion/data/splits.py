"""
Disjoint split protocol.

Half of the collection trains the target model; the other half belongs to the
attacker and is divided 80/20 into attack-train and attack-test. Boundary
rounding favours the earlier partition (target, then attack-train).
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from ..core.exceptions import SplitError
from ..core.io import sha256_arrays

logger = logging.getLogger("xai_inversion.data")

MIN_COLLECTION_SIZE = 10
PARTITIONS = ("target", "attack_train", "attack_test")


@dataclass(frozen=True)
class SplitPlan:
    """Index sets of the three disjoint partitions.

    Attributes:
        target_indices: Sorted indices used to train the target model.
        attack_train_indices: Sorted indices the attacker trains on.
        attack_test_indices: Sorted indices the attack is evaluated on.
        seed: Seed of the shuffle.
    """

    target_indices: np.ndarray
    attack_train_indices: np.ndarray
    attack_test_indices: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return len(self.target_indices) + len(self.attack_train_indices) + len(self.attack_test_indices)

    def indices(self, partition: str) -> np.ndarray:
        """Indices of a named partition."""
        if partition not in PARTITIONS:
            raise SplitError(f"Unknown partition {partition!r}; choose one of {PARTITIONS}")
        return getattr(self, f"{partition}_indices")

    def partition_of(self, index: int) -> str:
        """Name of the partition holding ``index``."""
        for name in PARTITIONS:
            values = self.indices(name)
            position = np.searchsorted(values, index)
            if position < len(values) and values[position] == index:
                return name
        raise SplitError(f"Index {index} is outside the split plan of size {self.size}")

    def checksum(self) -> str:
        """SHA-256 over the three index sets."""
        return sha256_arrays([self.target_indices, self.attack_train_indices, self.attack_test_indices])

    def to_dict(self) -> Dict[str, Any]:
        """Convert the plan to a summary dictionary (sizes, seed, checksum).

        Returns:
            Dictionary representation of the plan.
        """
        return {
            "seed": self.seed,
            "target": len(self.target_indices),
            "attack_train": len(self.attack_train_indices),
            "attack_test": len(self.attack_test_indices),
            "checksum": self.checksum(),
        }


def split_sizes(collection_size: int) -> Tuple[int, int, int]:
    """Partition sizes for a collection of ``collection_size`` records."""
    target = (collection_size + 1) // 2
    rest = collection_size - target
    attack_train = (4 * rest + 4) // 5
    return target, attack_train, rest - attack_train


def make_splits(collection_size: int, seed: int) -> SplitPlan:
    """Shuffle and partition ``range(collection_size)``.

    Args:
        collection_size: Number of records.
        seed: Shuffle seed.

    Returns:
        A deterministic SplitPlan.

    Raises:
        SplitError: If fewer than ten records are available.
    """
    if collection_size < MIN_COLLECTION_SIZE:
        logger.error(f"Cannot split {collection_size} records")
        raise SplitError(
            f"Need at least {MIN_COLLECTION_SIZE} records to split, got {collection_size}"
        )
    target, attack_train, _ = split_sizes(collection_size)
    order = np.random.default_rng(seed).permutation(collection_size).astype(np.int64)
    plan = SplitPlan(
        target_indices=np.sort(order[:target]),
        attack_train_indices=np.sort(order[target:target + attack_train]),
        attack_test_indices=np.sort(order[target + attack_train:]),
        seed=seed,
    )
    logger.info(
        f"Split {collection_size} records: target={len(plan.target_indices)}, "
        f"attack_train={len(plan.attack_train_indices)}, attack_test={len(plan.attack_test_indices)}"
    )
    return plan


def carve_validation(
    indices: Sequence[int], fraction: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministically hold out ``fraction`` of ``indices``.

    Returns:
        (train, validation) sorted index arrays. The validation part is empty
        when the fraction rounds down to zero records; at least one record
        always stays in train.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if not 0 <= fraction < 1:
        raise SplitError(f"Validation fraction must lie in [0, 1), got {fraction}")
    count = min(int(len(indices) * fraction), max(len(indices) - 1, 0))
    order = np.random.default_rng(seed).permutation(len(indices))
    validation = np.sort(indices[order[:count]])
    train = np.sort(indices[order[count:]])
    return train, validation
