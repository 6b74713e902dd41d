"""
Data pipeline for XAI Inversion.

This module loads labelled image datasets, preprocesses them to a dataset
profile and builds the disjoint target / attack-train / attack-test splits.
"""

from .loader import (
    LabeledImageCollection,
    load_cached_collection,
    load_dataset,
    preprocess,
    preprocess_batch,
    read_idx,
    save_collection,
)
from .profiles import BUILTIN_PROFILES, DatasetProfile, ImageTensor, get_profile, resolve_profile
from .splits import SplitPlan, carve_validation, make_splits

__all__ = [
    "BUILTIN_PROFILES",
    "DatasetProfile",
    "ImageTensor",
    "LabeledImageCollection",
    "SplitPlan",
    "carve_validation",
    "get_profile",
    "load_cached_collection",
    "load_dataset",
    "make_splits",
    "preprocess",
    "preprocess_batch",
    "read_idx",
    "resolve_profile",
    "save_collection",
]
