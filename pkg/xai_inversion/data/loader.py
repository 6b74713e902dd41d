"""
Dataset loading and preprocessing.

Two source layouts are understood:

* a directory holding the MNIST IDX files (``train-images-idx3-ubyte`` and
  friends, optionally gzipped); train and test files are concatenated in that
  order;
* a directory of image files plus ``labels.csv`` with the columns
  ``filename,label`` and an optional ``attack_label``.

Every record is preprocessed to the profile geometry with intensities in
[0, 1]. Preprocessed collections can be cached as ``.npz`` with a JSON
sidecar recording the profile and a checksum.
"""

import gzip
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from ..core.exceptions import DatasetLoadError, DatasetValidationError
from ..core.io import PathLike, npz_bytes, read_json, sha256_arrays, write_bytes_once, write_json_once
from .profiles import DatasetProfile, ImageTensor

logger = logging.getLogger("xai_inversion.data")

LABELS_MANIFEST = "labels.csv"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".pgm")
IDX_PAIRS = (
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
)
# ITU-R 601-2 luma, the transform PIL applies for mode "L"
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class LabeledImageCollection:
    """Preprocessed images with target-task and attack-task labels.

    Attributes:
        images: float32 array of shape (N, H, W, C) in [0, 1].
        labels: int64 target-task labels, shape (N,).
        attack_labels: int64 attack-task labels, shape (N,).
        profile: Profile the images conform to.
        source: Where the collection came from.
    """

    images: np.ndarray
    labels: np.ndarray
    attack_labels: np.ndarray
    profile: DatasetProfile
    source: str = ""

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.attack_labels = np.asarray(self.attack_labels, dtype=np.int64)
        count = len(self.images)
        if self.images.shape[1:] != self.profile.image_shape:
            raise DatasetValidationError(
                f"Images have shape {self.images.shape[1:]}, profile {self.profile.name!r} "
                f"expects {self.profile.image_shape}"
            )
        if len(self.labels) != count or len(self.attack_labels) != count:
            raise DatasetValidationError("Image and label counts differ")
        _check_label_range(self.labels, self.profile.class_count, "label")
        _check_label_range(self.attack_labels, self.profile.attack_class_count, "attack_label")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def class_count(self) -> int:
        return self.profile.class_count

    def image(self, index: int) -> ImageTensor:
        """Return one image as an ``ImageTensor``."""
        return ImageTensor(self.images[index])

    def subset(self, indices: Sequence[int]) -> "LabeledImageCollection":
        """Return the records at ``indices`` (in the given order)."""
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageCollection(
            images=self.images[indices],
            labels=self.labels[indices],
            attack_labels=self.attack_labels[indices],
            profile=self.profile,
            source=self.source,
        )

    def checksum(self) -> str:
        """SHA-256 over images and both label arrays."""
        return sha256_arrays([self.images, self.labels, self.attack_labels])


def _check_label_range(labels: np.ndarray, count: int, column: str) -> None:
    if len(labels) == 0:
        return
    bad = np.flatnonzero((labels < 0) | (labels >= count))
    if len(bad):
        first = int(bad[0])
        logger.error(f"{column} {labels[first]} at record {first} outside [0, {count})")
        raise DatasetValidationError(
            f"{len(bad)} {column}(s) outside [0, {count}); first at record {first} "
            f"(value {int(labels[first])})"
        )


def _as_array(raw_image: Any) -> np.ndarray:
    if isinstance(raw_image, ImageTensor):
        return raw_image.pixels
    if isinstance(raw_image, Image.Image):
        if raw_image.mode not in ("L", "RGB", "I", "I;16", "F"):
            raw_image = raw_image.convert("RGB")
        return np.asarray(raw_image)
    try:
        array = np.asarray(raw_image)
    except Exception as e:
        raise DatasetLoadError(f"Cannot decode image input: {e}")
    if array.dtype == object or not (np.issubdtype(array.dtype, np.number) or array.dtype == bool):
        raise DatasetLoadError(f"Not an image: unsupported element type {array.dtype}")
    return array


def _dynamic_range(dtype: np.dtype) -> float:
    if np.issubdtype(dtype, np.integer):
        return float(np.iinfo(dtype).max)
    return 1.0


def preprocess_batch(
    raw_images: Any, profile: DatasetProfile, dynamic_range: Optional[float] = None
) -> np.ndarray:
    """Preprocess a stack of raw images to the profile geometry.

    Args:
        raw_images: Array of shape (N, H, W) or (N, H, W, C).
        profile: Target profile.
        dynamic_range: Maximum raw intensity; defaults to the dtype maximum
            for integer data and 1.0 for floats.

    Returns:
        float32 array of shape (N, *profile.image_shape) with values in [0, 1].
    """
    array = _as_array(raw_images)
    if array.ndim == 3:
        array = array[..., None]
    if array.ndim != 4 or array.shape[0] == 0 or min(array.shape[1:3]) < 1:
        raise DatasetLoadError(f"Not an image stack: shape {array.shape}")

    maximum = dynamic_range or _dynamic_range(array.dtype)
    pixels = array.astype(np.float32) / np.float32(maximum)

    channels = pixels.shape[-1]
    if profile.channels == 1 and channels in (3, 4):
        pixels = pixels[..., :3] @ LUMA_WEIGHTS
        pixels = pixels[..., None]
    elif profile.channels == 1 and channels == 2:
        pixels = pixels[..., :1]
    elif profile.channels == 3 and channels == 1:
        pixels = np.repeat(pixels, 3, axis=-1)
    elif profile.channels != channels:
        raise DatasetLoadError(f"Cannot map {channels} channels onto {profile.channels}")

    if pixels.shape[1:3] != tuple(profile.image_size):
        batch = torch.from_numpy(np.ascontiguousarray(pixels.transpose(0, 3, 1, 2)))
        batch = F.interpolate(batch, size=tuple(profile.image_size), mode="bilinear", align_corners=False)
        pixels = batch.numpy().transpose(0, 2, 3, 1)

    return np.clip(pixels, 0.0, 1.0).astype(np.float32)


def preprocess(
    raw_image: Any, profile: DatasetProfile, dynamic_range: Optional[float] = None
) -> ImageTensor:
    """Preprocess one raw image.

    Divides by the dynamic-range maximum, converts to grayscale when the
    profile has one channel and resizes bilinearly to the profile size.

    Args:
        raw_image: (H, W) or (H, W, C) pixel grid, or a PIL image.
        profile: Target profile.
        dynamic_range: Maximum raw intensity (default: dtype maximum).

    Returns:
        The preprocessed image.

    Raises:
        DatasetLoadError: If the input is not an image.
    """
    array = _as_array(raw_image)
    if array.ndim not in (2, 3):
        raise DatasetLoadError(f"Not an image: shape {array.shape}")
    return ImageTensor(preprocess_batch(array[None], profile, dynamic_range)[0])


def _open_maybe_gzip(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return f.read()


def read_idx(path: PathLike) -> np.ndarray:
    """Decode an IDX container (unsigned-byte payloads only).

    Raises:
        DatasetLoadError: If the header is malformed or truncated.
    """
    path = Path(path)
    try:
        data = _open_maybe_gzip(path)
    except OSError as e:
        raise DatasetLoadError(f"Cannot read IDX file {path}: {e}", record=str(path))
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] != 0x08:
        raise DatasetLoadError(f"Not an unsigned-byte IDX file: {path}", record=str(path))
    ndim = data[3]
    header_end = 4 + 4 * ndim
    dims = tuple(int.from_bytes(data[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    expected = int(np.prod(dims)) if dims else 0
    if len(data) - header_end != expected:
        raise DatasetLoadError(
            f"IDX payload of {path} has {len(data) - header_end} bytes, header promises {expected}",
            record=str(path),
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header_end).reshape(dims)


def _find(directory: Path, stem: str) -> Optional[Path]:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.exists():
            return candidate
    # torchvision-style "train-images.idx3-ubyte"
    dotted = stem.replace("-idx", ".idx")
    for candidate in (directory / dotted, directory / f"{dotted}.gz"):
        if candidate.exists():
            return candidate
    return None


def _load_idx_directory(directory: Path) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for image_stem, label_stem in IDX_PAIRS:
        image_path = _find(directory, image_stem)
        label_path = _find(directory, label_stem)
        if image_path is None and label_path is None:
            continue
        if image_path is None or label_path is None:
            missing = image_stem if image_path is None else label_stem
            raise DatasetLoadError(f"IDX pair incomplete in {directory}: {missing} missing", record=missing)
        pair_images = read_idx(image_path)
        pair_labels = read_idx(label_path)
        if len(pair_images) != len(pair_labels):
            raise DatasetLoadError(
                f"{image_path.name} holds {len(pair_images)} images but {label_path.name} "
                f"holds {len(pair_labels)} labels",
                record=image_path.name,
            )
        logger.info(f"Read {len(pair_images)} records from {image_path.name}")
        images.append(pair_images)
        labels.append(pair_labels.astype(np.int64))
    if not images:
        return None
    return np.concatenate(images), np.concatenate(labels)


def _decode_file(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("L", "RGB", "I", "I;16", "F"):
                img = img.convert("RGB")
            return np.asarray(img)
    except FileNotFoundError:
        raise DatasetLoadError(f"Image listed in {LABELS_MANIFEST} not found: {path.name}", record=path.name)
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetLoadError(f"Cannot decode image {path.name}: {e}", record=path.name)


def _load_image_directory(
    directory: Path, profile: DatasetProfile, limit: Optional[int], workers: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    manifest = directory / LABELS_MANIFEST
    if not manifest.exists():
        has_images = any(p.suffix.lower() in IMAGE_SUFFIXES for p in directory.iterdir())
        if not has_images:
            raise DatasetLoadError(f"No images found in {directory}: zero instances")
        raise DatasetLoadError(f"Image directory {directory} has no {LABELS_MANIFEST}", record=LABELS_MANIFEST)

    try:
        table = pd.read_csv(manifest)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DatasetLoadError(f"Cannot parse {manifest}: {e}", record=LABELS_MANIFEST)
    missing_columns = {"filename", "label"} - set(table.columns)
    if missing_columns:
        raise DatasetLoadError(f"{manifest} lacks columns {sorted(missing_columns)}", record=LABELS_MANIFEST)
    if limit is not None:
        table = table.iloc[:limit]
    if len(table) == 0:
        raise DatasetLoadError(f"{manifest} lists zero instances", record=LABELS_MANIFEST)

    for column in ("label", "attack_label"):
        if column in table.columns and not pd.api.types.is_integer_dtype(table[column]):
            bad = table[pd.to_numeric(table[column], errors="coerce").isna()]
            record = str(bad["filename"].iloc[0]) if len(bad) else None
            raise DatasetValidationError(f"Non-integer {column} in {manifest} (first: {record})")

    paths = [directory / str(name) for name in table["filename"]]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        decoded = list(pool.map(_decode_file, paths))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        processed = list(pool.map(lambda raw: preprocess(raw, profile).pixels, decoded))

    labels = table["label"].to_numpy(dtype=np.int64)
    if "attack_label" in table.columns:
        attack_labels = table["attack_label"].to_numpy(dtype=np.int64)
    else:
        attack_labels = labels.copy()
    return np.stack(processed), labels, attack_labels


def load_dataset(
    profile: DatasetProfile,
    source_path: PathLike,
    limit: Optional[int] = None,
    workers: int = 8,
) -> LabeledImageCollection:
    """Load and preprocess a labelled image dataset.

    Args:
        profile: Dataset profile to conform to.
        source_path: IDX directory, or image directory with ``labels.csv``.
        limit: Keep only the first ``limit`` records.
        workers: Threads used to decode and preprocess image files.

    Returns:
        The preprocessed collection.

    Raises:
        DatasetLoadError: If the source is missing, empty or corrupt.
        DatasetValidationError: If a label lies outside the profile's range.
    """
    source = Path(source_path)
    if not source.exists():
        logger.error(f"Dataset source not found: {source}")
        raise DatasetLoadError(f"Dataset source not found: {source}", record=str(source))
    if not source.is_dir():
        raise DatasetLoadError(f"Dataset source must be a directory: {source}", record=str(source))

    idx = _load_idx_directory(source)
    if idx is not None:
        raw_images, labels = idx
        if limit is not None:
            raw_images, labels = raw_images[:limit], labels[:limit]
        _check_label_range(labels, profile.class_count, "label")
        images = preprocess_batch(raw_images, profile)
        attack_labels = labels.copy()
    else:
        images, labels, attack_labels = _load_image_directory(source, profile, limit, workers)

    collection = LabeledImageCollection(
        images=images, labels=labels, attack_labels=attack_labels, profile=profile, source=str(source)
    )
    logger.info(
        f"Loaded {len(collection)} instances from {source} "
        f"({profile.class_count} target classes, image shape {profile.image_shape})"
    )
    return collection


def save_collection(collection: LabeledImageCollection, path: PathLike) -> Path:
    """Cache a preprocessed collection as ``.npz`` plus a JSON sidecar.

    Args:
        collection: Collection to cache.
        path: Destination ``.npz`` path; the sidecar is ``<path>.json``.

    Returns:
        Path of the array container.
    """
    path = Path(path)
    payload = npz_bytes(images=collection.images, labels=collection.labels, attack_labels=collection.attack_labels)
    write_bytes_once(path, payload)
    write_json_once(
        path.with_suffix(path.suffix + ".json"),
        {
            "profile": collection.profile.to_dict(),
            "count": len(collection),
            "sha256": collection.checksum(),
            "source": collection.source,
        },
    )
    logger.info(f"Cached {len(collection)} instances to {path}")
    return path


def load_cached_collection(path: PathLike, profile: DatasetProfile) -> LabeledImageCollection:
    """Load a collection written by :func:`save_collection`.

    Raises:
        DatasetLoadError: If the cache is missing, was built for another
            profile, or fails its checksum.
    """
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not path.exists() or not sidecar_path.exists():
        raise DatasetLoadError(f"Cached collection not found: {path}", record=str(path))
    sidecar: Dict[str, Any] = read_json(sidecar_path)
    if sidecar.get("profile") != profile.to_dict():
        raise DatasetLoadError(f"Cache {path} was built for another profile", record=str(path))
    with np.load(path) as arrays:
        collection = LabeledImageCollection(
            images=arrays["images"],
            labels=arrays["labels"],
            attack_labels=arrays["attack_labels"],
            profile=profile,
            source=sidecar.get("source", str(path)),
        )
    if collection.checksum() != sidecar.get("sha256"):
        logger.error(f"Checksum mismatch for cached collection {path}")
        raise DatasetLoadError(f"Checksum mismatch for cached collection {path}", record=str(path))
    return collection


