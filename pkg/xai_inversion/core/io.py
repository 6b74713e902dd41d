"""
Artifact I/O helpers.

Run artifacts are append-only: a path is written once, and writing the same
bytes again is a no-op so completed stages can be replayed safely.
"""

import hashlib
import io
import json
import logging
import zipfile
from pathlib import Path
from typing import Any, Iterable, Union

import numpy as np

from .exceptions import ArtifactExistsError

logger = logging.getLogger("xai_inversion.io")

PathLike = Union[str, Path]


def sha256_bytes(data: bytes) -> str:
    """Hex SHA-256 of a byte string."""
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    """Hex SHA-256 of a file's content."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_arrays(arrays: Iterable[np.ndarray]) -> str:
    """Hex SHA-256 over the dtype, shape and bytes of several arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode())
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def npz_bytes(**arrays: np.ndarray) -> bytes:
    """Encode arrays as an uncompressed ``.npz`` whose bytes depend only on the arrays.

    ``np.savez`` stamps each member with the current time; members here carry
    a fixed timestamp so identical arrays give identical files.
    """
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
        for name, array in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asanyarray(array), allow_pickle=False)
            archive.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_EPOCH), member.getvalue())
    return buffer.getvalue()


def canonical_json(payload: Any) -> str:
    """Stable JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_bytes_once(path: PathLike, data: bytes) -> Path:
    """Write ``data`` to ``path`` unless an identical file already exists.

    Raises:
        ArtifactExistsError: If the file exists with different content.
    """
    path = Path(path)
    if path.exists():
        if path.read_bytes() == data:
            logger.debug(f"Artifact unchanged: {path}")
            return path
        logger.error(f"Refusing to overwrite artifact: {path}")
        raise ArtifactExistsError(f"Artifact already exists with different content: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return path


def write_json_once(path: PathLike, payload: Any) -> Path:
    """JSON variant of :func:`write_bytes_once`."""
    return write_bytes_once(path, canonical_json(payload).encode("utf-8"))


def read_json(path: PathLike) -> Any:
    """Read a JSON document."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    """Replace a JSON document atomically (used for growing manifests)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(canonical_json(payload), encoding="utf-8")
    tmp.replace(path)
    return path
