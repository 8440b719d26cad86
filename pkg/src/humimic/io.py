"""
Artifact I/O
============

Every file the pipeline writes goes through this module:

- atomic writes (temp file in the target directory, then ``os.replace``)
- ``HMRA`` binary arrays: magic, uint16 version, uint16 ndim, uint32 dims,
  little-endian float32 row-major payload
- motion clips as ``.npz`` with a JSON ``meta`` entry
- JSON artifacts with a top-level ``meta`` block
- CSV metric traces via pandas with a leading ``# meta:`` comment line
"""

from __future__ import annotations

import hashlib
import io as _io
import json
import logging
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import numpy as np
import pandas as pd

from humimic.exceptions import (
    ContractViolation,
    DatasetError,
    DatasetVersionError,
    TruncatedArrayError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ARRAY_MAGIC = b"HMRA"
ARRAY_VERSION = 1
_ARRAY_HEADER = struct.Struct("<4sHH")
_META_PREFIX = "# meta: "


@contextmanager
def atomic_write(path: PathLike, mode: str = "wb") -> Iterator[Any]:
    """Write to a sibling temp file and move it over ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# HMRA arrays
# ---------------------------------------------------------------------------


def encode_array(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    header = _ARRAY_HEADER.pack(ARRAY_MAGIC, ARRAY_VERSION, array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    return header + dims + array.tobytes(order="C")


def decode_array(data: bytes, source: Optional[PathLike] = None) -> np.ndarray:
    path = str(source) if source is not None else None
    if len(data) < _ARRAY_HEADER.size:
        raise TruncatedArrayError("array header is truncated", path)
    magic, version, ndim = _ARRAY_HEADER.unpack_from(data, 0)
    if magic != ARRAY_MAGIC:
        raise DatasetError(f"bad array magic {magic!r}", path)
    if version != ARRAY_VERSION:
        raise DatasetVersionError(f"array version {version} is not supported (expected {ARRAY_VERSION})", path)
    offset = _ARRAY_HEADER.size
    if len(data) < offset + 4 * ndim:
        raise TruncatedArrayError("array shape is truncated", path)
    shape: Tuple[int, ...] = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    payload = data[offset:]
    if len(payload) != expected:
        raise TruncatedArrayError(f"array payload has {len(payload)} bytes, expected {expected}", path)
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)


def write_array(path: PathLike, array: np.ndarray) -> str:
    """Write an HMRA file; returns the sha256 of the bytes written."""
    data = encode_array(array)
    with atomic_write(path) as handle:
        handle.write(data)
    return sha256_bytes(data)


def read_array(path: PathLike) -> Tuple[np.ndarray, str]:
    """Read an HMRA file; returns the array and the sha256 of its bytes."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read array: {e}", str(path)) from e
    return decode_array(data, path), sha256_bytes(data)


# ---------------------------------------------------------------------------
# JSON / CSV artifacts
# ---------------------------------------------------------------------------


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default)


def write_json(path: PathLike, payload: Dict[str, Any], meta: Optional[Dict[str, Any]] = None) -> Path:
    body = dict(payload)
    if meta is not None:
        body["meta"] = meta
    with atomic_write(path, "w") as handle:
        handle.write(dumps(body))
    return Path(path)


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def write_csv(path: PathLike, frame: pd.DataFrame, meta: Optional[Dict[str, Any]] = None) -> Path:
    buffer = _io.StringIO()
    if meta is not None:
        buffer.write(_META_PREFIX + json.dumps(meta, sort_keys=True, default=_json_default) + "\n")
    frame.to_csv(buffer, index=False)
    with atomic_write(path, "w") as handle:
        handle.write(buffer.getvalue())
    return Path(path)


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, Any]]:
    """Inverse of ``write_csv``; returns the frame and its meta block (or ``{}``)."""
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
    meta: Dict[str, Any] = {}
    skip = 0
    if first.startswith(_META_PREFIX):
        meta = json.loads(first[len(_META_PREFIX):])
        skip = 1
    return pd.read_csv(path, skiprows=skip), meta


# ---------------------------------------------------------------------------
# Motion clips
# ---------------------------------------------------------------------------


def save_arrays(path: PathLike, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    """``.npz`` with an extra ``meta`` entry holding JSON text."""
    path = Path(path)
    if path.suffix != ".npz":
        raise ContractViolation(f"motion files use the .npz suffix, got {path.name!r}")
    buffer = _io.BytesIO()
    np.savez(buffer, meta=np.array(dumps(meta)), **{k: np.asarray(v) for k, v in arrays.items()})
    with atomic_write(path) as handle:
        handle.write(buffer.getvalue())
    return path


def load_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DatasetError("motion file does not exist", str(path))
    with np.load(path, allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files if name != "meta"}
        meta = json.loads(str(archive["meta"])) if "meta" in archive.files else {}
    return arrays, meta
