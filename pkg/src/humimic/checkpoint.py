"""
Versioned binary checkpoints.

Layout::

    b"HMCK" | uint16 version | uint32 header length | JSON header | blobs

The JSON header echoes the model config and carries ``kind``, ``config_hash``,
``seed`` and a parameter table (name, shape, offset, sha256). Blobs are
little-endian float64, base parameters first and then the optional adapter
section.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from humimic.exceptions import CheckpointError
from humimic.io import atomic_write, dumps

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HMCK"
CHECKPOINT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    kind: str
    config: Dict[str, Any]
    parameters: Dict[str, np.ndarray]
    adapters: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.parameters.values()))

    def table(self) -> List[Dict[str, Any]]:
        rows = []
        for section, tensors in (("base", self.parameters), ("adapter", self.adapters)):
            for name, value in tensors.items():
                rows.append({"section": section, "name": name, "shape": list(value.shape), "size": int(value.size)})
        return rows


def _pack(tensors: Mapping[str, np.ndarray], offset: int) -> Tuple[List[Dict[str, Any]], List[bytes], int]:
    table, blobs = [], []
    for name, value in tensors.items():
        data = np.ascontiguousarray(value, dtype="<f8").tobytes()
        table.append(
            {"name": name, "shape": list(np.shape(value)), "offset": offset, "sha256": hashlib.sha256(data).hexdigest()}
        )
        blobs.append(data)
        offset += len(data)
    return table, blobs, offset


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    base_table, base_blobs, offset = _pack(checkpoint.parameters, 0)
    adapter_table, adapter_blobs, _ = _pack(checkpoint.adapters, offset)
    header = {
        "kind": checkpoint.kind,
        "config": checkpoint.config,
        "meta": checkpoint.meta,
        "parameters": base_table,
        "adapters": adapter_table,
    }
    header_bytes = dumps(header).encode("utf-8")
    with atomic_write(path) as handle:
        handle.write(_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)))
        handle.write(header_bytes)
        for blob in base_blobs + adapter_blobs:
            handle.write(blob)
    logger.info(f"saved {checkpoint.kind} checkpoint {path} ({checkpoint.num_parameters} parameters)")
    return Path(path)


def _unpack(table: List[Dict[str, Any]], payload: bytes, path: Path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for entry in table:
        shape = tuple(entry["shape"])
        size = 8 * int(np.prod(shape, dtype=np.int64))
        start = int(entry["offset"])
        blob = payload[start:start + size]
        if len(blob) != size:
            raise CheckpointError(f"{path}: tensor {entry['name']!r} is truncated")
        if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"{path}: tensor {entry['name']!r} fails its checksum")
        out[entry["name"]] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    return out


def load_checkpoint(path, kind: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: file is too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} is not supported")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: header is unreadable ({e})") from e
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {header.get('kind')!r}")
    payload = data[start + header_len:]
    return Checkpoint(
        kind=header["kind"],
        config=header.get("config", {}),
        meta=header.get("meta", {}),
        parameters=_unpack(header.get("parameters", []), payload, path),
        adapters=_unpack(header.get("adapters", []), payload, path),
    )
