"""
Motion files and dataset directories.

A dataset directory holds ``manifest.json`` plus one HMRA array per sequence.
Only differential channels are stored (no world xy, no yaw); absolute root
poses are rebuilt on load by integrating the velocity channels from an anchor
at the origin with the first frame's height and tilt.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from scipy.spatial.transform import Rotation

from humimic import io
from humimic.exceptions import ChecksumError, ContractViolation, DatasetError, DatasetVersionError
from humimic.postprocess.sequence import CHANNELS, MotionSequence, integrate_root, tilt_from_gravity

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DATASET_VERSION = 1
STORED_CHANNELS = tuple(CHANNELS)
_MOTION_ARRAYS = ("joints", "root_translation", "root_orientation") + tuple(
    name for name in CHANNELS if name != "joints"
)


class ChannelEntry(BaseModel):
    name: str
    width: int = Field(..., ge=1)


class SequenceEntry(BaseModel):
    name: str
    file: str
    fps: float = Field(..., gt=0)
    frames: int = Field(..., ge=1)
    cycle: Optional[List[int]] = None
    sha256: str
    joint_names: Optional[List[str]] = None


class Manifest(BaseModel):
    version: int
    channels: List[ChannelEntry]
    sequences: List[SequenceEntry]
    meta: Dict[str, Any] = Field(default_factory=dict)

    @property
    def total_frames(self) -> int:
        return sum(entry.frames for entry in self.sequences)


# ---------------------------------------------------------------------------
# single motion files
# ---------------------------------------------------------------------------


def save_motion(path, seq: MotionSequence, meta: Optional[Dict[str, Any]] = None) -> Path:
    arrays = {name: getattr(seq, name) for name in _MOTION_ARRAYS if getattr(seq, name) is not None}
    info = {
        "fps": seq.fps,
        "name": seq.name,
        "joint_names": seq.joint_names,
        "cycle": list(seq.cycle) if seq.cycle else None,
        "sequence_meta": seq.meta,
    }
    if meta:
        info.update(meta)
    return io.save_arrays(path, arrays, info)


def load_motion(path) -> MotionSequence:
    arrays, info = io.load_arrays(path)
    missing = [name for name in ("joints", "root_translation", "root_orientation") if name not in arrays]
    if missing or "fps" not in info:
        raise DatasetError(f"motion file lacks {missing or ['fps']}", str(path))
    return MotionSequence(
        fps=float(info["fps"]),
        name=info.get("name") or Path(path).stem,
        joint_names=info.get("joint_names"),
        cycle=tuple(info["cycle"]) if info.get("cycle") else None,
        meta=dict(info.get("sequence_meta") or {}),
        **{name: arrays[name] for name in _MOTION_ARRAYS if name in arrays},
    )


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------


def _channel_layout(seq: MotionSequence) -> List[ChannelEntry]:
    return [ChannelEntry(name=name, width=seq.channel(name).shape[1]) for name in STORED_CHANNELS]


def _safe_filename(index: int, name: str) -> str:
    stem = "".join(c if c.isalnum() or c in "-_" else "_" for c in name)[:48]
    return f"{index:04d}_{stem}.hmra"


def build_dataset(
    sequences: Sequence[MotionSequence],
    directory,
    meta: Optional[Dict[str, Any]] = None,
) -> Manifest:
    """Write augmented sequences into ``directory`` and return the manifest."""
    if not sequences:
        raise ContractViolation("a dataset needs at least one sequence")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layout = None
    entries: List[SequenceEntry] = []
    for index, seq in enumerate(sequences):
        if not seq.augmented or seq.contacts is None or seq.phase is None:
            raise ContractViolation(f"sequence {seq.name!r} has not been augmented")
        current = _channel_layout(seq)
        if layout is None:
            layout = current
        elif current != layout:
            raise ContractViolation(f"sequence {seq.name!r} has a different channel layout")
        block = np.concatenate([seq.channel(name) for name in STORED_CHANNELS], axis=1)
        filename = _safe_filename(index, seq.name)
        digest = io.write_array(directory / filename, block)
        entries.append(
            SequenceEntry(
                name=seq.name,
                file=filename,
                fps=seq.fps,
                frames=seq.num_frames,
                cycle=list(seq.cycle) if seq.cycle else None,
                sha256=digest,
                joint_names=seq.joint_names,
            )
        )
    manifest = Manifest(version=DATASET_VERSION, channels=layout, sequences=entries, meta=meta or {})
    io.write_json(directory / MANIFEST_NAME, manifest.model_dump())
    logger.info(f"wrote dataset {directory} with {len(entries)} sequences, {manifest.total_frames} frames")
    return manifest


def read_manifest(directory) -> Manifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError("dataset manifest not found", str(path))
    try:
        raw = io.read_json(path)
    except ValueError as e:
        raise DatasetError(f"manifest is not valid JSON ({e})", str(path)) from e
    version = raw.get("version")
    if version != DATASET_VERSION:
        raise DatasetVersionError(f"dataset version {version} is not supported (expected {DATASET_VERSION})", str(path))
    try:
        return Manifest.model_validate(raw)
    except ValidationError as e:
        raise DatasetError(f"manifest is invalid: {e.errors()[0]['msg']}", str(path)) from e


def _split_channels(block: np.ndarray, layout: List[ChannelEntry]) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    offset = 0
    for entry in layout:
        out[entry.name] = block[:, offset:offset + entry.width]
        offset += entry.width
    return out


def reconstruct_root(channels: Dict[str, np.ndarray], fps: float):
    """Absolute root trajectory anchored at (0, 0, height_0) with zero yaw."""
    height0 = float(channels["height"][0, 0])
    start = tilt_from_gravity(channels["gravity"][0])
    positions, rotations = integrate_root(
        channels["lin_vel"], channels["ang_vel"], 1.0 / fps, np.array([0.0, 0.0, height0]), start
    )
    return positions, Rotation.from_matrix(rotations).as_quat()


def load_dataset(directory, verify: bool = True) -> List[MotionSequence]:
    """Load every sequence; checksums are verified unless ``verify`` is off."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    expected_width = sum(entry.width for entry in manifest.channels)
    sequences: List[MotionSequence] = []
    for entry in manifest.sequences:
        path = directory / entry.file
        block, digest = io.read_array(path)
        if verify and digest != entry.sha256:
            raise ChecksumError("sequence checksum mismatch", str(path))
        if block.ndim != 2 or block.shape != (entry.frames, expected_width):
            raise DatasetError(f"array shape {block.shape} disagrees with manifest", str(path))
        channels = _split_channels(block, manifest.channels)
        translation, orientation = reconstruct_root(channels, entry.fps)
        sequences.append(
            MotionSequence(
                fps=entry.fps,
                name=entry.name,
                joint_names=entry.joint_names,
                root_translation=translation,
                root_orientation=orientation,
                joints=channels["joints"],
                joint_vel=channels["joint_vel"],
                lin_vel=channels["lin_vel"],
                ang_vel=channels["ang_vel"],
                gravity=channels["gravity"],
                height=channels["height"][:, 0],
                contacts=channels["contacts"],
                phase=channels["phase"],
                cycle=tuple(entry.cycle) if entry.cycle else None,
            )
        )
    logger.info(f"loaded {len(sequences)} sequences ({manifest.total_frames} frames) from {directory}")
    return sequences
