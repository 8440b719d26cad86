"""Frame-rate conversion: linear for scalar channels, SLERP for orientation."""

from __future__ import annotations

import logging

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from humimic.exceptions import ContractViolation
from humimic.postprocess.sequence import MotionSequence

logger = logging.getLogger(__name__)


def _interp(times: np.ndarray, new_times: np.ndarray, values: np.ndarray) -> np.ndarray:
    flat = values.reshape(len(times), -1)
    out = np.stack([np.interp(new_times, times, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return out.reshape((len(new_times),) + values.shape[1:])


def resample(seq: MotionSequence, target_fps: float) -> MotionSequence:
    """Resample joints and root pose to ``target_fps``; augmented channels are dropped."""
    if not target_fps > 0:
        raise ContractViolation(f"target rate must be positive, got {target_fps}")
    if seq.num_frames < 2:
        raise ContractViolation("resampling needs at least two frames")
    if np.isclose(target_fps, seq.fps, rtol=0, atol=1e-12):
        return seq.strip().copy()

    times = np.arange(seq.num_frames) / seq.fps
    duration = times[-1]
    count = int(np.floor(duration * target_fps + 1e-9)) + 1
    new_times = np.arange(count) / target_fps
    new_times[-1] = min(new_times[-1], duration)

    slerp = Slerp(times, Rotation.from_quat(seq.root_orientation))
    logger.debug(f"resampling {seq.name!r}: {seq.fps} Hz -> {target_fps} Hz ({seq.num_frames} -> {count} frames)")
    return MotionSequence(
        fps=float(target_fps),
        joints=_interp(times, new_times, seq.joints),
        root_translation=_interp(times, new_times, seq.root_translation),
        root_orientation=slerp(new_times).as_quat(),
        name=seq.name,
        joint_names=seq.joint_names,
        meta=dict(seq.meta),
    )
