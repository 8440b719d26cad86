"""Raw retargeted clip -> expert sequence: resample, smooth, augment, find a cycle."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.transform import Rotation

from humimic.kinematics.tree import KinematicTree, clamp_to_limits
from humimic.postprocess.augment import ContactConfig, augment_references
from humimic.postprocess.cycles import extract_cycle
from humimic.postprocess.filters import FilterConfig, butterworth_lowpass
from humimic.postprocess.resample import resample
from humimic.postprocess.sequence import MotionSequence

logger = logging.getLogger(__name__)


class PostprocessConfig(BaseModel):
    filter: FilterConfig = Field(default_factory=FilterConfig)
    contact: ContactConfig = Field(default_factory=ContactConfig)
    cycle_eps: float = Field(0.15, gt=0, description="Joint-space tolerance for the cyclic-subsequence search, rad")
    smooth: bool = Field(True, description="Apply the zero-phase Butterworth low-pass")


def _continuous_quaternions(quats: np.ndarray) -> np.ndarray:
    out = quats.copy()
    for k in range(1, len(out)):
        if np.dot(out[k - 1], out[k]) < 0:
            out[k] = -out[k]
    return out


def smooth_sequence(seq: MotionSequence, config: FilterConfig) -> MotionSequence:
    """Zero-phase low-pass of joints, root translation and root orientation."""
    if seq.num_frames <= config.order:
        logger.warning(f"{seq.name!r} has {seq.num_frames} frames; skipping smoothing")
        return seq.copy()
    joints = butterworth_lowpass(seq.joints, config, fps=seq.fps)
    translation = butterworth_lowpass(seq.root_translation, config, fps=seq.fps)
    quats = butterworth_lowpass(_continuous_quaternions(seq.root_orientation), config, fps=seq.fps)
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return seq.copy(joints=joints, root_translation=translation, root_orientation=Rotation.from_quat(quats).as_quat())


def process_motion(
    seq: MotionSequence,
    tree: KinematicTree,
    config: Optional[PostprocessConfig] = None,
) -> MotionSequence:
    config = config or PostprocessConfig()
    out = resample(seq, config.filter.target_fps)
    if config.smooth:
        out = smooth_sequence(out, config.filter)
    # smoothing can overshoot a limit that the raw clip touched
    out = out.copy(joints=clamp_to_limits(tree, out.joints))
    out = augment_references(out, tree, config.contact)
    cycle = extract_cycle(out.joints, config.cycle_eps) if out.num_frames >= 5 else None
    if cycle is not None:
        out = out.copy(cycle=cycle)
    logger.info(
        f"processed {seq.name!r}: {seq.num_frames} frames @ {seq.fps:g} Hz -> "
        f"{out.num_frames} @ {out.fps:g} Hz, cycle={cycle}"
    )
    return out
