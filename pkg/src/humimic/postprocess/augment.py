"""
Reference-signal augmentation: root velocities in the robot frame, projected
gravity, base height, joint velocities, foot contacts and contact phase.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial.transform import Rotation

from humimic.exceptions import ContractViolation
from humimic.kinematics.fk import forward_kinematics
from humimic.kinematics.tree import KinematicTree
from humimic.postprocess.sequence import MotionSequence

logger = logging.getLogger(__name__)

GRAVITY_DIRECTION = np.array([0.0, 0.0, -1.0])


class ContactConfig(BaseModel):
    velocity_threshold: float = Field(0.05, gt=0, description="Foot speed below which a foot may be in contact, m/s")
    height_margin: float = Field(0.05, ge=0, description="Contact height threshold above the lowest foot height, m")


def root_velocities(seq: MotionSequence):
    """Backward-difference body-frame linear and angular velocity, (n, 3) each.

    Frame 0 copies frame 1.
    """
    R = seq.rotations
    dt = seq.dt
    world_v = np.zeros_like(seq.root_translation)
    world_v[1:] = np.diff(seq.root_translation, axis=0) / dt
    lin = R.inv().apply(world_v)
    ang = np.zeros((seq.num_frames, 3))
    ang[1:] = (R[:-1].inv() * R[1:]).as_rotvec() / dt
    if seq.num_frames > 1:
        lin[0] = lin[1]
        ang[0] = ang[1]
    return lin, ang


def projected_gravity(orientations: np.ndarray) -> np.ndarray:
    return Rotation.from_quat(orientations).inv().apply(GRAVITY_DIRECTION)


def foot_positions(seq: MotionSequence, tree: KinematicTree) -> np.ndarray:
    """World positions of the tree's feet, (n, F, 3)."""
    if not tree.feet:
        raise ContractViolation("robot has no foot links in its keypoint map")
    fk = forward_kinematics(tree, seq.joints, seq.root_translation, seq.rotations.as_matrix())
    return np.stack([fk.position(foot).value for foot in tree.feet], axis=1)


def detect_contacts(
    seq: MotionSequence,
    tree: KinematicTree,
    velocity_threshold: float = 0.05,
    height_threshold: Optional[float] = None,
    height_margin: float = 0.05,
) -> np.ndarray:
    """Boolean (n, F): foot speed below threshold and foot height below threshold.

    The height threshold defaults to the lowest foot height in the clip plus
    ``height_margin``.
    """
    feet = foot_positions(seq, tree)
    if seq.num_frames > 1:
        speed = np.linalg.norm(np.gradient(feet, seq.dt, axis=0), axis=-1)
    else:
        speed = np.zeros(feet.shape[:2])
    height = feet[..., 2]
    if height_threshold is None:
        height_threshold = float(height.min()) + height_margin
    return (speed < velocity_threshold) & (height < height_threshold)


def encode_phase(flags: np.ndarray) -> np.ndarray:
    """Per-foot (cos, sin) of a phase sweeping [0, pi) over contact segments and
    [pi, 2 pi) over swing segments. Input (n,) or (n, F); output (n, F, 2)."""
    flags = np.asarray(flags, dtype=bool)
    if flags.ndim == 1:
        flags = flags[:, None]
    n, feet = flags.shape
    phi = np.zeros((n, feet))
    for f in range(feet):
        start = 0
        while start < n:
            stop = start
            while stop < n and flags[stop, f] == flags[start, f]:
                stop += 1
            length = stop - start
            offset = 0.0 if flags[start, f] else np.pi
            phi[start:stop, f] = offset + np.pi * np.arange(length) / length
            start = stop
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def augment_references(
    seq: MotionSequence,
    tree: KinematicTree,
    contact: Optional[ContactConfig] = None,
) -> MotionSequence:
    """Copy of ``seq`` with every augmented channel filled in."""
    if seq.num_frames < 3:
        raise ContractViolation("augmentation needs at least three frames")
    if seq.dof != tree.dof:
        raise ContractViolation(f"sequence has {seq.dof} joints, robot has {tree.dof}")
    contact = contact or ContactConfig()
    lin, ang = root_velocities(seq)
    flags = detect_contacts(seq, tree, contact.velocity_threshold, height_margin=contact.height_margin)
    phase = encode_phase(flags)
    out = seq.copy(
        lin_vel=lin,
        ang_vel=ang,
        gravity=projected_gravity(seq.root_orientation),
        height=seq.root_translation[:, 2].copy(),
        joint_vel=np.gradient(seq.joints, seq.dt, axis=0),
        contacts=flags.astype(np.float64),
        phase=phase.reshape(seq.num_frames, -1),
        joint_names=seq.joint_names or tree.joint_names,
    )
    logger.debug(
        f"augmented {seq.name!r}: contact ratio per foot {np.round(flags.mean(axis=0), 3).tolist()}"
    )
    return out
