"""
Simplified parametric human skeleton.

22 body joints in the usual SMPL order, x forward, y left, z up, arms hanging
at rest. A pose is one rotation vector per joint, applied in the joint's
local frame (joint 0 carries the root orientation).

Shape parameters:

* ``alpha`` global scale,
* ``beta`` one length multiplier per bone (21, one per non-root joint),
* ``delta`` one offset per joint, expressed in that joint's frame.

Keypoint ``j`` is ``alpha * (p_j + R_j delta_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.kinematics.symmetry import mirror_rotvecs, name_permutation
from humimic.numerics import ops
from humimic.numerics.linalg import rotate, rotvec_matrix
from humimic.numerics.tape import DiffArray, as_diff

JOINT_NAMES: List[str] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
]
NUM_JOINTS = len(JOINT_NAMES)
NUM_BONES = NUM_JOINTS - 1

PARENTS: List[int] = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19]

# offset of each joint from its parent, metres
REST_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0, 0.10, 0.0],
        [0.0, -0.10, 0.0],
        [0.0, 0.0, 0.10],
        [0.0, 0.0, -0.40],
        [0.0, 0.0, -0.40],
        [0.0, 0.0, 0.12],
        [0.0, 0.0, -0.40],
        [0.0, 0.0, -0.40],
        [0.0, 0.0, 0.05],
        [0.12, 0.0, -0.06],
        [0.12, 0.0, -0.06],
        [0.0, 0.0, 0.20],
        [0.0, 0.07, 0.12],
        [0.0, -0.07, 0.12],
        [0.0, 0.0, 0.10],
        [0.0, 0.10, 0.02],
        [0.0, -0.10, 0.02],
        [0.0, 0.0, -0.27],
        [0.0, 0.0, -0.27],
        [0.0, 0.0, -0.25],
        [0.0, 0.0, -0.25],
    ]
)

JOINT_INDEX: Dict[str, int] = {name: i for i, name in enumerate(JOINT_NAMES)}
MIRROR_PERM = name_permutation(JOINT_NAMES)


@dataclass
class ShapeParams:
    alpha: float = 1.0
    beta: np.ndarray = field(default_factory=lambda: np.ones(NUM_BONES))
    delta: np.ndarray = field(default_factory=lambda: np.zeros((NUM_JOINTS, 3)))

    def __post_init__(self) -> None:
        self.alpha = float(self.alpha)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(NUM_BONES)
        self.delta = np.asarray(self.delta, dtype=np.float64).reshape(NUM_JOINTS, 3)
        if not self.alpha > 0:
            raise ContractViolation(f"alpha must be positive, got {self.alpha}")
        if np.any(self.beta <= 0):
            raise ContractViolation("every beta multiplier must be positive")

    @classmethod
    def identity(cls) -> "ShapeParams":
        return cls()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "delta": self.delta.tolist(),
            "joint_names": JOINT_NAMES,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ShapeParams":
        return cls(alpha=data["alpha"], beta=np.asarray(data["beta"]), delta=np.asarray(data["delta"]))


def validate_pose(pose) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2:] != (NUM_JOINTS, 3):
        raise ContractViolation(f"human pose must be (..., {NUM_JOINTS}, 3), got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise ContractViolation("human pose has non-finite entries")
    if np.any(np.linalg.norm(pose, axis=-1) >= 2.0 * np.pi):
        raise ContractViolation("rotation magnitude must stay below 2*pi")
    return pose


def pose_from_angles(angles: Mapping[str, Any]) -> np.ndarray:
    """(22, 3) pose from a sparse ``{joint: rotvec}`` mapping."""
    pose = np.zeros((NUM_JOINTS, 3))
    for name, value in angles.items():
        if name not in JOINT_INDEX:
            raise ContractViolation(f"unknown skeleton joint {name!r}")
        pose[JOINT_INDEX[name]] = np.asarray(value, dtype=np.float64)
    return pose


def human_fk_raw(pose, alpha, beta, delta) -> DiffArray:
    """Keypoints (..., 22, 3); every argument may be tracked."""
    pose = as_diff(pose)
    beta = as_diff(beta)
    delta = as_diff(delta)
    R_local = rotvec_matrix(pose)
    positions: List[DiffArray] = []
    rotations: List[DiffArray] = []
    for j in range(NUM_JOINTS):
        R_j = R_local[..., j, :, :]
        parent = PARENTS[j]
        if parent < 0:
            positions.append(as_diff(np.zeros(pose.shape[:-2] + (3,))))
            rotations.append(R_j)
            continue
        bone = beta[j - 1] * REST_OFFSETS[j]
        positions.append(positions[parent] + rotate(rotations[parent], bone))
        rotations.append(ops.matmul(rotations[parent], R_j))
    kp = [p + rotate(R, delta[j]) for j, (p, R) in enumerate(zip(positions, rotations))]
    return ops.stack(kp, axis=-2) * alpha


def human_fk(pose, shape: Optional[ShapeParams] = None) -> DiffArray:
    shape = shape or ShapeParams.identity()
    return human_fk_raw(pose, shape.alpha, shape.beta, shape.delta)


def rest_keypoints() -> np.ndarray:
    """Rest-skeleton joint positions, the chain sum of the offsets."""
    out = np.zeros((NUM_JOINTS, 3))
    for j in range(1, NUM_JOINTS):
        out[j] = out[PARENTS[j]] + REST_OFFSETS[j]
    return out


def mirror_pose(pose):
    """Sagittal mirror of a human pose (..., 22, 3)."""
    return mirror_rotvecs(pose, MIRROR_PERM)


def selection_matrix(names: List[str]) -> np.ndarray:
    """(K, 22) row selector picking named joints out of a keypoint set."""
    S = np.zeros((len(names), NUM_JOINTS))
    for row, name in enumerate(names):
        if name not in JOINT_INDEX:
            raise ContractViolation(f"keypoint {name!r} is not a skeleton joint")
        S[row, JOINT_INDEX[name]] = 1.0
    return S
