"""
``MotionSequence``: a robot motion clip plus its augmented reference channels.

Orientations are scipy quaternions (x, y, z, w). Velocity channels are
expressed in the robot (body) frame and use backward differences, so that
re-integrating them with semi-implicit Euler reproduces the root trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from humimic.exceptions import ContractViolation

# channel name -> width (None means "number of joints" / "number of feet")
CHANNELS: Dict[str, str] = {
    "joints": "J",
    "joint_vel": "J",
    "lin_vel": "3",
    "ang_vel": "3",
    "gravity": "3",
    "height": "1",
    "contacts": "F",
    "phase": "2F",
}
OPTIONAL_CHANNELS = ("lin_vel", "ang_vel", "gravity", "height", "joint_vel", "contacts", "phase")


@dataclass
class MotionSequence:
    fps: float
    joints: np.ndarray
    root_translation: np.ndarray
    root_orientation: np.ndarray
    name: str = "motion"
    joint_names: Optional[List[str]] = None
    lin_vel: Optional[np.ndarray] = None
    ang_vel: Optional[np.ndarray] = None
    gravity: Optional[np.ndarray] = None
    height: Optional[np.ndarray] = None
    joint_vel: Optional[np.ndarray] = None
    contacts: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None
    cycle: Optional[Tuple[int, int]] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ContractViolation(f"frame rate must be positive, got {self.fps}")
        self.joints = np.atleast_2d(np.asarray(self.joints, dtype=np.float64))
        n = self.joints.shape[0]
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64).reshape(n, 3)
        self.root_orientation = np.asarray(self.root_orientation, dtype=np.float64).reshape(n, 4)
        for name in OPTIONAL_CHANNELS:
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape[0] != n:
                raise ContractViolation(f"channel {name!r} has {value.shape[0]} frames, expected {n}")
            setattr(self, name, value)
        if self.phase is not None:
            pairs = self.phase.reshape(n, -1, 2)
            if not np.allclose(np.sum(pairs ** 2, axis=-1), 1.0, atol=1e-6):
                raise ContractViolation("phase channels must lie on the unit circle")
        if self.cycle is not None:
            i, j = (int(c) for c in self.cycle)
            if not (0 <= i < j < n) or (j - i) < 0.2 * n:
                raise ContractViolation(f"invalid cycle {self.cycle} for {n} frames")
            self.cycle = (i, j)

    @property
    def num_frames(self) -> int:
        return self.joints.shape[0]

    def __len__(self) -> int:
        return self.num_frames

    @property
    def dt(self) -> float:
        return 1.0 / self.fps

    @property
    def dof(self) -> int:
        return self.joints.shape[1]

    @property
    def rotations(self) -> Rotation:
        return Rotation.from_quat(self.root_orientation)

    @property
    def augmented(self) -> bool:
        return all(getattr(self, name) is not None for name in ("lin_vel", "ang_vel", "gravity", "height", "joint_vel"))

    def copy(self, **changes) -> "MotionSequence":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in data.items()}
        data["meta"] = dict(self.meta)
        data.update(changes)
        return MotionSequence(**data)

    def strip(self) -> "MotionSequence":
        """Same clip without augmented channels or cycle."""
        return replace(self, **{name: None for name in OPTIONAL_CHANNELS}, cycle=None)

    def channel(self, name: str) -> np.ndarray:
        """Channel as a 2-D (frames, width) array."""
        if name not in CHANNELS:
            raise ContractViolation(f"unknown channel {name!r}")
        value = getattr(self, name)
        if value is None:
            raise ContractViolation(f"sequence {self.name!r} has no {name!r} channel")
        return value.reshape(self.num_frames, -1)

    def channel_names(self) -> List[str]:
        return [name for name in CHANNELS if getattr(self, name) is not None]


def identity_orientations(n: int) -> np.ndarray:
    out = np.zeros((n, 4))
    out[:, 3] = 1.0
    return out


def tilt_from_gravity(gravity: np.ndarray) -> np.ndarray:
    """Yaw-free rotation matrices whose projected gravity equals ``gravity``."""
    g = np.asarray(gravity, dtype=np.float64)
    pitch = np.arcsin(np.clip(g[..., 0], -1.0, 1.0))
    roll = np.arctan2(-g[..., 1], -g[..., 2])
    return Rotation.from_euler("ZYX", np.stack([np.zeros_like(pitch), pitch, roll], axis=-1)).as_matrix()


def integrate_root(
    lin_vel: np.ndarray,
    ang_vel: np.ndarray,
    dt: float,
    start_position: np.ndarray,
    start_rotation: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler: R_k = R_{k-1} exp(w_k dt), p_k = p_{k-1} + R_k v_k dt.

    Frame 0's velocities are not used. Returns positions (n, 3) and rotation
    matrices (n, 3, 3).
    """
    n = len(lin_vel)
    positions = np.zeros((n, 3))
    rotations = np.zeros((n, 3, 3))
    positions[0] = start_position
    rotations[0] = start_rotation
    steps = Rotation.from_rotvec(np.asarray(ang_vel) * dt).as_matrix()
    for k in range(1, n):
        rotations[k] = rotations[k - 1] @ steps[k]
        positions[k] = positions[k - 1] + rotations[k] @ lin_vel[k] * dt
    return positions, rotations
