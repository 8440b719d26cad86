"""
Procedural human motions for the 22-joint skeleton.

Legs are placed with analytic planar two-link IK so stance feet stay exactly
where they were put; ankles keep the feet flat. Every clip carries its
ground-truth stance flags (left, right).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from humimic import io
from humimic.exceptions import ConfigError, DatasetError
from humimic.shapefit.skeleton import JOINT_INDEX, NUM_JOINTS, REST_OFFSETS

logger = logging.getLogger(__name__)

THIGH = float(-REST_OFFSETS[JOINT_INDEX["left_knee"], 2])
SHIN = float(-REST_OFFSETS[JOINT_INDEX["left_ankle"], 2])
# ankle height over the ground when the foot is flat
ANKLE_HEIGHT = float(-REST_OFFSETS[JOINT_INDEX["left_foot"], 2])
PITCH_AXIS = 1


class MotionKind(str, Enum):
    WALK = "walk"
    SQUAT = "squat"
    KICK = "kick"


class MotionGeneratorConfig(BaseModel):
    kind: MotionKind = MotionKind.WALK
    duration_s: float = Field(6.0, gt=0, description="Clip length, s")
    fps: float = Field(50.0, gt=0, description="Frame rate of the generated clip")
    speed: float = Field(0.6, ge=0, description="Walking speed, m/s")
    period: float = Field(1.0, gt=0, description="Gait, squat or kick period, s")
    duty: float = Field(0.6, gt=0.5, lt=1, description="Stance fraction of the gait cycle")
    clearance: float = Field(0.08, ge=0, description="Swing foot lift, m")
    pelvis_height: float = Field(0.82, gt=0, description="Nominal pelvis height, m")
    bob: float = Field(0.01, ge=0, description="Vertical pelvis oscillation amplitude, m")
    arm_swing: float = Field(0.3, ge=0, description="Shoulder swing amplitude, rad")
    elbow: float = Field(-0.3, description="Elbow bend, rad")
    lean: float = Field(0.05, description="Forward trunk lean, rad")
    squat_depth: float = Field(0.28, ge=0, description="Pelvis drop at the bottom of a squat, m")
    kick_reach: float = Field(0.35, ge=0, description="Forward reach of the kicking foot, m")
    kick_height: float = Field(0.3, ge=0, description="Lift of the kicking foot, m")


@dataclass
class HumanClip:
    name: str
    fps: float
    poses: np.ndarray
    root_translation: np.ndarray
    stance: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    def save(self, path, meta: Optional[Dict[str, Any]] = None) -> None:
        info = {"name": self.name, "fps": self.fps, "clip": self.meta}
        info.update(meta or {})
        io.save_arrays(path, {"poses": self.poses, "root_translation": self.root_translation,
                              "stance": self.stance.astype(np.float64)}, info)

    @classmethod
    def load(cls, path) -> "HumanClip":
        arrays, meta = io.load_arrays(path)
        for key in ("poses", "root_translation"):
            if key not in arrays:
                raise DatasetError(f"human clip has no {key!r} array", str(path))
        n = len(arrays["poses"])
        stance = arrays.get("stance", np.zeros((n, 2))) > 0.5
        return cls(meta.get("name", "clip"), float(meta.get("fps", 50.0)), arrays["poses"],
                   arrays["root_translation"], stance, meta.get("clip", {}))


def leg_ik(ankle_x, ankle_z) -> Tuple[np.ndarray, np.ndarray]:
    """Hip and knee pitch placing the ankle at (x, z) relative to the hip.

    A positive pitch swings a hanging segment backwards; the knee bends
    backwards (knee >= 0). Unreachable targets are pulled onto the boundary.
    """
    x = np.asarray(ankle_x, dtype=np.float64)
    z = np.asarray(ankle_z, dtype=np.float64)
    d = np.minimum(np.hypot(x, z), THIGH + SHIN - 1e-6)
    cos_knee = (d * d - THIGH ** 2 - SHIN ** 2) / (2.0 * THIGH * SHIN)
    knee = np.arccos(np.clip(cos_knee, -1.0, 1.0))
    direction = np.arctan2(-x, -z)
    hip = direction - np.arctan2(SHIN * np.sin(knee), THIGH + SHIN * np.cos(knee))
    return hip, knee


def _smoothstep(s):
    return s * s * (3.0 - 2.0 * s)


def _pose(n: int) -> np.ndarray:
    return np.zeros((n, NUM_JOINTS, 3))


def _set_leg(pose: np.ndarray, side: str, ankle_x, ankle_z) -> None:
    hip, knee = leg_ik(ankle_x, ankle_z)
    pose[:, JOINT_INDEX[f"{side}_hip"], PITCH_AXIS] = hip
    pose[:, JOINT_INDEX[f"{side}_knee"], PITCH_AXIS] = knee
    pose[:, JOINT_INDEX[f"{side}_ankle"], PITCH_AXIS] = -(hip + knee)


def _set_arms(pose: np.ndarray, left, right, elbow: float) -> None:
    pose[:, JOINT_INDEX["left_shoulder"], PITCH_AXIS] = left
    pose[:, JOINT_INDEX["right_shoulder"], PITCH_AXIS] = right
    pose[:, JOINT_INDEX["left_elbow"], PITCH_AXIS] = elbow
    pose[:, JOINT_INDEX["right_elbow"], PITCH_AXIS] = elbow


def _walk(config: MotionGeneratorConfig, t: np.ndarray):
    n = len(t)
    T, duty, v = config.period, config.duty, config.speed
    stride = v * T
    pelvis_x = v * t
    pelvis_z = config.pelvis_height + config.bob * np.cos(4.0 * np.pi * t / T)
    pose = _pose(n)
    stance = np.zeros((n, 2), dtype=bool)
    for column, (side, offset) in enumerate((("left", 0.0), ("right", 0.5))):
        tau = t / T + offset
        cycle = np.floor(tau)
        phi = tau - cycle
        planted = stride * (cycle + duty / 2.0 - offset)
        swing = np.clip((phi - duty) / (1.0 - duty), 0.0, 1.0)
        on_ground = phi < duty
        foot_x = np.where(on_ground, planted, planted + stride * _smoothstep(swing))
        lift = np.where(on_ground, 0.0, config.clearance * np.sin(np.pi * swing))
        _set_leg(pose, side, foot_x - pelvis_x, ANKLE_HEIGHT + lift - pelvis_z)
        stance[:, column] = on_ground
    swing_arm = config.arm_swing * np.sin(2.0 * np.pi * t / T)
    _set_arms(pose, swing_arm, -swing_arm, config.elbow)
    pose[:, JOINT_INDEX["spine1"], PITCH_AXIS] = -config.lean
    root = np.stack([pelvis_x, np.zeros(n), pelvis_z], axis=1)
    return pose, root, stance


def _squat(config: MotionGeneratorConfig, t: np.ndarray):
    n = len(t)
    depth = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / config.period))
    pelvis_z = config.pelvis_height - config.squat_depth * depth
    pose = _pose(n)
    for side in ("left", "right"):
        _set_leg(pose, side, np.zeros(n), ANKLE_HEIGHT - pelvis_z)
    raise_arms = -1.2 * depth
    _set_arms(pose, raise_arms, raise_arms, config.elbow * depth)
    pose[:, JOINT_INDEX["spine1"], PITCH_AXIS] = -config.lean * (1.0 + 3.0 * depth)
    root = np.stack([np.zeros(n), np.zeros(n), pelvis_z], axis=1)
    return pose, root, np.ones((n, 2), dtype=bool)


def _kick(config: MotionGeneratorConfig, t: np.ndarray):
    n = len(t)
    phi = np.mod(t / config.period, 1.0)
    s = np.clip((phi - 0.4) / 0.6, 0.0, 1.0)
    arc = np.sin(np.pi * s)
    pelvis_z = np.full(n, config.pelvis_height)
    pose = _pose(n)
    _set_leg(pose, "left", np.zeros(n), ANKLE_HEIGHT - pelvis_z)
    _set_leg(pose, "right", config.kick_reach * arc, ANKLE_HEIGHT + config.kick_height * arc - pelvis_z)
    _set_arms(pose, config.arm_swing * arc, -config.arm_swing * arc, config.elbow)
    stance = np.stack([np.ones(n, dtype=bool), phi < 0.4], axis=1)
    root = np.stack([np.zeros(n), np.zeros(n), pelvis_z], axis=1)
    return pose, root, stance


_GENERATORS = {MotionKind.WALK: _walk, MotionKind.SQUAT: _squat, MotionKind.KICK: _kick}


def generate_motion(config: Optional[MotionGeneratorConfig] = None, name: Optional[str] = None) -> HumanClip:
    config = config or MotionGeneratorConfig()
    n = int(round(config.duration_s * config.fps))
    if n < 2:
        raise ConfigError("clip must span at least two frames", field="motions.duration_s")
    t = np.arange(n) / config.fps
    pose, root, stance = _GENERATORS[config.kind](config, t)
    clip = HumanClip(name or config.kind.value, config.fps, pose, root, stance, config.model_dump(mode="json"))
    logger.info(f"generated {clip.name!r}: {n} frames, stance ratio {np.round(stance.mean(axis=0), 3).tolist()}")
    return clip
