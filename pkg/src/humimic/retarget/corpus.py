"""
IK training corpora.

The synthetic corpus drives the robot through smooth random in-limit joint
trajectories and turns each sampled frame into a human pose through the
keypoint map's correspondence table, so every frame carries its generating
joint vector for evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from humimic import io
from humimic.exceptions import ConfigError, ContractViolation, DatasetError
from humimic.kinematics.tree import KinematicTree, clamp_to_limits
from humimic.shapefit.skeleton import JOINT_INDEX, NUM_JOINTS, validate_pose

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "all")


class IkCorpusConfig(BaseModel):
    num_sequences: int = Field(24, ge=1, description="Random trajectories to generate")
    frames: int = Field(250, ge=2, description="Frames per trajectory")
    fps: float = Field(50.0, gt=0)
    stride: int = Field(10, ge=1, description="Keep every stride-th frame")
    min_frequency: float = Field(0.2, gt=0, description="Lowest joint oscillation frequency, Hz")
    max_frequency: float = Field(1.0, gt=0, description="Highest joint oscillation frequency, Hz")
    limit_margin: float = Field(0.05, ge=0, description="Distance kept from each joint limit, rad")
    train_fraction: float = Field(0.8, gt=0, lt=1, description="Share of frames in the training split")


@dataclass
class IkDataset:
    poses: np.ndarray
    joints: Optional[np.ndarray] = None
    split: str = "all"

    def __post_init__(self) -> None:
        self.poses = validate_pose(self.poses).reshape(-1, NUM_JOINTS, 3)
        if self.joints is not None:
            self.joints = np.asarray(self.joints, dtype=np.float64)
            if len(self.joints) != len(self.poses):
                raise ContractViolation("joint vectors and poses differ in length")
        if self.split not in SPLITS:
            raise ContractViolation(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.poses)

    def subset(self, index: np.ndarray, split: str) -> "IkDataset":
        joints = self.joints[index] if self.joints is not None else None
        return IkDataset(self.poses[index], joints, split)

    def save(self, path, meta: Optional[dict] = None) -> None:
        arrays = {"poses": self.poses}
        if self.joints is not None:
            arrays["joints"] = self.joints
        io.save_arrays(path, arrays, {"split": self.split, **(meta or {})})

    @classmethod
    def load(cls, path) -> "IkDataset":
        arrays, meta = io.load_arrays(path)
        if "poses" not in arrays:
            raise DatasetError("IK corpus has no 'poses' array", str(path))
        return cls(arrays["poses"], arrays.get("joints"), meta.get("split", "all"))


def human_from_robot(tree: KinematicTree, q) -> np.ndarray:
    """Human pose (..., 22, 3) whose correspondence components carry ``q``."""
    if not tree.correspondence:
        raise ConfigError("keypoint map has no joint correspondence table", field="correspondence")
    q = np.asarray(q, dtype=np.float64)
    pose = np.zeros(q.shape[:-1] + (NUM_JOINTS, 3))
    for c in tree.correspondence:
        pose[..., JOINT_INDEX[c.human_joint], c.axis] += c.sign * q[..., tree.joint_index(c.robot_joint)]
    return pose


def random_trajectories(tree: KinematicTree, config: IkCorpusConfig, rng: np.random.Generator) -> np.ndarray:
    """(S, frames, dof) sums of two sinusoids per joint, kept inside the limits."""
    lo = tree.lower + config.limit_margin
    hi = tree.upper - config.limit_margin
    if np.any(hi <= lo):
        raise ConfigError("limit margin leaves no room for some joint", field="ik.corpus.limit_margin")
    t = np.arange(config.frames) / config.fps
    S, J = config.num_sequences, tree.dof
    centre = rng.uniform(lo, hi, size=(S, J))
    room = np.minimum(centre - lo, hi - centre)
    out = np.broadcast_to(centre[:, None, :], (S, config.frames, J)).copy()
    for share in (0.7, 0.3):
        amp = share * room * rng.uniform(0.3, 1.0, size=(S, J))
        freq = rng.uniform(config.min_frequency, config.max_frequency, size=(S, J))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(S, J))
        out += amp[:, None, :] * np.sin(2.0 * np.pi * freq[:, None, :] * t[None, :, None] + phase[:, None, :])
    return np.clip(out, lo, hi)


def synthetic_corpus(tree: KinematicTree, config: Optional[IkCorpusConfig] = None,
                     rng: Optional[np.random.Generator] = None) -> IkDataset:
    config = config or IkCorpusConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    joints = random_trajectories(tree, config, rng)[:, ::config.stride].reshape(-1, tree.dof)
    logger.info(f"synthetic IK corpus: {len(joints)} frames from {config.num_sequences} trajectories")
    return IkDataset(human_from_robot(tree, joints), joints)


def split_dataset(dataset: IkDataset, rng: np.random.Generator,
                  train_fraction: float = 0.8) -> Tuple[IkDataset, IkDataset]:
    """Shuffled frame-level train/val split."""
    if len(dataset) < 2:
        raise ContractViolation("need at least two frames to split")
    order = rng.permutation(len(dataset))
    cut = min(max(int(round(train_fraction * len(dataset))), 1), len(dataset) - 1)
    return dataset.subset(np.sort(order[:cut]), "train"), dataset.subset(np.sort(order[cut:]), "val")


def stack_datasets(parts: Sequence[IkDataset], split: str = "all") -> IkDataset:
    joints = None
    if all(p.joints is not None for p in parts):
        joints = np.concatenate([p.joints for p in parts])
    return IkDataset(np.concatenate([p.poses for p in parts]), joints, split)


def robot_from_human(tree: KinematicTree, poses) -> np.ndarray:
    """Joint vectors (..., dof) read off the correspondence components of human poses.

    Robot joints without a correspondence entry are zero.
    """
    if not tree.correspondence:
        raise ConfigError("keypoint map has no joint correspondence table", field="correspondence")
    poses = np.asarray(poses, dtype=np.float64)
    q = np.zeros(poses.shape[:-2] + (tree.dof,))
    for c in tree.correspondence:
        q[..., tree.joint_index(c.robot_joint)] = c.sign * poses[..., JOINT_INDEX[c.human_joint], c.axis]
    return clamp_to_limits(tree, q)
