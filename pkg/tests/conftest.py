"""Shared fixtures for the humimic test suite."""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np
import pytest

from humimic.config import load_config
from humimic.env.motions import MotionGeneratorConfig, MotionKind, generate_motion
from humimic.kinematics.tree import KinematicTree, bundled_robot, parse_robot_model
from humimic.postprocess.dataset import build_dataset
from humimic.postprocess.pipeline import PostprocessConfig, process_motion
from humimic.postprocess.sequence import MotionSequence, identity_orientations
from humimic.refbuffer.buffer import RefDataBuffer
from humimic.retarget.corpus import robot_from_human
from humimic.shapefit.skeleton import JOINT_INDEX, JOINT_NAMES, PARENTS, REST_OFFSETS

# actuated joints of the skeleton-shaped robot, all pitching about y
SKELETON_DOF = [
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
]
SKELETON_KEYPOINTS = [
    "left_knee", "right_knee", "left_ankle", "right_ankle", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
]


def skeleton_urdf(scale: float = 1.0) -> str:
    """A robot whose links sit exactly on the rest skeleton, scaled by ``scale``."""
    lines = ['<?xml version="1.0"?>', '<robot name="skeleton">']
    for name in JOINT_NAMES:
        lines.append(f'  <link name="{name}"><inertial><mass value="1.0"/></inertial></link>')
    for j in range(1, len(JOINT_NAMES)):
        name, parent = JOINT_NAMES[j], JOINT_NAMES[PARENTS[j]]
        x, y, z = (scale * REST_OFFSETS[j]).tolist()
        kind = "revolute" if name in SKELETON_DOF else "fixed"
        lines.append(f'  <joint name="{name}" type="{kind}">')
        lines.append(f'    <parent link="{parent}"/><child link="{name}"/>')
        lines.append(f'    <origin xyz="{x!r} {y!r} {z!r}" rpy="0 0 0"/>')
        if kind == "revolute":
            lines.append('    <axis xyz="0 1 0"/>')
            lines.append('    <limit lower="-2.0" upper="2.0" effort="50"/>')
        lines.append("  </joint>")
    lines.append("</robot>")
    return "\n".join(lines)


def skeleton_keymap() -> Dict:
    return {
        "keypoints": {name: {"link": name, "weight": 1.0} for name in SKELETON_KEYPOINTS},
        "feet": ["left_foot", "right_foot"],
        "correspondence": [
            {"robot_joint": name, "human_joint": name, "axis": 1, "sign": 1.0,
             "single_dof": name.endswith(("knee", "elbow"))}
            for name in SKELETON_DOF
        ],
    }


def skeleton_regressor(tree: KinematicTree) -> Callable:
    """Exact IK for the skeleton robot: read the pitch components off the pose."""
    idx = [JOINT_INDEX[name] for name in tree.joint_names]

    def regress(p):
        return p[..., idx, 1]

    return regress


def biped_sequence(tree: KinematicTree, kind: MotionKind = MotionKind.WALK, duration_s: float = 3.0,
                   name: str = "walk", **overrides) -> MotionSequence:
    """Raw biped motion produced by copying joint angles through the correspondence table."""
    clip = generate_motion(MotionGeneratorConfig(kind=kind, duration_s=duration_s, **overrides), name)
    q = robot_from_human(tree, clip.poses)
    return MotionSequence(
        fps=clip.fps,
        joints=q,
        root_translation=clip.root_translation,
        root_orientation=identity_orientations(clip.num_frames),
        name=name,
        joint_names=tree.joint_names,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def arm() -> KinematicTree:
    return bundled_robot("planar_arm")


@pytest.fixture(scope="session")
def biped() -> KinematicTree:
    return bundled_robot("planar_biped")


@pytest.fixture(scope="session")
def skeleton_factory() -> Callable[[float], KinematicTree]:
    def build(scale: float = 1.0) -> KinematicTree:
        return parse_robot_model(skeleton_urdf(scale), skeleton_keymap())

    return build


@pytest.fixture(scope="session")
def skeleton(skeleton_factory) -> KinematicTree:
    return skeleton_factory(1.0)


@pytest.fixture(scope="session")
def processed_walk(biped) -> MotionSequence:
    return process_motion(biped_sequence(biped), biped, PostprocessConfig())


@pytest.fixture(scope="session")
def processed_squat(biped) -> MotionSequence:
    return process_motion(biped_sequence(biped, MotionKind.SQUAT, 3.0, "squat", period=2.0),
                          biped, PostprocessConfig())


@pytest.fixture(scope="session")
def processed_sequences(processed_walk, processed_squat) -> List[MotionSequence]:
    return [processed_walk, processed_squat]


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, processed_sequences):
    directory = tmp_path_factory.mktemp("dataset")
    build_dataset(processed_sequences, directory, {"source": "tests"})
    return directory


@pytest.fixture
def buffer(processed_sequences) -> RefDataBuffer:
    return RefDataBuffer(processed_sequences, num_envs=2)


@pytest.fixture
def smoke_config(tmp_path):
    return load_config(profile="smoke", overrides=[f"paths.output_dir={tmp_path / 'runs'}"], use_env=False)
