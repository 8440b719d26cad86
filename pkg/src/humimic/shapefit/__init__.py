"""Parametric human skeleton and its calibration against a robot."""

from humimic.shapefit.fitting import (
    FitResult,
    PosePair,
    ShapeFitConfig,
    default_pose_pairs,
    fit_objective,
    fit_shape,
    initial_scale,
    keypoint_residuals,
    load_pose_pairs,
)
from humimic.shapefit.skeleton import (
    JOINT_NAMES,
    NUM_JOINTS,
    ShapeParams,
    human_fk,
    human_fk_raw,
    mirror_pose,
    rest_keypoints,
)

__all__ = [
    "FitResult",
    "JOINT_NAMES",
    "NUM_JOINTS",
    "PosePair",
    "ShapeFitConfig",
    "ShapeParams",
    "default_pose_pairs",
    "fit_objective",
    "fit_shape",
    "human_fk",
    "human_fk_raw",
    "initial_scale",
    "keypoint_residuals",
    "load_pose_pairs",
    "mirror_pose",
    "rest_keypoints",
]
