"""Learned inverse kinematics from human angle-axis poses to robot joints."""

from humimic.retarget.corpus import (
    IkCorpusConfig,
    IkDataset,
    human_from_robot,
    robot_from_human,
    random_trajectories,
    split_dataset,
    synthetic_corpus,
)
from humimic.retarget.losses import (
    IkLossWeights,
    human_targets,
    loss_disturb,
    loss_dist,
    loss_limit,
    loss_single_dof,
    loss_sym,
    sample_disturbance,
    total_loss,
)
from humimic.retarget.regressor import IkRegressor, IkRegressorConfig, canonical_pose
from humimic.retarget.training import IkTrainingConfig, keypoint_errors, retarget_sequence, train_regressor

__all__ = [
    "IkCorpusConfig",
    "IkDataset",
    "IkLossWeights",
    "IkRegressor",
    "IkRegressorConfig",
    "IkTrainingConfig",
    "canonical_pose",
    "human_from_robot",
    "robot_from_human",
    "human_targets",
    "keypoint_errors",
    "loss_disturb",
    "loss_dist",
    "loss_limit",
    "loss_single_dof",
    "loss_sym",
    "random_trajectories",
    "retarget_sequence",
    "sample_disturbance",
    "split_dataset",
    "synthetic_corpus",
    "total_loss",
    "train_regressor",
]
