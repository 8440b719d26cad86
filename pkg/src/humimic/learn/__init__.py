from humimic.learn.config import PpoConfig, RhoSchedule, Stage1Config, Stage2Config
from humimic.learn.losses import dagger_loss, imitation_nll, ppo_clip_loss, value_loss
from humimic.learn.rollout import RolloutBatch, RolloutCollector, gae_advantages, normalize_advantages
from humimic.learn.symmetry import SymmetryMaps, apply_mirror, build_symmetry_maps, spec_mirror, symmetry_aux_loss
from humimic.learn.trainer import (
    DistillationHooks,
    IterationHooks,
    Stage2Result,
    clone_policy,
    ppo_update,
    stage1_train,
    stage2_train,
    train_ppo,
)

__all__ = [
    "DistillationHooks",
    "IterationHooks",
    "PpoConfig",
    "RhoSchedule",
    "RolloutBatch",
    "RolloutCollector",
    "Stage1Config",
    "Stage2Config",
    "Stage2Result",
    "SymmetryMaps",
    "apply_mirror",
    "build_symmetry_maps",
    "clone_policy",
    "dagger_loss",
    "gae_advantages",
    "imitation_nll",
    "normalize_advantages",
    "ppo_clip_loss",
    "ppo_update",
    "spec_mirror",
    "stage1_train",
    "stage2_train",
    "symmetry_aux_loss",
    "train_ppo",
    "value_loss",
]
