"""Imitation reward terms, sigma curriculum, toddler assist and termination."""

from humimic.rewards.curriculum import (
    JOINT_LEVELS,
    VELOCITY_LEVELS,
    CurriculumTerm,
    CurriculumTracker,
    curriculum_update,
)
from humimic.rewards.imitation import ImitationReward, RewardConfig, RewardTermConfig, TermKind, make_tracker
from humimic.rewards.termination import TerminationSpec, gravity_angle, imitation_termination, task_termination
from humimic.rewards.terms import (
    contact_match_reward,
    exp_tracking_reward,
    l2_deviation_reward,
    l2_rate_reward,
    tracking_index,
)
from humimic.rewards.toddler import ToddlerConfig, toddler_anneal, toddler_force

__all__ = [
    "JOINT_LEVELS",
    "VELOCITY_LEVELS",
    "CurriculumTerm",
    "CurriculumTracker",
    "ImitationReward",
    "RewardConfig",
    "RewardTermConfig",
    "TermKind",
    "TerminationSpec",
    "ToddlerConfig",
    "contact_match_reward",
    "curriculum_update",
    "exp_tracking_reward",
    "gravity_angle",
    "imitation_termination",
    "l2_deviation_reward",
    "l2_rate_reward",
    "make_tracker",
    "task_termination",
    "toddler_anneal",
    "toddler_force",
    "tracking_index",
]
