"""Planar biped environment, task rewards and procedural human motions."""

from humimic.env.biped import (
    BipedEnv,
    EnvState,
    PhysicsParams,
    StepResult,
    VecEnv,
    VecStep,
    agent_term_dims,
    make_envs,
    make_specs,
    nominal_physics,
    pitch_matrix,
    pitch_of,
)
from humimic.env.config import (
    ActuatorConfig,
    ContactModel,
    EnvConfig,
    EnvMode,
    RandomizationConfig,
    TaskRewardConfig,
)
from humimic.env.motions import HumanClip, MotionGeneratorConfig, MotionKind, generate_motion, leg_ik
from humimic.env.task import TASK_TERMS, task_rewards

__all__ = [
    "ActuatorConfig",
    "BipedEnv",
    "ContactModel",
    "EnvConfig",
    "EnvMode",
    "EnvState",
    "HumanClip",
    "MotionGeneratorConfig",
    "MotionKind",
    "PhysicsParams",
    "RandomizationConfig",
    "StepResult",
    "TASK_TERMS",
    "TaskRewardConfig",
    "VecEnv",
    "VecStep",
    "agent_term_dims",
    "generate_motion",
    "leg_ik",
    "make_envs",
    "make_specs",
    "nominal_physics",
    "pitch_matrix",
    "pitch_of",
    "task_rewards",
]
