"""
humimic: human-motion imitation for legged robots.

Retargets human pose streams onto a robot through a fitted body shape and a
learned IK regressor, post-processes the result into reference datasets and
trains masked multimodal transformer policies in two stages: imitation in a
fixed-base simulator, then full physics with distillation from the first
stage.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, config_hash, get_profile, load_config
from .env import BipedEnv, EnvConfig, VecEnv, make_envs
from .kinematics import KinematicTree, bundled_robot, load_robot
from .learn import stage1_train, stage2_train, train_ppo
from .policy import MMTransformerPolicy
from .refbuffer import RefDataBuffer

__all__ = [
    "BipedEnv",
    "EnvConfig",
    "KinematicTree",
    "MMTransformerPolicy",
    "PipelineConfig",
    "RefDataBuffer",
    "VecEnv",
    "bundled_robot",
    "config_hash",
    "get_profile",
    "load_config",
    "load_robot",
    "make_envs",
    "stage1_train",
    "stage2_train",
    "train_ppo",
]
