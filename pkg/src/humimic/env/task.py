"""Task rewards: survival, posture, command following and smoothness."""

from __future__ import annotations

from typing import Dict

import numpy as np

from humimic.env.config import TaskRewardConfig
from humimic.rewards.termination import gravity_angle

DOWN = np.array([0.0, 0.0, -1.0])


def task_rewards(
    gravity: np.ndarray,
    lin_vel: np.ndarray,
    command: np.ndarray,
    action: np.ndarray,
    last_action: np.ndarray,
    config: TaskRewardConfig,
) -> Dict[str, float]:
    """Per-term task reward for one step. ``lin_vel`` is body-frame."""
    tilt = gravity_angle(gravity, DOWN)
    speed_gap = float(lin_vel[0] - command[0])
    rate = np.asarray(action, dtype=np.float64) - np.asarray(last_action, dtype=np.float64)
    return {
        "alive": config.alive,
        "upright": config.upright * float(np.exp(-tilt * tilt / 0.25)),
        "command": config.command * float(np.exp(-speed_gap * speed_gap / (2.0 * config.command_sigma ** 2))),
        "action_rate": -config.action_rate * float(np.dot(rate, rate)),
    }


TASK_TERMS = ("alive", "upright", "command", "action_rate")
