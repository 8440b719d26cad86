"""
Rollout collection and advantage estimation.

Rewards mix the env's task and imitation terms as
``r_t = w_task * R_t + w_imitation * R-hat_t``. Time-limit truncations are
bootstrapped by adding ``gamma * V(s_terminal)`` to the last reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from humimic.env.biped import VecEnv
from humimic.exceptions import ContractViolation
from humimic.policy.transformer import MMTransformerPolicy

logger = logging.getLogger(__name__)


@dataclass
class RolloutBatch:
    obs: np.ndarray
    ref: np.ndarray
    mask: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    task_rewards: np.ndarray
    imitation_rewards: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    task_terms: Dict[str, np.ndarray] = field(default_factory=dict)
    imitation_terms: Dict[str, np.ndarray] = field(default_factory=dict)
    episode_lengths: List[int] = field(default_factory=list)
    running_lengths: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def num_steps(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_envs(self) -> int:
        return self.rewards.shape[1]

    def __len__(self) -> int:
        return self.rewards.size

    def flat(self, name: str) -> np.ndarray:
        value = getattr(self, name)
        if value is None:
            raise ContractViolation(f"batch has no {name!r} yet")
        return value.reshape((len(self),) + value.shape[2:])

    def minibatches(self, count: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
        order = rng.permutation(len(self))
        for part in np.array_split(order, min(count, len(self))):
            yield np.sort(part)

    def mean_episode_length(self) -> float:
        if self.episode_lengths:
            return float(np.mean(self.episode_lengths))
        return float(np.mean(self.running_lengths)) if self.running_lengths is not None else 0.0


def gae_advantages(rewards, values, dones, last_values, gamma: float, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns over the leading time axis."""
    if not 0.0 <= gamma < 1.0 + 1e-12 or not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"need 0 <= gamma <= 1 and 0 <= lambda <= 1, got {gamma}, {lam}")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ContractViolation("rewards, values and done flags must align")
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    next_values = np.asarray(last_values, dtype=np.float64).reshape(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
        next_values = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size < 2:
        return advantages - advantages.mean()
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


class RolloutCollector:
    """Carries env observations and episode counters across iterations."""

    def __init__(self, venv: VecEnv, policy: MMTransformerPolicy):
        self.venv = venv
        self.policy = policy
        self.obs, self.ref, self.mask = venv.reset()
        self.lengths = np.zeros(venv.num_envs, dtype=np.int64)

    def _ref(self, ref: np.ndarray):
        return ref if self.policy.ref_embed is not None and ref.shape[-1] else None

    def collect(
        self,
        steps: int,
        rng: np.random.Generator,
        gamma: float,
        w_task: float = 1.0,
        w_imitation: float = 0.0,
    ) -> RolloutBatch:
        venv, policy = self.venv, self.policy
        N = venv.num_envs
        buf: Dict[str, list] = {k: [] for k in ("obs", "ref", "mask", "actions", "log_probs", "values",
                                                 "task", "imitation", "rewards", "dones")}
        task_terms: Dict[str, list] = {}
        imitation_terms: Dict[str, list] = {}
        finished: List[int] = []
        for _ in range(steps):
            actions, log_probs, values = policy.act(self.obs, self._ref(self.ref), self.mask, rng)
            result = venv.step(actions)
            task = sum(result.task_reward.values())
            imitation = sum(result.imitation_reward.values()) if result.imitation_reward else np.zeros(N)
            reward = w_task * task + w_imitation * imitation
            if result.timeouts.any():
                rows = np.flatnonzero(result.timeouts)
                tail = policy.critic_forward(result.terminal_obs[rows], self._ref(result.terminal_ref[rows]),
                                             result.terminal_mask[rows]).value[:, 0]
                reward = reward.copy()
                reward[rows] += gamma * tail
            for key, value in (("obs", self.obs), ("ref", self.ref), ("mask", self.mask), ("actions", actions),
                               ("log_probs", log_probs), ("values", values), ("task", task),
                               ("imitation", imitation), ("rewards", reward), ("dones", result.dones)):
                buf[key].append(np.asarray(value))
            for name, value in result.task_reward.items():
                task_terms.setdefault(name, []).append(value)
            for name, value in result.imitation_reward.items():
                imitation_terms.setdefault(name, []).append(value)
            self.lengths += 1
            for i in np.flatnonzero(result.dones):
                finished.append(int(self.lengths[i]))
                self.lengths[i] = 0
            self.obs, self.ref, self.mask = result.obs, result.ref, result.mask
        last_values = policy.critic_forward(self.obs, self._ref(self.ref), self.mask).value[:, 0]
        return RolloutBatch(
            obs=np.stack(buf["obs"]),
            ref=np.stack(buf["ref"]),
            mask=np.stack(buf["mask"]),
            actions=np.stack(buf["actions"]),
            log_probs=np.stack(buf["log_probs"]),
            values=np.stack(buf["values"]),
            task_rewards=np.stack(buf["task"]),
            imitation_rewards=np.stack(buf["imitation"]),
            rewards=np.stack(buf["rewards"]),
            dones=np.stack(buf["dones"]).astype(np.float64),
            last_values=last_values,
            task_terms={k: np.stack(v) for k, v in task_terms.items()},
            imitation_terms={k: np.stack(v) for k, v in imitation_terms.items()},
            episode_lengths=finished,
            running_lengths=self.lengths.copy(),
        )
