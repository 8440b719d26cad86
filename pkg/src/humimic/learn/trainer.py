"""
Policy optimization loops.

``train_ppo`` is the shared core. ``stage1_train`` runs it in the simplified
env, where the base follows the reference exactly, so the learning batch
already carries the reference base state next to the agent's joint state.
``stage2_train`` warm-starts a student from the stage-1 policy in full
physics, distills from an adapter-tuned copy of that policy, anneals the
toddler assist and mixes task and imitation rewards.

Both stages draw actions and minibatch orders from the same named streams, so
with the distillation terms switched off they reproduce plain PPO bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from humimic.env.biped import VecEnv
from humimic.env.config import EnvMode
from humimic.exceptions import ContractViolation, TrainingDivergence
from humimic.learn.config import PpoConfig, Stage1Config, Stage2Config
from humimic.learn.losses import dagger_loss, imitation_nll, ppo_clip_loss, value_loss
from humimic.learn.rollout import RolloutBatch, RolloutCollector, gae_advantages, normalize_advantages
from humimic.learn.symmetry import SymmetryMaps, build_symmetry_maps, symmetry_aux_loss
from humimic.numerics.optim import Optimizer, OptimizerConfig
from humimic.numerics.tape import DiffArray, Tape
from humimic.policy.checkpoint import policy_from_checkpoint, policy_to_checkpoint
from humimic.policy.lora import adapter_parameters, base_checksum
from humimic.policy.transformer import MMTransformerPolicy, PolicyOutput, gaussian_entropy, gaussian_log_prob
from humimic.rewards.toddler import toddler_anneal
from humimic.seeding import named_rng

logger = logging.getLogger(__name__)

ProgressFn = Callable[[int, Dict[str, float]], None]


@dataclass
class Minibatch:
    index: np.ndarray
    obs: np.ndarray
    ref: Optional[np.ndarray]
    mask: np.ndarray
    actions: np.ndarray


class IterationHooks:
    """Extension points of ``train_ppo``; the base class adds nothing."""

    def before_rollout(self, venv: VecEnv, iteration: int) -> Dict[str, float]:
        return {}

    def prepare(self, batch: RolloutBatch, iteration: int) -> None:
        pass

    def extra_loss(self, mb: Minibatch, out: PolicyOutput) -> Tuple[Optional[DiffArray], Dict[str, float]]:
        return None, {}

    def after_update(self, batch: RolloutBatch, iteration: int, rng: np.random.Generator) -> Dict[str, float]:
        return {}


def clone_policy(policy: MMTransformerPolicy) -> MMTransformerPolicy:
    return policy_from_checkpoint(policy_to_checkpoint(policy))


def _uses_ref(policy: MMTransformerPolicy, ref: np.ndarray) -> bool:
    return policy.ref_embed is not None and ref.shape[-1] > 0


def _finite(value: float, stage: str, iteration: int, what: str) -> float:
    if not np.isfinite(value):
        raise TrainingDivergence(stage, iteration, f"{what} became non-finite")
    return value


def ppo_update(
    policy: MMTransformerPolicy,
    optimizer: Optimizer,
    batch: RolloutBatch,
    config: PpoConfig,
    rng: np.random.Generator,
    hooks: Optional[IterationHooks] = None,
    stage: str = "ppo",
    iteration: int = 0,
) -> Dict[str, float]:
    """Clipped-surrogate epochs over ``batch``; returns averaged statistics."""
    if batch.advantages is None or batch.returns is None:
        raise ContractViolation("compute advantages before updating")
    hooks = hooks or IterationHooks()
    obs, ref, mask = batch.flat("obs"), batch.flat("ref"), batch.flat("mask")
    actions, old_log_probs = batch.flat("actions"), batch.flat("log_probs")
    old_values, returns = batch.flat("values"), batch.flat("returns")
    advantages = normalize_advantages(batch.flat("advantages"))
    use_ref = _uses_ref(policy, ref)
    sums: Dict[str, float] = {}
    count = 0
    for _ in range(config.epochs):
        for index in batch.minibatches(config.minibatches, rng):
            mb = Minibatch(index, obs[index], ref[index] if use_ref else None, mask[index], actions[index])
            with Tape() as tape:
                out = policy.forward(mb.obs, mb.ref, mb.mask)
                log_probs = gaussian_log_prob(mb.actions, out.mean, out.log_std)
                pi_loss, info = ppo_clip_loss(log_probs, old_log_probs[index], advantages[index], config.clip)
                v_loss = value_loss(out.value[:, 0], old_values[index], returns[index], config.clip)
                entropy = gaussian_entropy(out.log_std)
                loss = pi_loss + config.value_coef * v_loss - config.entropy_coef * entropy
                extra, extra_info = hooks.extra_loss(mb, out)
                if extra is not None:
                    loss = loss + extra
                _finite(loss.item(), stage, iteration, "PPO loss")
                grads = tape.backward(loss)
            grad_norm = optimizer.step(grads)
            stats = {"policy_loss": pi_loss.item(), "value_loss": v_loss.item(), "entropy": entropy.item(),
                     "grad_norm": grad_norm, **info, **extra_info}
            for key, value in stats.items():
                sums[key] = sums.get(key, 0.0) + float(value)
            count += 1
    return {key: value / max(count, 1) for key, value in sums.items()}


def _batch_stats(venv: VecEnv, batch: RolloutBatch) -> Dict[str, float]:
    row: Dict[str, float] = {
        "reward": float(batch.rewards.mean()),
        "task_reward": float(batch.task_rewards.mean()),
        "imitation_reward": float(batch.imitation_rewards.mean()),
        "mask_fraction": float(batch.mask.mean()),
        "episode_length": batch.mean_episode_length(),
        "episodes": float(len(batch.episode_lengths)),
    }
    row["survival"] = min(row["episode_length"] / max(venv.envs[0].max_steps, 1), 1.0)
    for name, values in batch.task_terms.items():
        row[f"task_{name}"] = float(values.mean())
    masked = batch.mask > 0
    for name, values in batch.imitation_terms.items():
        row[f"im_{name}"] = float(values[masked].mean()) if masked.any() else float("nan")
    return row


def train_ppo(
    venv: VecEnv,
    policy: MMTransformerPolicy,
    config: PpoConfig,
    iterations: int,
    seed: int,
    w_task: float = 1.0,
    w_imitation: float = 0.0,
    stage: str = "ppo",
    hooks: Optional[IterationHooks] = None,
    progress: Optional[ProgressFn] = None,
    start_iteration: int = 0,
) -> pd.DataFrame:
    """Plain PPO over ``venv`` with rewards ``w_task * R + w_imitation * R-hat``.

    Returns one trace row per iteration. The shared imitation reward's
    curriculum is advanced from every batch that holds referenced steps.
    """
    hooks = hooks or IterationHooks()
    action_rng = named_rng(seed, "learn.actions")
    order_rng = named_rng(seed, "learn.minibatches")
    optimizer = Optimizer(policy.parameters(), OptimizerConfig(lr=config.lr, clip_norm=config.max_grad_norm))
    collector = RolloutCollector(venv, policy)
    reward = venv.envs[0].reward
    rows: List[Dict[str, float]] = []
    for iteration in range(start_iteration, start_iteration + iterations):
        row: Dict[str, float] = {"iteration": float(iteration)}
        row.update(hooks.before_rollout(venv, iteration))
        batch = collector.collect(config.steps_per_env, action_rng, config.gamma, w_task, w_imitation)
        batch.advantages, batch.returns = gae_advantages(
            batch.rewards, batch.values, batch.dones, batch.last_values, config.gamma, config.lam
        )
        hooks.prepare(batch, iteration)
        row.update(_batch_stats(venv, batch))
        row.update(ppo_update(policy, optimizer, batch, config, order_rng, hooks, stage, iteration))
        row.update(hooks.after_update(batch, iteration, order_rng))
        if w_imitation > 0 and batch.mask.any():
            normalized = reward.normalized(batch.imitation_terms, batch.mask)
            reward.tracker.record(normalized)
            for name, value in normalized.items():
                row[f"norm_{name}"] = value
        for name, level in reward.tracker.levels().items():
            row[f"level_{name}"] = float(level)
            row[f"sigma_{name}"] = reward.tracker.sigma(name)
        _finite(row["reward"], stage, iteration, "mean reward")
        rows.append(row)
        logger.info(
            f"{stage} iter {iteration}: reward {row['reward']:.4f} "
            f"task {row['task_reward']:.4f} im {row['imitation_reward']:.4f} "
            f"ep_len {row['episode_length']:.1f} kl {row.get('approx_kl', 0.0):.4f}"
        )
        if progress is not None:
            progress(iteration, row)
    trace = pd.DataFrame(rows)
    trace.insert(0, "stage", stage)
    return trace


def stage1_train(
    venv: VecEnv,
    policy: MMTransformerPolicy,
    config: Stage1Config,
    seed: int,
    progress: Optional[ProgressFn] = None,
) -> pd.DataFrame:
    """Imitation-dominated PPO in the simplified env; trains ``policy`` in place."""
    if config.w_task >= config.w_imitation:
        logger.warning(
            f"stage 1 task weight {config.w_task} is not below imitation weight {config.w_imitation}"
        )
    venv.set_mode(EnvMode.SIMPLIFIED)
    venv.set_toddler(None)
    return train_ppo(venv, policy, config.ppo, config.iterations, seed,
                     config.w_task, config.w_imitation, "stage1", progress=progress)


class DistillationHooks(IterationHooks):
    """Stage-2 additions: toddler annealing, the imitation NLL against the
    adapter-tuned teacher, adapter updates and the optional symmetry loss."""

    def __init__(
        self,
        student: MMTransformerPolicy,
        teacher: Optional[MMTransformerPolicy],
        config: Stage2Config,
        toddler_base=None,
        symmetry: Optional[SymmetryMaps] = None,
    ):
        self.student = student
        self.teacher = teacher
        self.config = config
        self.toddler_base = toddler_base
        self.symmetry = symmetry
        self.teacher_actions: Optional[np.ndarray] = None
        self.rho = config.rho.rho_max
        self.adapter_optimizer: Optional[Optimizer] = None
        if teacher is not None and config.adapter_lr > 0:
            self.adapter_optimizer = Optimizer(
                [p for p in teacher.parameters() if p.trainable],
                OptimizerConfig(lr=config.adapter_lr, clip_norm=config.adapter_clip),
            )

    def before_rollout(self, venv: VecEnv, iteration: int) -> Dict[str, float]:
        self.rho = self.config.rho(iteration)
        row = {"rho": self.rho}
        if self.config.use_toddler and self.toddler_base is not None:
            progress = iteration / max(self.toddler_base.anneal_iterations, 1)
            toddler = toddler_anneal(self.toddler_base, progress)
            venv.set_toddler(toddler)
            row["toddler_stiffness"] = toddler.stiffness
        return row

    def _teacher_means(self, obs, ref, mask) -> np.ndarray:
        use_ref = ref is not None and self.teacher.ref_embed is not None
        return self.teacher.actor_forward(obs, ref if use_ref else None, mask).value

    def prepare(self, batch: RolloutBatch, iteration: int) -> None:
        self.teacher_actions = None
        if self.teacher is not None and self.config.w_im > 0:
            ref = batch.flat("ref")
            self.teacher_actions = self._teacher_means(batch.flat("obs"), ref if ref.shape[-1] else None,
                                                       batch.flat("mask"))

    def extra_loss(self, mb: Minibatch, out: PolicyOutput):
        total, info = None, {}
        if self.teacher_actions is not None:
            nll = imitation_nll(out.mean, out.log_std, self.teacher_actions[mb.index])
            total = self.config.w_im * nll
            info["imitation_nll"] = nll.item()
        if self.config.symmetry_coef > 0:
            sym = symmetry_aux_loss(self.student, mb.obs, mb.ref, mb.mask, self.symmetry)
            total = self.config.symmetry_coef * sym if total is None else total + self.config.symmetry_coef * sym
            info["symmetry_loss"] = sym.item()
        return total, info

    def after_update(self, batch: RolloutBatch, iteration: int, rng: np.random.Generator) -> Dict[str, float]:
        if self.adapter_optimizer is None:
            return {}
        obs, ref, mask = batch.flat("obs"), batch.flat("ref"), batch.flat("mask")
        student_ref = ref if _uses_ref(self.student, ref) else None
        student_actions = self.student.actor_forward(obs, student_ref, mask).value
        teacher_ref = ref if _uses_ref(self.teacher, ref) else None
        losses = []
        for index in batch.minibatches(self.config.ppo.minibatches, rng):
            with Tape() as tape:
                mean = self.teacher.actor_forward(obs[index], teacher_ref[index] if teacher_ref is not None else None,
                                                  mask[index])
                loss = dagger_loss(mean, student_actions[index], self.rho)
                _finite(loss.item(), "stage2", iteration, "adapter loss")
                grads = tape.backward(loss)
            self.adapter_optimizer.step(grads)
            losses.append(loss.item())
        return {"dagger_loss": float(np.mean(losses))}


@dataclass
class Stage2Result:
    student: MMTransformerPolicy
    teacher: Optional[MMTransformerPolicy]
    trace: pd.DataFrame
    teacher_base_checksum: Optional[str] = None


def stage2_train(
    venv: VecEnv,
    dagger_policy: MMTransformerPolicy,
    config: Stage2Config,
    seed: int,
    progress: Optional[ProgressFn] = None,
) -> Stage2Result:
    """Full-physics fine-tuning of a student warm-started from ``dagger_policy``.

    The teacher is a copy of ``dagger_policy`` whose base weights are frozen;
    only its low-rank adapters move. ``dagger_policy`` itself is not modified.
    """
    venv.set_mode(EnvMode.FULL)
    masked = int(round(config.masked_fraction * venv.num_envs))
    for i, env in enumerate(venv.envs):
        env.config = env.config.model_copy(update={"mask_references": i < masked})
    if masked:
        logger.info(f"stage 2: {masked} of {venv.num_envs} envs train without references")
    venv.set_toddler(None)

    student = clone_policy(dagger_policy)
    teacher = None
    checksum = None
    if config.use_dagger:
        teacher = clone_policy(dagger_policy)
        teacher.attach_adapters(config.lora, named_rng(seed, "stage2.adapters"))
        checksum = base_checksum(teacher)
        logger.info(f"stage 2 teacher: {len(adapter_parameters(teacher))} adapter tensors")
    symmetry = None
    if config.symmetry_coef > 0:
        symmetry = build_symmetry_maps(venv.envs[0].tree, venv.obs_spec,
                                       venv.ref_spec if student.ref_embed is not None else None)
    toddler = venv.envs[0].reward.config.toddler if venv.envs[0].reward.config.use_toddler else None
    hooks = DistillationHooks(student, teacher, config, toddler, symmetry)
    trace = train_ppo(venv, student, config.ppo, config.iterations, seed,
                      config.w_task, config.w_imitation, "stage2", hooks, progress)
    venv.set_toddler(None)
    if teacher is not None and base_checksum(teacher) != checksum:
        raise TrainingDivergence(
            "stage2", config.iterations - 1, "teacher base weights changed during adapter updates"
        )
    return Stage2Result(student, teacher, trace, checksum)
