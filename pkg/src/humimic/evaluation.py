"""
Policy evaluation.

``rollout_dump`` steps one env per motion and records per-step errors;
``metrics_from_dump`` turns such a dump into per-motion metrics and depends
on nothing else, so metrics can be recomputed offline from a saved dump.

Tracking indices are ``mean exp(-|err|^2 / sigma^2)`` over referenced steps.
The command error is the mean absolute forward-speed error divided by the
mean commanded speed, over steps without a reference.
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from humimic.env.biped import BipedEnv
from humimic.exceptions import AcceptanceFailure, ContractViolation
from humimic.policy.spec import ObservationSpec

logger = logging.getLogger(__name__)

DUMP_COLUMNS = [
    "motion", "episode", "step", "horizon", "mask", "done", "timeout",
    "command_x", "lin_vel_x", "base_x", "height", "pitch",
    "joint_err_sq", "lin_vel_err_sq", "ang_vel_err_sq",
]
TRACKED = {"joint_index": "joint_err_sq", "lin_vel_index": "lin_vel_err_sq", "ang_vel_index": "ang_vel_err_sq"}


class EvalConfig(BaseModel):
    sigma: float = Field(0.4, gt=0, description="Tracking index width")
    episodes: int = Field(1, ge=1, description="Episodes per motion")
    max_steps: Optional[int] = Field(None, ge=1, description="Episode cap; defaults to the env limit")
    settle_steps: int = Field(25, ge=0, description="Steps skipped at episode start for the command error")
    masked: bool = Field(False, description="Hide references and score command following only")
    command_episodes: int = Field(2, ge=1, description="Episodes of the reference-free rollout")
    command_resample_s: float = Field(2.0, gt=0, description="Command hold time in the reference-free rollout, s")
    min_joint_index: float = Field(0.0, ge=0, le=1, description="Acceptance floor on the joint index")
    min_survival: float = Field(0.0, ge=0, le=1, description="Acceptance floor on the survival fraction")
    max_command_error: Optional[float] = Field(None, gt=0, description="Acceptance ceiling on the command error")


class ReplayPolicy:
    """Outputs the reference joint targets carried in the reference observation.

    With ideal actuators in the simplified env this tracks the reference
    exactly, which makes it the zero-error baseline for ``eval``.
    """

    def __init__(self, ref_spec: ObservationSpec, action_dim: int, nominal=None, action_scale: float = 1.0):
        slices = ref_spec.term_slices()
        if "joints" not in slices:
            raise ContractViolation("replay needs the joints term in the reference observation")
        self.ref_spec = ref_spec
        self.joints = slices["joints"]
        self.action_dim = action_dim
        self.nominal = np.zeros(action_dim) if nominal is None else np.asarray(nominal, dtype=np.float64)
        self.action_scale = action_scale

    def act(self, obs, ref=None, mask=None, rng=None, deterministic: bool = True):
        obs = np.atleast_2d(obs)
        actions = np.zeros((len(obs), self.action_dim))
        if ref is not None:
            ref = np.atleast_2d(ref)
            live = np.asarray(mask, dtype=bool).reshape(-1)
            actions[live] = (ref[live, self.joints] - self.nominal) / self.action_scale
        return actions, np.zeros(len(obs)), np.zeros(len(obs))


def _ref_for(policy, ref: np.ndarray):
    wants = getattr(policy, "ref_spec", None) is not None
    return ref[None, :] if wants and ref.size else None


def _run_episode(env: BipedEnv, policy, motion: str, episode: int, horizon: int,
                 sequence: Optional[int]) -> List[Dict[str, float]]:
    obs, ref, mask = env.reset(sequence=sequence, start=0 if sequence is not None else None)
    rows = []
    for _ in range(horizon):
        actions, _, _ = policy.act(obs[None, :], _ref_for(policy, ref), np.array([mask]), deterministic=True)
        result = env.step(actions[0])
        info = result.info
        referenced = "joint_error" in info
        rows.append({
            "motion": motion,
            "episode": episode,
            "step": int(info["t"]),
            "horizon": horizon,
            "mask": int(referenced),
            "done": int(result.done),
            "timeout": int(result.timeout or info["t"] >= horizon),
            "command_x": float(info["command"][0]),
            "lin_vel_x": float(info["lin_vel"][0]),
            "base_x": info["base_x"],
            "height": float(info["height"]),
            "pitch": info["pitch"],
            "joint_err_sq": float(np.sum(np.square(info["joint_error"]))) if referenced else np.nan,
            "lin_vel_err_sq": float(np.sum(np.square(info["lin_vel_error"]))) if referenced else np.nan,
            "ang_vel_err_sq": float(np.sum(np.square(info["ang_vel_error"]))) if referenced else np.nan,
        })
        if result.done:
            break
        obs, ref, mask = result.obs, result.ref, result.mask
    return rows


def rollout_dump(env: BipedEnv, policy, config: Optional[EvalConfig] = None,
                 motions: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """Deterministic rollouts of ``policy`` in ``env``, one row per step.

    With references, every motion in the env's buffer (or the ``motions``
    subset) is played from its first frame ``config.episodes`` times.
    In masked mode the env follows its own sampled commands.
    """
    config = config or EvalConfig()
    horizon = min(config.max_steps or env.max_steps, env.max_steps)
    rows: List[Dict[str, float]] = []
    if config.masked or env.buffer is None:
        saved = env.config
        env.config = saved.model_copy(
            update={"mask_references": True, "command_resample_s": config.command_resample_s}
        )
        try:
            for episode in range(config.command_episodes):
                rows.extend(_run_episode(env, policy, "command", episode, horizon, None))
        finally:
            env.config = saved
    else:
        ids = list(range(env.buffer.num_sequences)) if motions is None else list(motions)
        for seq_id in ids:
            name = env.buffer.sequences[seq_id].name
            for episode in range(config.episodes):
                rows.extend(_run_episode(env, policy, name, episode, horizon, seq_id))
    dump = pd.DataFrame(rows, columns=DUMP_COLUMNS)
    logger.info(f"rollout dump: {len(dump)} steps over {dump['motion'].nunique()} motion(s)")
    return dump


def _motion_metrics(group: pd.DataFrame, sigma: float, settle: int) -> Dict[str, float]:
    row: Dict[str, float] = {"steps": float(len(group))}
    referenced = group[group["mask"] > 0]
    row["masked_steps"] = float(len(referenced))
    for name, column in TRACKED.items():
        values = referenced[column].to_numpy(dtype=np.float64)
        row[name] = float(np.mean(np.exp(-values / sigma ** 2))) if len(values) else np.nan
    episodes = group.groupby("episode").agg(horizon=("horizon", "first"), last=("step", "max"),
                                            timeout=("timeout", "max"))
    lengths = np.where(episodes["timeout"] > 0, episodes["horizon"], episodes["last"]).astype(np.float64)
    row["survival"] = float(np.mean(lengths / episodes["horizon"].to_numpy(dtype=np.float64)))
    free = group[(group["mask"] == 0) & (group["step"] > settle)]
    commanded = float(np.mean(np.abs(free["command_x"]))) if len(free) else 0.0
    if len(free) and commanded > 1e-6:
        row["command_error"] = float(np.mean(np.abs(free["lin_vel_x"] - free["command_x"]))) / commanded
    else:
        row["command_error"] = np.nan
    return row


def metrics_from_dump(dump: pd.DataFrame, sigma: float = 0.4, settle_steps: int = 25) -> pd.DataFrame:
    """Per-motion metrics plus an ``all`` row aggregated over every step."""
    missing = [c for c in DUMP_COLUMNS if c not in dump.columns]
    if missing:
        raise ContractViolation(f"rollout dump lacks columns {missing}")
    rows = []
    for motion, group in dump.groupby("motion", sort=True):
        rows.append({"motion": motion, **_motion_metrics(group, sigma, settle_steps)})
    everything = dump.assign(episode=dump["motion"].astype(str) + ":" + dump["episode"].astype(str))
    rows.append({"motion": "all", **_motion_metrics(everything, sigma, settle_steps)})
    return pd.DataFrame(rows)


def check_thresholds(metrics: pd.DataFrame, config: EvalConfig) -> None:
    """Raise ``AcceptanceFailure`` naming every threshold the ``all`` row misses."""
    overall = metrics[metrics["motion"] == "all"]
    if overall.empty:
        raise ContractViolation("metrics have no 'all' row")
    row = overall.iloc[0]
    failures = []
    if np.isfinite(row["joint_index"]) and row["joint_index"] < config.min_joint_index:
        failures.append(f"eval.min_joint_index: {row['joint_index']:.4f} < {config.min_joint_index}")
    if row["survival"] < config.min_survival:
        failures.append(f"eval.min_survival: {row['survival']:.4f} < {config.min_survival}")
    if config.max_command_error is not None and np.isfinite(row["command_error"]):
        if row["command_error"] > config.max_command_error:
            failures.append(f"eval.max_command_error: {row['command_error']:.4f} > {config.max_command_error}")
    if failures:
        raise AcceptanceFailure("; ".join(failures))
    logger.info("evaluation thresholds met")
