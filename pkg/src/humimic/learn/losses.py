"""Differentiable losses for policy optimization and distillation."""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.tape import DiffArray, as_diff, constant

HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


def ppo_clip_loss(log_probs, old_log_probs, advantages, clip: float) -> Tuple[DiffArray, Dict[str, float]]:
    """Negative clipped surrogate ``-mean(min(r A, clip(r, 1-eps, 1+eps) A))``."""
    if not 0.0 < clip < 1.0:
        raise ContractViolation(f"clip epsilon must lie in (0, 1), got {clip}")
    log_probs = as_diff(log_probs)
    old = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    if log_probs.shape != old.shape or old.shape != adv.shape:
        raise ContractViolation("log-probs, old log-probs and advantages must align")
    ratio = ops.exp(log_probs - old)
    unclipped = ratio * adv
    clipped = ops.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    surrogate = ops.where(unclipped.value <= clipped.value, unclipped, clipped)
    r = ratio.value
    info = {
        "approx_kl": float(np.mean((r - 1.0) - np.log(r))),
        "clip_fraction": float(np.mean(np.abs(r - 1.0) > clip)),
    }
    return -ops.mean(surrogate), info


def value_loss(values, old_values, returns, clip: float) -> DiffArray:
    """``0.5 * mean(max((V - R)^2, (V_clipped - R)^2))`` with V kept near the
    rollout estimate."""
    values = as_diff(values)
    old = np.asarray(old_values, dtype=np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    clipped = old + ops.clip(values - old, -clip, clip)
    err = ops.square(values - ret)
    err_clipped = ops.square(clipped - ret)
    worst = ops.where(err.value >= err_clipped.value, err, err_clipped)
    return 0.5 * ops.mean(worst)


def imitation_nll(mean, log_std, teacher_actions) -> DiffArray:
    """Mean Gaussian negative log-likelihood of teacher actions under the
    student's distribution, averaged over batch and action dims."""
    mean = as_diff(mean)
    log_std = as_diff(log_std)
    target = np.asarray(teacher_actions.value if isinstance(teacher_actions, DiffArray) else teacher_actions,
                        dtype=np.float64)
    if target.shape != mean.shape:
        raise ContractViolation(f"teacher actions {target.shape} do not match student means {mean.shape}")
    z = (mean - target) * ops.exp(-log_std)
    return ops.mean(0.5 * ops.square(z) + log_std + HALF_LOG_2PI)


def dagger_loss(teacher_actions, student_actions, rho: float) -> DiffArray:
    """``(1 - rho) * mean_batch sum_dof (a_teacher - a_student)^2``; the student is a constant."""
    if not 0.0 <= rho <= 1.0:
        raise ContractViolation(f"rho must lie in [0, 1], got {rho}")
    teacher_actions = as_diff(teacher_actions)
    student = constant(student_actions.value if isinstance(student_actions, DiffArray) else student_actions)
    if teacher_actions.shape != student.shape:
        raise ContractViolation("teacher and student actions must align")
    gap = ops.sum(ops.square(teacher_actions - student), axis=-1)
    return (1.0 - rho) * ops.mean(gap)
