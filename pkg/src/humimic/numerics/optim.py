"""
First-order optimizers.

``optimizer_step`` is the functional core: it takes parameter and gradient
arrays plus an explicit state and returns new ones. ``Optimizer`` wraps it
for ``Parameter`` collections the way training loops use it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from humimic.exceptions import ContractViolation

logger = logging.getLogger(__name__)


class Algorithm(str, Enum):
    PLAIN = "plain-gradient"
    ADAM = "adaptive-moment"


class OptimizerConfig(BaseModel):
    lr: float = Field(1e-4, gt=0, description="Learning rate")
    algorithm: Algorithm = Field(Algorithm.ADAM, description="Update rule")
    clip_norm: Optional[float] = Field(None, gt=0, description="Global gradient-norm clip")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    model_config = {"frozen": True}


@dataclass
class OptimizerState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Scale ``grads`` jointly so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return [np.asarray(g, dtype=np.float64) for g in grads], norm


def optimizer_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    config: OptimizerConfig,
    state: Optional[OptimizerState] = None,
) -> Tuple[List[np.ndarray], OptimizerState]:
    """One update. Plain mode returns exactly ``p - lr * g`` (after clipping)."""
    if len(params) != len(grads):
        raise ContractViolation(f"{len(params)} params but {len(grads)} gradients")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ContractViolation(f"param {i} has shape {p.shape}, gradient {g.shape}")

    if config.clip_norm is not None:
        grads, _ = clip_gradients(grads, config.clip_norm)

    state = state or OptimizerState()
    lr = config.lr
    if config.algorithm is Algorithm.PLAIN:
        return [p - lr * g for p, g in zip(params, grads)], OptimizerState(step=state.step + 1)

    if not state.m:
        state = OptimizerState(
            step=state.step,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + config.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimizerState(step=step, m=new_m, v=new_v)


class Optimizer:
    """Stateful optimizer over a fixed list of trainable parameters."""

    def __init__(self, parameters: Iterable, config: OptimizerConfig):
        self.parameters = [p for p in parameters if getattr(p, "trainable", True)]
        self.config = config
        self.state = OptimizerState()
        self.last_grad_norm = 0.0

    @property
    def lr(self) -> float:
        return self.config.lr

    def set_lr(self, lr: float) -> None:
        self.config = self.config.model_copy(update={"lr": float(lr)})

    def step(self, grads) -> float:
        """Apply ``grads`` (a ``Gradients`` or a mapping keyed by parameter)."""
        arrays = [np.asarray(grads[p], dtype=np.float64) for p in self.parameters]
        self.last_grad_norm = global_norm(arrays)
        if not np.isfinite(self.last_grad_norm):
            logger.warning("non-finite gradient norm; skipping update")
            return self.last_grad_norm
        values, self.state = optimizer_step(
            [p.value for p in self.parameters], arrays, self.config, self.state
        )
        for p, value in zip(self.parameters, values):
            p.value = value
        return self.last_grad_norm

    def state_dict(self) -> Dict[str, object]:
        return {"step": self.state.step, "m": list(self.state.m), "v": list(self.state.v)}

    def load_state_dict(self, data: Mapping[str, object]) -> None:
        self.state = OptimizerState(
            step=int(data["step"]), m=list(data["m"]), v=list(data["v"])  # type: ignore[arg-type]
        )
