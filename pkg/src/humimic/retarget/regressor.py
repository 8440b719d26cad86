"""
IK regressor: 22 angle-axis tokens -> robot joint vector.

Tokens are projected to ``d_model``, get a learned positional embedding, pass
through a small transformer encoder, are projected to the robot joint
dimension one by one and are then mean-pooled.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from humimic.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from humimic.numerics import ops
from humimic.numerics.nn import Linear, Module, Parameter, TransformerEncoder
from humimic.numerics.tape import DiffArray, as_diff
from humimic.shapefit.skeleton import NUM_JOINTS

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "ik_regressor"


class IkRegressorConfig(BaseModel):
    d_model: int = Field(64, ge=8, description="Token width")
    layers: int = Field(2, ge=1, description="Encoder layers")
    heads: int = Field(4, ge=1, description="Attention heads")

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        return self


def canonical_pose(pose):
    """Zero the root rotation; the regressor only sees the body configuration."""
    keep = np.ones((NUM_JOINTS, 1))
    keep[0] = 0.0
    if isinstance(pose, DiffArray):
        return pose * keep
    return np.asarray(pose, dtype=np.float64) * keep


class IkRegressor(Module):
    def __init__(self, dof: int, config: Optional[IkRegressorConfig] = None,
                 rng: Optional[np.random.Generator] = None):
        self.config = config or IkRegressorConfig()
        self.dof = dof
        rng = rng if rng is not None else np.random.default_rng(0)
        d = self.config.d_model
        self.embed = Linear(3, d, rng)
        self.position = Parameter(rng.normal(0.0, 0.02, (NUM_JOINTS, d)), "position")
        self.encoder = TransformerEncoder(d, self.config.layers, self.config.heads, rng)
        self.head = Linear(d, dof, rng)

    def forward(self, pose) -> DiffArray:
        """``pose`` (22, 3) or (B, 22, 3); returns (dof,) or (B, dof)."""
        pose = as_diff(pose)
        single = pose.ndim == 2
        if single:
            pose = ops.reshape(pose, (1,) + pose.shape)
        tokens = self.embed(canonical_pose(pose)) + self.position.data()
        hidden = self.encoder(tokens)
        q = ops.mean(self.head(hidden), axis=1)
        return q[0] if single else q

    def predict(self, pose) -> np.ndarray:
        return self.forward(np.asarray(pose, dtype=np.float64)).value

    # -- persistence ------------------------------------------------------
    def to_checkpoint(self, meta: Optional[dict] = None, robot: Optional[str] = None) -> Checkpoint:
        config = {"dof": self.dof, "model": self.config.model_dump(), "robot": robot}
        return Checkpoint(kind=CHECKPOINT_KIND, config=config, parameters=self.state_dict(), meta=meta or {})

    def save(self, path, meta: Optional[dict] = None, robot: Optional[str] = None):
        return save_checkpoint(path, self.to_checkpoint(meta, robot))

    @classmethod
    def load(cls, path) -> "IkRegressor":
        ckpt = load_checkpoint(path, kind=CHECKPOINT_KIND)
        model = cls(int(ckpt.config["dof"]), IkRegressorConfig.model_validate(ckpt.config["model"]))
        model.load_state_dict(ckpt.parameters)
        return model
