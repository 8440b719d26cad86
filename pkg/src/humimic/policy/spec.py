"""
Policy configuration and observation layout.

An ``ObservationSpec`` is an ordered list of groups of named terms. The flat
observation vector lays terms out group by group; a term with history depth H
occupies H consecutive blocks, oldest first.
"""

from __future__ import annotations

from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from humimic.exceptions import ContractViolation


class EmbeddingMode(str, Enum):
    BASIC = "basic"
    GROUPED_V2 = "grouped-v2"


class TransformerConfig(BaseModel):
    d_model: int = Field(64, ge=8, description="Token width")
    layers: int = Field(2, ge=1, description="Encoder layers")
    heads: int = Field(4, ge=1, description="Attention heads")
    ffn_mult: int = Field(4, ge=1, description="Feed-forward width as a multiple of d_model")

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by {self.heads} heads")
        return self


class ObservationTerm(BaseModel):
    name: str
    dim: int = Field(..., ge=1)
    history: int = Field(1, ge=1)

    @property
    def size(self) -> int:
        return self.dim * self.history


class ObservationGroup(BaseModel):
    name: str
    terms: List[ObservationTerm]

    @field_validator("terms")
    @classmethod
    def _shared_history(cls, value):
        if not value:
            raise ValueError("a group needs at least one term")
        if len({t.history for t in value}) > 1:
            raise ValueError("terms in one group must share a history depth")
        return value

    @property
    def history(self) -> int:
        return self.terms[0].history

    @property
    def width(self) -> int:
        """Features per history step."""
        return sum(t.dim for t in self.terms)

    @property
    def size(self) -> int:
        return sum(t.size for t in self.terms)


class ObservationSpec(BaseModel):
    groups: List[ObservationGroup]
    mode: EmbeddingMode = EmbeddingMode.BASIC
    tokens: int = Field(4, ge=1, description="Token count for the basic embedding")

    @field_validator("groups")
    @classmethod
    def _unique(cls, value):
        names = [g.name for g in value]
        if len(set(names)) != len(names):
            raise ValueError("group names must be unique")
        terms = [t.name for g in value for t in g.terms]
        if len(set(terms)) != len(terms):
            raise ValueError("term names must be unique")
        return value

    @property
    def dim(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def terms(self) -> List[ObservationTerm]:
        return [t for g in self.groups for t in g.terms]

    @property
    def num_tokens(self) -> int:
        return len(self.groups) if self.mode is EmbeddingMode.GROUPED_V2 else self.tokens

    def term_slices(self) -> Dict[str, slice]:
        out, offset = {}, 0
        for term in self.terms:
            out[term.name] = slice(offset, offset + term.size)
            offset += term.size
        return out

    def flatten(self, history: Sequence[Mapping[str, np.ndarray]]) -> np.ndarray:
        """Flat vector from a list of per-step term dicts, newest last.

        Missing older steps repeat the oldest available one.
        """
        if not history:
            raise ContractViolation("observation history is empty")
        parts = []
        for term in self.terms:
            for lag in range(term.history - 1, -1, -1):
                step = history[max(len(history) - 1 - lag, 0)]
                value = np.asarray(step[term.name], dtype=np.float64).reshape(-1)
                if value.size != term.dim:
                    raise ContractViolation(f"term {term.name!r} has {value.size} values, expected {term.dim}")
                parts.append(value)
        return np.concatenate(parts)

    def grouped(self, x: np.ndarray) -> List[np.ndarray]:
        """Split flat (B, dim) into per-group (B, H, width) arrays."""
        x = np.asarray(x)
        if x.shape[-1] != self.dim:
            raise ContractViolation(f"observation has {x.shape[-1]} values, spec expects {self.dim}")
        out, offset = [], 0
        for group in self.groups:
            blocks = []
            for term in group.terms:
                blocks.append(x[..., offset:offset + term.size].reshape(x.shape[:-1] + (term.history, term.dim)))
                offset += term.size
            out.append(np.concatenate(blocks, axis=-1))
        return out

    @property
    def max_history(self) -> int:
        return max(t.history for t in self.terms)


def default_groups(term_dims: Mapping[str, int], history: int = 1) -> List[ObservationGroup]:
    """IMU (angular velocity + gravity), contact phase, joint states, then one
    group per remaining term, in that order."""
    rules = [
        ("imu", ("ang_vel", "gravity")),
        ("phase", ("phase",)),
        ("joint_state", ("joints", "joint_vel")),
    ]
    used = set()
    groups: List[ObservationGroup] = []
    for name, members in rules:
        terms = [ObservationTerm(name=m, dim=term_dims[m], history=history) for m in members if m in term_dims]
        if terms:
            groups.append(ObservationGroup(name=name, terms=terms))
            used.update(t.name for t in terms)
    for name, dim in term_dims.items():
        if name not in used:
            groups.append(ObservationGroup(name=name, terms=[ObservationTerm(name=name, dim=dim, history=history)]))
    return groups


def make_spec(term_dims: Mapping[str, int], mode: EmbeddingMode = EmbeddingMode.BASIC,
              tokens: int = 4, history: int = 1) -> ObservationSpec:
    return ObservationSpec(groups=default_groups(term_dims, history), mode=mode, tokens=tokens)


class LoraConfig(BaseModel):
    rank: int = Field(4, ge=1, description="Adapter rank")
    alpha: float = Field(8.0, gt=0, description="Scaling numerator; scaling = alpha / rank")
    train_heads: bool = Field(False, description="Also fine-tune the actor head of the teacher")


class PolicyConfig(BaseModel):
    transformer: TransformerConfig = Field(default_factory=TransformerConfig)
    mode: EmbeddingMode = Field(EmbeddingMode.BASIC, description="Observation embedding")
    obs_tokens: int = Field(4, ge=1, description="Tokens for the basic observation embedding")
    ref_tokens: int = Field(4, ge=1, description="Tokens for the basic reference embedding")
    history: int = Field(1, ge=1, description="History depth of every observation term")
    init_log_std: float = Field(-0.7, description="Initial log action std")
    glu_hidden: Optional[int] = Field(None, ge=1, description="Grouped embedding conv channels; default d_model")
