"""
Imitation reward: a weighted set of tracking terms comparing the agent's state
channels with the reference frame. Terms with a curriculum read their sigma
from a shared ``CurriculumTracker``.
"""

from __future__ import annotations

from enum import Enum
from typing import Dict, List, Mapping, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from humimic.exceptions import ConfigError
from humimic.postprocess.sequence import CHANNELS
from humimic.rewards.curriculum import (
    JOINT_LEVELS,
    VELOCITY_LEVELS,
    CurriculumTerm,
    CurriculumTracker,
)
from humimic.rewards.terms import (
    contact_match_reward,
    exp_tracking_reward,
    l2_deviation_reward,
    l2_rate_reward,
)
from humimic.rewards.termination import TerminationSpec
from humimic.rewards.toddler import ToddlerConfig


class TermKind(str, Enum):
    EXP = "exp"
    L2 = "l2"
    RATE = "rate"
    CONTACT = "contact"


class RewardTermConfig(BaseModel):
    channel: str = Field(..., description="State channel compared with the reference")
    kind: TermKind = TermKind.EXP
    weight: float = Field(1.0, ge=0)
    sigma: float = Field(0.5, gt=0, description="Fixed sigma for exp terms without a curriculum")
    levels: Optional[List[float]] = Field(None, description="Curriculum sigma levels, strictly decreasing")

    @model_validator(mode="after")
    def _check(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.levels is not None and self.kind is not TermKind.EXP:
            raise ValueError("only exp terms take a curriculum")
        return self


def _default_terms() -> Dict[str, RewardTermConfig]:
    return {
        "joint_pos": RewardTermConfig(channel="joints", weight=1.0, levels=list(JOINT_LEVELS)),
        "lin_vel": RewardTermConfig(channel="lin_vel", weight=1.0, levels=list(VELOCITY_LEVELS)),
        "ang_vel": RewardTermConfig(channel="ang_vel", weight=0.5, levels=list(VELOCITY_LEVELS)),
        "base_height": RewardTermConfig(channel="height", weight=0.5, sigma=0.1),
        "orientation": RewardTermConfig(channel="gravity", weight=0.5, sigma=0.2),
        "joint_vel": RewardTermConfig(channel="joint_vel", kind=TermKind.RATE, weight=1e-3),
        "joint_pos_l2": RewardTermConfig(channel="joints", kind=TermKind.L2, weight=0.0),
        "contacts": RewardTermConfig(channel="contacts", kind=TermKind.CONTACT, weight=0.2),
    }


class RewardConfig(BaseModel):
    terms: Dict[str, RewardTermConfig] = Field(default_factory=_default_terms)
    curriculum_threshold: float = Field(0.7, gt=0, le=1, description="Normalized reward needed to advance")
    curriculum_dwell: int = Field(50, ge=1, description="Logging intervals the threshold must hold")
    termination: TerminationSpec = Field(default_factory=TerminationSpec)
    toddler: ToddlerConfig = Field(default_factory=ToddlerConfig)
    use_toddler: bool = Field(True, description="Apply the toddler assist in full mode")


def make_tracker(config: RewardConfig) -> CurriculumTracker:
    terms = {
        name: CurriculumTerm(name, term.weight, tuple(term.levels), 0,
                             config.curriculum_threshold, config.curriculum_dwell)
        for name, term in config.terms.items()
        if term.levels and term.weight > 0
    }
    return CurriculumTracker(terms)


class ImitationReward:
    def __init__(self, config: Optional[RewardConfig] = None, tracker: Optional[CurriculumTracker] = None):
        self.config = config or RewardConfig()
        self.tracker = tracker if tracker is not None else make_tracker(self.config)

    @property
    def term_names(self) -> List[str]:
        return list(self.config.terms)

    def sigma(self, name: str) -> float:
        if name in self.tracker.terms:
            return self.tracker.sigma(name)
        return self.config.terms[name].sigma

    def __call__(self, state: Mapping[str, np.ndarray], reference: Mapping[str, np.ndarray],
                 mask: int) -> Dict[str, float]:
        """Per-term rewards for one step; every term is 0 without a reference."""
        out: Dict[str, float] = {}
        for name, term in self.config.terms.items():
            if not mask or term.weight == 0:
                out[name] = 0.0
                continue
            try:
                s, s_ref = state[term.channel], reference[term.channel]
            except KeyError as exc:
                raise ConfigError(f"state has no {exc.args[0]!r} channel", field=f"rewards.terms.{name}") from exc
            if term.kind is TermKind.EXP:
                value = exp_tracking_reward(s, s_ref, term.weight, self.sigma(name))
            elif term.kind is TermKind.L2:
                value = l2_deviation_reward(s, s_ref, term.weight)
            elif term.kind is TermKind.RATE:
                value = l2_rate_reward(s, s_ref, term.weight)
            else:
                value = contact_match_reward(np.asarray(s) > 0.5, np.asarray(s_ref) > 0.5, term.weight)
            out[name] = float(value)
        return out

    def normalized(self, per_term: Mapping[str, np.ndarray], mask: np.ndarray) -> Dict[str, float]:
        """Batch mean of each curriculum term over referenced steps, divided by its weight."""
        mask = np.asarray(mask, dtype=bool)
        out = {}
        for name in self.tracker.terms:
            values = np.asarray(per_term[name])[mask]
            out[name] = float(values.mean() / self.config.terms[name].weight) if values.size else float("nan")
        return out
