"""
Standard-variation curriculum: each exponential tracking term walks down a
list of sigma levels once its normalized reward has stayed above a threshold
for a full dwell window.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, List, Sequence, Tuple

import numpy as np

from humimic.exceptions import ContractViolation

logger = logging.getLogger(__name__)

JOINT_LEVELS = (0.5, 0.45, 0.42, 0.4, 0.35)
VELOCITY_LEVELS = (0.75, 0.6, 0.5, 0.45, 0.4)


@dataclass(frozen=True)
class CurriculumTerm:
    name: str
    weight: float
    levels: Tuple[float, ...]
    level: int = 0
    threshold: float = 0.7
    dwell: int = 50

    def __post_init__(self) -> None:
        if not self.levels or any(v <= 0 for v in self.levels):
            raise ContractViolation("sigma levels must be positive")
        if any(b >= a for a, b in zip(self.levels, self.levels[1:])):
            raise ContractViolation("sigma levels must be strictly decreasing")
        if not 0 <= self.level < len(self.levels):
            raise ContractViolation(f"level {self.level} out of range")

    @property
    def sigma(self) -> float:
        return self.levels[self.level]

    @property
    def at_last_level(self) -> bool:
        return self.level == len(self.levels) - 1


def curriculum_update(term: CurriculumTerm, recent: Sequence[float]) -> CurriculumTerm:
    """Advance one level when the last ``dwell`` normalized rewards all reach the
    threshold. Never retreats; stays at the last level."""
    recent = list(recent)
    if term.at_last_level or len(recent) < term.dwell:
        return term
    if min(recent[-term.dwell:]) >= term.threshold:
        return replace(term, level=term.level + 1)
    return term


@dataclass
class CurriculumTracker:
    """Owns the terms and their reward windows across training iterations."""

    terms: Dict[str, CurriculumTerm]
    _windows: Dict[str, Deque[float]] = field(default_factory=dict)
    history: List[Dict[str, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for name, term in self.terms.items():
            self._windows[name] = deque(maxlen=term.dwell)

    def sigma(self, name: str) -> float:
        return self.terms[name].sigma

    def levels(self) -> Dict[str, int]:
        return {name: term.level for name, term in self.terms.items()}

    def record(self, normalized: Dict[str, float]) -> Dict[str, int]:
        """Feed one logging interval's normalized rewards; returns the new levels."""
        for name, value in normalized.items():
            if name not in self.terms or not np.isfinite(value):
                continue
            window = self._windows[name]
            window.append(float(value))
            updated = curriculum_update(self.terms[name], window)
            if updated.level != self.terms[name].level:
                logger.info(f"curriculum {name}: level {updated.level} (sigma {updated.sigma:g})")
                self.terms[name] = updated
                window.clear()
        levels = self.levels()
        self.history.append(levels)
        return levels
