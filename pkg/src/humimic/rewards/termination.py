"""Episode termination: task checks plus reference-aware deviation checks."""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field


class TerminationSpec(BaseModel):
    max_gravity_deviation: float = Field(0.5, gt=0, description="Angle between own and reference gravity, rad")
    max_height_deviation: float = Field(0.3, gt=0, description="Root height gap to the reference, m")
    min_height: float = Field(0.35, ge=0, description="Task check: base height floor, m")
    max_tilt: float = Field(1.0, gt=0, description="Task check: base tilt from upright, rad")


def gravity_angle(g, g_ref) -> float:
    g = np.asarray(g, dtype=np.float64)
    g_ref = np.asarray(g_ref, dtype=np.float64)
    cos = np.dot(g, g_ref) / max(np.linalg.norm(g) * np.linalg.norm(g_ref), 1e-12)
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def task_termination(height: float, gravity, spec: TerminationSpec) -> bool:
    tilt = gravity_angle(gravity, (0.0, 0.0, -1.0))
    return bool(height < spec.min_height or tilt > spec.max_tilt)


def imitation_termination(height: float, gravity, ref_height: float, ref_gravity, mask: int,
                          spec: TerminationSpec) -> bool:
    """Task termination, plus reference deviation checks when a reference is available."""
    if task_termination(height, gravity, spec):
        return True
    if not mask:
        return False
    return bool(
        gravity_angle(gravity, ref_gravity) > spec.max_gravity_deviation
        or abs(height - ref_height) > spec.max_height_deviation
    )
