"""
Toddler curriculum: a vertical spring-damper that holds the base up while it
sags below the reference height, annealed away as training progresses.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class ToddlerConfig(BaseModel):
    stiffness: float = Field(2000.0, ge=0, description="Spring constant k, N/m")
    damping: float = Field(100.0, ge=0, description="Damping c, N s/m")
    offset: float = Field(-0.05, description="Activation offset below the reference height, m")
    max_compression: float = Field(0.15, ge=0, description="Spring travel h_max, m")
    max_force: float = Field(730.0, gt=0, description="Force cap F_max, N")
    anneal_iterations: int = Field(200, ge=1, description="Iterations over which the assist fades out")

    @model_validator(mode="after")
    def _spring_under_cap(self):
        if self.stiffness * self.max_compression > self.max_force:
            raise ValueError("stiffness * max_compression must not exceed max_force")
        return self


def toddler_force(height: float, height_rate: float, ref_height: float, config: ToddlerConfig) -> float:
    """Upward assist F_z; zero above ``ref_height + offset``."""
    threshold = ref_height + config.offset
    if height > threshold:
        return 0.0
    compression = min(max(height - threshold, -config.max_compression), 0.0)
    force = -config.stiffness * compression - config.damping * height_rate
    return float(min(max(force, -config.max_force), config.max_force))


def toddler_anneal(config: ToddlerConfig, progress: float) -> ToddlerConfig:
    """Scale stiffness, travel and damping by ``1 - progress``."""
    scale = 1.0 - min(max(float(progress), 0.0), 1.0)
    return config.model_copy(
        update={
            "stiffness": config.stiffness * scale,
            "max_compression": config.max_compression * scale,
            "damping": config.damping * scale,
        }
    )
