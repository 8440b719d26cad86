"""Environment configuration schemas."""

from __future__ import annotations

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from humimic.refbuffer.buffer import CommandRanges

AGENT_TERMS = ("lin_vel", "ang_vel", "gravity", "height", "joints", "joint_vel", "last_action", "command")
DEFAULT_AGENT_TERMS = ("ang_vel", "gravity", "joints", "joint_vel", "last_action", "command")


class EnvMode(str, Enum):
    SIMPLIFIED = "simplified"
    FULL = "full"


class ActuatorConfig(BaseModel):
    stiffness: float = Field(60.0, ge=0, description="PD stiffness kp, N m/rad; 0 makes joints passive")
    damping: Optional[float] = Field(None, ge=0, description="PD damping kd; default critically damped")
    min_inertia: float = Field(0.05, gt=0, description="Floor on the reflected joint inertia, kg m^2")
    action_scale: float = Field(1.0, gt=0, description="Joint target = nominal + action_scale * action")
    ideal: bool = Field(False, description="Joints reach their targets exactly each step")


class ContactModel(BaseModel):
    stiffness: float = Field(2.0e4, gt=0, description="Normal spring, N/m per contact point")
    damping: float = Field(500.0, ge=0, description="Normal damper, N s/m per contact point")
    friction: float = Field(0.9, ge=0, description="Coulomb coefficient")
    tangential_damping: float = Field(2000.0, ge=0, description="Tangential damper, N s/m, capped by friction")
    foot_half_length: float = Field(0.08, gt=0, description="Heel and toe distance from the sole link, m")
    enabled: bool = Field(True, description="Ground contact in full mode")


class RandomizationConfig(BaseModel):
    enabled: bool = Field(False, description="Randomize dynamics on every reset")
    payload: float = Field(5.0, ge=0, description="Uniform payload range +-, kg")
    mass_range: Tuple[float, float] = Field((0.8, 1.2), description="Mass multiplier range")
    stiffness_range: Tuple[float, float] = Field((0.8, 1.2), description="PD stiffness multiplier range")
    damping_range: Tuple[float, float] = Field((0.8, 1.2), description="PD damping multiplier range")
    push_velocity: float = Field(0.5, ge=0, description="Push velocity range +-, m/s")
    push_interval: Tuple[float, float] = Field((4.0, 8.0), description="Seconds between pushes")
    pushes: bool = Field(False, description="Apply random pushes during episodes")

    @field_validator("mass_range", "stiffness_range", "damping_range")
    @classmethod
    def _multiplier(cls, value):
        low, high = value
        if not (0.0 < low <= high < 2.0):
            raise ValueError("multiplier range must satisfy 0 < low <= high < 2")
        return value

    @field_validator("push_interval")
    @classmethod
    def _interval(cls, value):
        if not (0.0 < value[0] <= value[1]):
            raise ValueError("push interval must be positive and ordered")
        return value


class TaskRewardConfig(BaseModel):
    alive: float = Field(0.2, ge=0, description="Per-step survival bonus")
    upright: float = Field(0.3, ge=0, description="Weight of exp(-tilt^2 / 0.25)")
    command: float = Field(1.0, ge=0, description="Weight of forward velocity command tracking")
    command_sigma: float = Field(0.25, gt=0, description="Command tracking sigma, m/s")
    action_rate: float = Field(0.01, ge=0, description="Weight of -||a_t - a_{t-1}||^2")


class EnvConfig(BaseModel):
    dt: float = Field(0.02, gt=0, description="Control period, s")
    substeps: int = Field(4, ge=1, description="Physics substeps per control step")
    gravity: float = Field(9.81, ge=0, description="Gravity magnitude, m/s^2")
    mode: EnvMode = Field(EnvMode.FULL, description="Simplified (fixed base, no contacts) or full")
    max_episode_s: float = Field(10.0, gt=0, description="Episode timeout, s")
    obs_terms: List[str] = Field(list(DEFAULT_AGENT_TERMS), description="Agent observation terms, in order")
    obs_noise: float = Field(0.0, ge=0, description="Uniform additive noise on agent observations")
    commands: CommandRanges = Field(
        default_factory=lambda: CommandRanges(lin_vel_x=(0.0, 1.0), lin_vel_y=(0.0, 0.0), ang_vel_z=(0.0, 0.0))
    )
    command_resample_s: Optional[float] = Field(None, gt=0, description="Resample reference-free commands every s")
    mask_references: bool = Field(False, description="Hide the reference from every env")
    actuator: ActuatorConfig = Field(default_factory=ActuatorConfig)
    contact: ContactModel = Field(default_factory=ContactModel)
    randomization: RandomizationConfig = Field(default_factory=RandomizationConfig)
    task: TaskRewardConfig = Field(default_factory=TaskRewardConfig)

    @field_validator("obs_terms")
    @classmethod
    def _known_terms(cls, value):
        unknown = [t for t in value if t not in AGENT_TERMS]
        if unknown:
            raise ValueError(f"unknown observation terms {unknown}")
        if len(set(value)) != len(value):
            raise ValueError("observation terms must be unique")
        return value

    @model_validator(mode="after")
    def _episode_fits(self):
        if self.max_episode_s < self.dt:
            raise ValueError("episode must last at least one control step")
        return self

    @property
    def max_episode_steps(self) -> int:
        return int(round(self.max_episode_s / self.dt))

    @property
    def sub_dt(self) -> float:
        return self.dt / self.substeps
