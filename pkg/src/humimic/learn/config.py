"""Training configuration for plain PPO and the two imitation stages."""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator

from humimic.policy.spec import LoraConfig


class PpoConfig(BaseModel):
    gamma: float = Field(0.99, ge=0, lt=1, description="Discount")
    lam: float = Field(0.95, ge=0, le=1, description="GAE lambda")
    clip: float = Field(0.2, gt=0, lt=1, description="Ratio clip epsilon, also used for the value clip")
    epochs: int = Field(4, ge=1, description="Passes over each batch")
    minibatches: int = Field(4, ge=1, description="Minibatches per pass")
    lr: float = Field(3e-4, gt=0, description="Learning rate")
    max_grad_norm: float = Field(1.0, gt=0, description="Global gradient-norm clip")
    entropy_coef: float = Field(0.0, ge=0, description="Entropy bonus coefficient")
    value_coef: float = Field(1.0, ge=0, description="Value loss coefficient")
    num_envs: int = Field(16, ge=1, description="Parallel environments")
    steps_per_env: int = Field(24, ge=1, description="Rollout length per iteration")


class RhoSchedule(BaseModel):
    """Linear anneal from ``rho_max`` to ``rho_min`` after ``warmup`` iterations."""

    rho_max: float = Field(0.9, ge=0, le=1)
    rho_min: float = Field(0.1, ge=0, le=1)
    iterations: int = Field(200, ge=1, description="Iterations over which rho falls")
    warmup: int = Field(0, ge=0, description="Iterations held at rho_max first")

    @model_validator(mode="after")
    def _ordered(self):
        if self.rho_min > self.rho_max:
            raise ValueError("rho_min must not exceed rho_max")
        return self

    def __call__(self, iteration: int) -> float:
        progress = min(max(iteration - self.warmup, 0) / self.iterations, 1.0)
        return self.rho_max + (self.rho_min - self.rho_max) * progress


class Stage1Config(BaseModel):
    iterations: int = Field(200, ge=1, description="Training iterations")
    w_task: float = Field(0.05, ge=0, description="Task reward weight w_R")
    w_imitation: float = Field(1.0, ge=0, description="Imitation reward weight w_R-hat")
    ppo: PpoConfig = Field(default_factory=PpoConfig)


class Stage2Config(BaseModel):
    iterations: int = Field(300, ge=1, description="Training iterations")
    w_task: float = Field(1.0, ge=0, description="Task reward weight")
    w_imitation: float = Field(1.0, ge=0, description="Imitation reward weight")
    w_im: float = Field(0.5, ge=0, description="Weight of the imitation NLL against teacher actions")
    rho: RhoSchedule = Field(default_factory=RhoSchedule)
    adapter_lr: float = Field(1e-3, ge=0, description="Adapter learning rate; 0 freezes the teacher")
    adapter_clip: float = Field(1.0, gt=0, description="Gradient-norm clip on adapter updates")
    lora: LoraConfig = Field(default_factory=LoraConfig)
    use_dagger: bool = Field(True, description="Distill from the stage-1 teacher")
    use_toddler: bool = Field(True, description="Apply the annealed toddler assist")
    symmetry_coef: float = Field(0.0, ge=0, description="Auxiliary symmetry loss weight")
    masked_fraction: float = Field(0.0, ge=0, le=1, description="Share of envs that never see a reference")
    ppo: PpoConfig = Field(default_factory=PpoConfig)
