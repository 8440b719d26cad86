"""Reverse-mode differentiation, rotations, optimizers and layers."""

from humimic.numerics import ops
from humimic.numerics.gradcheck import finite_difference, relative_error
from humimic.numerics.optim import (
    Algorithm,
    Optimizer,
    OptimizerConfig,
    OptimizerState,
    clip_gradients,
    optimizer_step,
)
from humimic.numerics.tape import DiffArray, Gradients, Tape, active_tape, constant

__all__ = [
    "ops",
    "DiffArray",
    "Gradients",
    "Tape",
    "active_tape",
    "constant",
    "finite_difference",
    "relative_error",
    "Algorithm",
    "Optimizer",
    "OptimizerConfig",
    "OptimizerState",
    "clip_gradients",
    "optimizer_step",
]
