"""Observation tokenizers."""

from __future__ import annotations

from typing import List

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.nn import Linear, Module, Parameter
from humimic.numerics.tape import DiffArray, as_diff
from humimic.policy.spec import EmbeddingMode, ObservationGroup, ObservationSpec


class BasicEmbedding(Module):
    """One affine map to ``tokens * d_model`` values, reshaped, plus positions."""

    def __init__(self, in_dim: int, tokens: int, d_model: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.tokens = tokens
        self.d_model = d_model
        self.project = Linear(in_dim, tokens * d_model, rng)
        self.position = Parameter(rng.normal(0.0, 0.02, (tokens, d_model)), "position")

    def forward(self, x) -> DiffArray:
        x = as_diff(x)
        if x.shape[-1] != self.in_dim:
            raise ContractViolation(f"embedding expects {self.in_dim} inputs, got {x.shape[-1]}")
        flat = self.project(x)
        return ops.reshape(flat, x.shape[:-1] + (self.tokens, self.d_model)) + self.position.data()


class GroupEmbedding(Module):
    """Temporal convolution over the full history, then a SwiGLU projection."""

    def __init__(self, group: ObservationGroup, hidden: int, d_model: int, rng: np.random.Generator):
        self.history = group.history
        self.width = group.width
        bound = 1.0 / np.sqrt(self.history * self.width)
        self.kernel = Parameter(rng.uniform(-bound, bound, (self.history, self.width, hidden)), "kernel")
        self.conv_bias = Parameter(np.zeros(hidden), "conv_bias")
        self.gate = Linear(hidden, hidden, rng)
        self.up = Linear(hidden, hidden, rng)
        self.down = Linear(hidden, d_model, rng)

    def forward(self, x) -> DiffArray:
        """``x`` (B, H, width) -> (B, d_model)."""
        x = as_diff(x)
        if x.shape[-2:] != (self.history, self.width):
            raise ContractViolation(
                f"group expects history {self.history} x {self.width} features, got {x.shape[-2:]}"
            )
        kernel = self.kernel.data()
        conv = self.conv_bias.data()
        for h in range(self.history):
            conv = conv + ops.matmul(x[:, h, :], kernel[h])
        return self.down(ops.silu(self.gate(conv)) * self.up(conv))


class GroupedEmbedding(Module):
    """One token per observation group, plus positions."""

    def __init__(self, spec: ObservationSpec, d_model: int, rng: np.random.Generator, hidden: int = 0):
        self.spec = spec
        hidden = hidden or d_model
        self.groups: List[GroupEmbedding] = [GroupEmbedding(g, hidden, d_model, rng) for g in spec.groups]
        self.position = Parameter(rng.normal(0.0, 0.02, (len(spec.groups), d_model)), "position")

    def forward(self, x) -> DiffArray:
        x = as_diff(x)
        if x.shape[-1] != self.spec.dim:
            raise ContractViolation(f"observation has {x.shape[-1]} values, spec expects {self.spec.dim}")
        tokens = []
        offset = 0
        for group, embed in zip(self.spec.groups, self.groups):
            blocks = []
            for term in group.terms:
                block = x[:, offset:offset + term.size]
                blocks.append(ops.reshape(block, (x.shape[0], term.history, term.dim)))
                offset += term.size
            grouped = blocks[0] if len(blocks) == 1 else ops.concatenate(blocks, axis=-1)
            tokens.append(embed(grouped))
        return ops.stack(tokens, axis=1) + self.position.data()


def make_embedding(spec: ObservationSpec, d_model: int, rng: np.random.Generator, hidden: int = 0) -> Module:
    if spec.mode is EmbeddingMode.GROUPED_V2:
        return GroupedEmbedding(spec, d_model, rng, hidden)
    return BasicEmbedding(spec.dim, spec.tokens, d_model, rng)
