"""
Small neural-network layer library on top of the differentiation tape.

Layers hold ``Parameter`` objects. ``Parameter.data()`` returns a tracked
leaf while a tape is active (and the parameter is trainable), and a plain
constant otherwise, so the same ``forward`` serves training and inference.
"""

from __future__ import annotations

import logging
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.tape import DiffArray, active_tape, as_diff

logger = logging.getLogger(__name__)


class Parameter:
    __slots__ = ("value", "name", "trainable", "__weakref__")

    def __init__(self, value, name: str = "", trainable: bool = True):
        self.value = np.array(value, dtype=np.float64)
        self.name = name
        self.trainable = trainable

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def data(self) -> DiffArray:
        tape = active_tape()
        if tape is not None and self.trainable:
            return tape.watch(self)
        return DiffArray(self.value)

    def __repr__(self) -> str:
        flag = "" if self.trainable else ", frozen"
        return f"Parameter({self.name or '?'}, shape={self.shape}{flag})"


class Module:
    """Base class; parameters are discovered from attributes in assignment order."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self, trainable_only: bool = False) -> List[Parameter]:
        return [p for _, p in self.named_parameters() if p.trainable or not trainable_only]

    def num_parameters(self, trainable_only: bool = False) -> int:
        return int(sum(p.value.size for p in self.parameters(trainable_only)))

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.trainable = False
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.trainable = True
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if strict and (missing or unexpected):
            raise ContractViolation(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ContractViolation(
                    f"{name}: expected shape {own[name].shape}, got {value.shape}"
                )
            own[name].value = value.copy()


class Linear(Module):
    """``y = x @ (W + adapter.delta()) + b`` with W of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, scale: Optional[float] = None):
        bound = scale if scale is not None else 1.0 / np.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(rng.uniform(-bound, bound, (in_features, out_features)), "weight")
        self.bias = Parameter(np.zeros(out_features), "bias") if bias else None
        self.adapter: Optional[Module] = None

    def effective_weight(self) -> DiffArray:
        w = self.weight.data()
        if self.adapter is not None:
            w = w + self.adapter.delta()
        return w

    def forward(self, x) -> DiffArray:
        y = ops.matmul(x, self.effective_weight())
        if self.bias is not None:
            y = y + self.bias.data()
        return y


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-8):
        self.eps = eps
        self.gain = Parameter(np.ones(dim), "gain")

    def forward(self, x) -> DiffArray:
        x = as_diff(x)
        rms = ops.sqrt(ops.mean(ops.square(x), axis=-1, keepdims=True) + self.eps)
        return x / rms * self.gain.data()


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator):
        if dim % num_heads:
            raise ContractViolation(f"dim {dim} is not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: DiffArray) -> DiffArray:
        B, T, _ = x.shape
        return ops.transpose(ops.reshape(x, (B, T, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x, key_padding: Optional[np.ndarray] = None) -> DiffArray:
        """``key_padding`` (B, T) is true where a token must not be attended to."""
        x = as_diff(x)
        B, T, D = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = ops.matmul(q, ops.swapaxes(k, -1, -2)) / np.sqrt(self.head_dim)
        if key_padding is not None:
            pad = np.asarray(key_padding, dtype=bool).reshape(B, 1, 1, T)
            if np.any(pad.all(axis=-1)):
                raise ContractViolation("key padding masks every token of a sequence")
            scores = ops.masked_fill(scores, np.broadcast_to(pad, scores.shape), -np.inf)
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.value
        context = ops.matmul(weights, v)
        merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (B, T, D))
        return self.out(merged)


class EncoderLayer(Module):
    """Pre-norm block: attention then a GELU feed-forward of width ``4 * dim``."""

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator, ffn_mult: int = 4):
        self.norm_attn = RMSNorm(dim)
        self.attention = MultiHeadSelfAttention(dim, num_heads, rng)
        self.norm_ffn = RMSNorm(dim)
        self.ffn_in = Linear(dim, ffn_mult * dim, rng)
        self.ffn_out = Linear(ffn_mult * dim, dim, rng)

    def forward(self, x, key_padding: Optional[np.ndarray] = None) -> DiffArray:
        x = x + self.attention(self.norm_attn(x), key_padding)
        return x + self.ffn_out(ops.gelu(self.ffn_in(self.norm_ffn(x))))


class TransformerEncoder(Module):
    def __init__(self, dim: int, num_layers: int, num_heads: int, rng: np.random.Generator):
        self.layers = [EncoderLayer(dim, num_heads, rng) for _ in range(num_layers)]
        self.norm = RMSNorm(dim)

    def forward(self, x, key_padding: Optional[np.ndarray] = None) -> DiffArray:
        for layer in self.layers:
            x = layer(x, key_padding)
        return self.norm(x)

    def attention_weights(self) -> List[Optional[np.ndarray]]:
        return [layer.attention.last_weights for layer in self.layers]
