"""
Low-rank adapters.

An adapter on a ``Linear`` with weight W (in, out) adds ``scaling * (B A)^T``
where A is (r, in) and B is (out, r). B starts at zero, so a fresh adapter
leaves the layer's output bit-for-bit unchanged.
"""

from __future__ import annotations

import hashlib
import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.nn import Linear, Module, Parameter
from humimic.numerics.tape import DiffArray

logger = logging.getLogger(__name__)


class LoraAdapter(Module):
    def __init__(self, in_features: int, out_features: int, rank: int, alpha: float,
                 rng: np.random.Generator):
        if not 1 <= rank < min(in_features, out_features):
            raise ContractViolation(
                f"adapter rank {rank} must be in [1, {min(in_features, out_features)})"
            )
        self.rank = rank
        self.scaling = alpha / rank
        self.A = Parameter(rng.normal(0.0, 1.0 / np.sqrt(in_features), (rank, in_features)), "A")
        self.B = Parameter(np.zeros((out_features, rank)), "B")

    def delta(self) -> DiffArray:
        """(in, out) increment to the wrapped weight."""
        return ops.matmul(ops.transpose(self.A.data()), ops.transpose(self.B.data())) * self.scaling

    def delta_value(self) -> np.ndarray:
        return self.scaling * (self.B.value @ self.A.value).T


def lora_apply(weight: np.ndarray, adapter: LoraAdapter) -> np.ndarray:
    """Effective weight ``W + scaling * (B A)^T`` for an (in, out) weight."""
    weight = np.asarray(weight, dtype=np.float64)
    delta = adapter.delta_value()
    if delta.shape != weight.shape:
        raise ContractViolation(f"adapter delta {delta.shape} does not match weight {weight.shape}")
    return weight + delta


def _linears(module: Module, prefix: str = "") -> List[Tuple[str, Linear]]:
    found = []
    for key, value in vars(module).items():
        name = f"{prefix}{key}"
        if isinstance(value, Linear):
            found.append((name, value))
        elif isinstance(value, Module):
            found.extend(_linears(value, f"{name}."))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, Linear):
                    found.append((f"{name}.{i}", item))
                elif isinstance(item, Module):
                    found.extend(_linears(item, f"{name}.{i}."))
    return found


def attach_lora(
    module: Module,
    rank: int,
    alpha: float,
    rng: np.random.Generator,
    select: Optional[Callable[[str], bool]] = None,
) -> List[str]:
    """Attach fresh adapters to every selected ``Linear`` in ``module`` and freeze
    the wrapped weights. Returns the adapted layer names."""
    names = []
    for name, layer in _linears(module):
        if select is not None and not select(name):
            continue
        if layer.adapter is not None:
            raise ContractViolation(f"{name} already carries an adapter")
        layer.adapter = LoraAdapter(layer.in_features, layer.out_features, rank, alpha, rng)
        layer.weight.trainable = False
        if layer.bias is not None:
            layer.bias.trainable = False
        names.append(name)
    logger.debug(f"attached rank-{rank} adapters to {len(names)} layers")
    return names


def adapter_parameters(module: Module) -> List[Parameter]:
    return [p for name, p in module.named_parameters() if ".adapter." in f".{name}"]


def base_checksum(module: Module) -> str:
    """sha256 over every non-adapter parameter, in name order."""
    digest = hashlib.sha256()
    for name, p in sorted(module.named_parameters(), key=lambda item: item[0]):
        if ".adapter." in f".{name}":
            continue
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(p.value).tobytes())
    return digest.hexdigest()
