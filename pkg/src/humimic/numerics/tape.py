"""
Reverse-Mode Differentiation Tape
=================================

``DiffArray`` wraps a float64 numpy array. Operations in
``humimic.numerics.ops`` evaluate eagerly and, while a ``Tape`` is active
(``with Tape() as tape:``), record one node per result together with its
vector-Jacobian product. ``Tape.backward`` walks the nodes in reverse order
and returns the gradient of a scalar output with respect to every leaf.

Outside an active tape nothing is recorded, which is how inference and
environment rollouts run without bookkeeping cost.

One tape per worker: the active tape lives in a ``contextvars.ContextVar`` so
threads never see each other's tapes.
"""

from __future__ import annotations

import contextvars
import logging
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from humimic.exceptions import ContractViolation

logger = logging.getLogger(__name__)

VectorJacobian = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "humimic_active_tape", default=None
)


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPE.get()


class _Epoch:
    """Identity token for one recording generation of a tape."""

    __slots__ = ()


class _Node:
    __slots__ = ("parents", "vjp", "shape")

    def __init__(self, parents: Tuple[Optional[int], ...], vjp: Optional[VectorJacobian], shape):
        self.parents = parents
        self.vjp = vjp
        self.shape = shape


class DiffArray:
    """Array value plus an optional handle into the tape that produced it."""

    __slots__ = ("value", "node", "owner")
    # let numpy binary operators defer to our reflected dunders
    __array_ufunc__ = None

    def __init__(self, value, node: Optional[int] = None, owner: Optional[_Epoch] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.node = node
        self.owner = owner

    # -- introspection --------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __len__(self) -> int:
        return len(self.value)

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"DiffArray(shape={self.shape}{tag})"

    # -- operators (implemented in ops) -------------------------------------
    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.subtract(self, other)

    def __rsub__(self, other):
        return ops.subtract(other, self)

    def __mul__(self, other):
        return ops.multiply(self, other)

    def __rmul__(self, other):
        return ops.multiply(other, self)

    def __truediv__(self, other):
        return ops.divide(self, other)

    def __rtruediv__(self, other):
        return ops.divide(other, self)

    def __neg__(self):
        return ops.negative(self)

    def __pow__(self, exponent: float):
        return ops.power(self, exponent)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        return ops.matmul(other, self)

    def __getitem__(self, index):
        return ops.getitem(self, index)

    @property
    def T(self) -> "DiffArray":
        return ops.transpose(self)

    def reshape(self, *shape) -> "DiffArray":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes) -> "DiffArray":
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "DiffArray":
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "DiffArray":
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def constant(x) -> DiffArray:
    """Detach ``x``: same value, no gradient path."""
    return DiffArray(x.value if isinstance(x, DiffArray) else x)


def apply(value: np.ndarray, inputs: Sequence[DiffArray], vjp: VectorJacobian) -> DiffArray:
    """Wrap an eagerly computed ``value``; record it when any input is tracked."""
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        return DiffArray(value)
    tracked = False
    for x in inputs:
        if x.node is None:
            continue
        if x.owner is not tape.epoch:
            raise ContractViolation("value was recorded on a different (or cleared) tape")
        tracked = True
    if not tracked:
        return DiffArray(value)
    return tape.record(value, inputs, vjp)


class Gradients:
    """Result of ``Tape.backward``: leaf gradients, zero for leaves off the path."""

    def __init__(self, epoch: _Epoch, leaf_grads: Dict[int, np.ndarray],
                 leaf_shapes: Dict[int, Tuple[int, ...]], watched: Dict[int, DiffArray]):
        self._epoch = epoch
        self._grads = leaf_grads
        self._shapes = leaf_shapes
        self._watched = watched

    def _leaf_for(self, key) -> Optional[DiffArray]:
        if isinstance(key, DiffArray):
            return key
        return self._watched.get(id(key))

    def __getitem__(self, key) -> np.ndarray:
        leaf = self._leaf_for(key)
        if leaf is None:
            return np.zeros(np.shape(key.value))
        if leaf.node is None or leaf.owner is not self._epoch:
            return np.zeros(leaf.shape)
        if leaf.node not in self._shapes:
            raise ContractViolation("gradients are only reported for leaves")
        grad = self._grads.get(leaf.node)
        if grad is None:
            return np.zeros(leaf.shape)
        return np.array(grad, dtype=np.float64).reshape(leaf.shape)

    def __contains__(self, key) -> bool:
        leaf = self._leaf_for(key)
        return leaf is not None and leaf.node in self._grads

    def __len__(self) -> int:
        return len(self._shapes)

    def items(self) -> Iterator[Tuple[int, np.ndarray]]:
        for node, shape in self._shapes.items():
            grad = self._grads.get(node)
            yield node, np.zeros(shape) if grad is None else np.asarray(grad).reshape(shape)


class Tape:
    """Records operations on ``DiffArray`` values for one loss evaluation."""

    def __init__(self) -> None:
        self._nodes: List[_Node] = []
        self._watched: Dict[int, DiffArray] = {}
        self._tokens: List[contextvars.Token] = []
        self.epoch = _Epoch()

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes = []
        self._watched = {}
        self.epoch = _Epoch()

    # -- leaves ---------------------------------------------------------
    def variable(self, value) -> DiffArray:
        arr = np.array(value, dtype=np.float64)
        return self._push(arr, (), None)

    def watch(self, parameter) -> DiffArray:
        """Leaf for an object exposing ``.value``; one leaf per object per tape."""
        leaf = self._watched.get(id(parameter))
        if leaf is None:
            leaf = self._push(np.asarray(parameter.value, dtype=np.float64), (), None)
            self._watched[id(parameter)] = leaf
        return leaf

    # -- recording ------------------------------------------------------
    def _push(self, value: np.ndarray, parents, vjp) -> DiffArray:
        node = len(self._nodes)
        self._nodes.append(_Node(tuple(parents), vjp, value.shape))
        return DiffArray(value, node, self.epoch)

    def record(self, value: np.ndarray, inputs: Sequence[DiffArray], vjp: VectorJacobian) -> DiffArray:
        parents = tuple(x.node if x.owner is self.epoch else None for x in inputs)
        return self._push(np.asarray(value, dtype=np.float64), parents, vjp)

    def backward(self, output: DiffArray) -> Gradients:
        if not isinstance(output, DiffArray) or output.size != 1:
            shape = getattr(output, "shape", type(output).__name__)
            raise ContractViolation(f"backward() needs a scalar output, got {shape}")
        leaf_shapes = {i: n.shape for i, n in enumerate(self._nodes) if n.vjp is None}
        if output.node is None or output.owner is not self.epoch:
            logger.debug("backward() on a value with no recorded path; gradients are zero")
            return Gradients(self.epoch, {}, leaf_shapes, dict(self._watched))

        grads: List[Optional[np.ndarray]] = [None] * (output.node + 1)
        grads[output.node] = np.ones(output.shape)
        for index in range(output.node, -1, -1):
            upstream = grads[index]
            node = self._nodes[index]
            if upstream is None or node.vjp is None:
                continue
            for parent, grad in zip(node.parents, node.vjp(upstream)):
                if parent is None or grad is None:
                    continue
                grads[parent] = grad if grads[parent] is None else grads[parent] + grad
            # free intermediate gradients as soon as they are propagated
            grads[index] = None

        leaf_grads = {i: g for i, g in enumerate(grads) if g is not None and i in leaf_shapes}
        return Gradients(self.epoch, leaf_grads, leaf_shapes, dict(self._watched))


from humimic.numerics import ops  # noqa: E402  (ops imports this module)
