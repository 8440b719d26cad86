"""
Differentiable array operations.

Each function accepts ``DiffArray`` or anything ``numpy.asarray`` accepts,
computes the value eagerly and registers a vector-Jacobian product on the
active tape. Non-differentiable points take the subgradient 0 (``relu`` at 0,
``clip`` at its bounds, ``norm`` and ``sqrt`` at 0).
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from humimic.numerics.tape import DiffArray, apply, as_diff

Axis = Optional[Union[int, Tuple[int, ...]]]

_GELU_C = float(np.sqrt(2.0 / np.pi))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


# --- elementwise binary -----------------------------------------------------


def add(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    return apply(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def subtract(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    return apply(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def multiply(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    return apply(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def divide(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value
    out = av / bv
    return apply(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, a.shape), _unbroadcast(-g * out / bv, b.shape)))


def negative(a) -> DiffArray:
    a = as_diff(a)
    return apply(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> DiffArray:
    a = as_diff(a)
    av = a.value
    p = float(exponent)
    return apply(av ** p, (a,), lambda g: (g * p * av ** (p - 1.0),))


def square(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return apply(av * av, (a,), lambda g: (2.0 * g * av,))


def matmul(a, b) -> DiffArray:
    a, b = as_diff(a), as_diff(b)
    av, bv = a.value, b.value

    def vjp(g):
        A = av[None, :] if av.ndim == 1 else av
        B = bv[:, None] if bv.ndim == 1 else bv
        G = np.asarray(g)
        if av.ndim == 1:
            G = np.expand_dims(G, -2)
        if bv.ndim == 1:
            G = np.expand_dims(G, -1)
        ga = G @ np.swapaxes(B, -1, -2)
        gb = np.swapaxes(A, -1, -2) @ G
        if av.ndim == 1:
            ga = ga[..., 0, :]
        if bv.ndim == 1:
            gb = gb[..., :, 0]
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return apply(av @ bv, (a, b), vjp)


def where(condition, a, b) -> DiffArray:
    cond = np.asarray(condition.value if isinstance(condition, DiffArray) else condition, dtype=bool)
    a, b = as_diff(a), as_diff(b)
    return apply(np.where(cond, a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                            _unbroadcast(np.where(cond, 0.0, g), b.shape)))


def masked_fill(a, mask, fill: float) -> DiffArray:
    """``a`` with ``fill`` wherever ``mask`` is true; masked entries get no gradient."""
    mask = np.asarray(mask, dtype=bool)
    a = as_diff(a)
    return apply(np.where(mask, fill, a.value), (a,),
                 lambda g: (_unbroadcast(np.where(mask, 0.0, g), a.shape),))


# --- elementwise unary ------------------------------------------------------


def exp(a) -> DiffArray:
    a = as_diff(a)
    out = np.exp(a.value)
    return apply(out, (a,), lambda g: (g * out,))


def log(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return apply(np.log(av), (a,), lambda g: (g / av,))


def sin(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return apply(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return apply(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def tanh(a) -> DiffArray:
    a = as_diff(a)
    out = np.tanh(a.value)
    return apply(out, (a,), lambda g: (g * (1.0 - out * out),))


def sqrt(a) -> DiffArray:
    a = as_diff(a)
    out = np.sqrt(a.value)

    def vjp(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

    return apply(out, (a,), vjp)


def sigmoid(a) -> DiffArray:
    a = as_diff(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return apply(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    return apply(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def silu(a) -> DiffArray:
    a = as_diff(a)
    av = a.value
    s = 0.5 * (1.0 + np.tanh(0.5 * av))
    return apply(av * s, (a,), lambda g: (g * (s + av * s * (1.0 - s)),))


def gelu(a) -> DiffArray:
    """Tanh approximation of GELU."""
    a = as_diff(a)
    x = a.value
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return apply(out, (a,), vjp)


def clip(a, lower, upper) -> DiffArray:
    a = as_diff(a)
    av = a.value
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    inside = (av > lo) & (av < hi)
    return apply(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


# --- reductions -------------------------------------------------------------


def sum(a, axis: Axis = None, keepdims: bool = False) -> DiffArray:  # noqa: A001
    a = as_diff(a)
    shape = a.shape
    axes = _axes(axis, a.ndim)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return apply(np.sum(a.value, axis=axes, keepdims=keepdims), (a,), vjp)


def mean(a, axis: Axis = None, keepdims: bool = False) -> DiffArray:
    a = as_diff(a)
    axes = _axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) / float(max(count, 1))


def norm(a, axis: Axis = None, keepdims: bool = False) -> DiffArray:
    """Euclidean norm; the gradient at a zero vector is 0."""
    a = as_diff(a)
    av = a.value
    axes = _axes(axis, a.ndim)
    out_k = np.sqrt(np.sum(av * av, axis=axes, keepdims=True))
    out = out_k if keepdims else np.squeeze(out_k, axis=axes)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims and axes:
            g = np.expand_dims(g, axes)
        safe = np.where(out_k > 0.0, out_k, 1.0)
        return (np.where(out_k > 0.0, g * av / safe, 0.0),)

    return apply(out, (a,), vjp)


def softmax(a, axis: int = -1) -> DiffArray:
    a = as_diff(a)
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return apply(out, (a,), vjp)


# --- shape manipulation -----------------------------------------------------


def reshape(a, shape: Sequence[int]) -> DiffArray:
    a = as_diff(a)
    src = a.shape
    return apply(a.value.reshape(tuple(shape)), (a,), lambda g: (np.reshape(g, src),))


def expand_dims(a, axis: int) -> DiffArray:
    a = as_diff(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def transpose(a, axes: Optional[Sequence[int]] = None) -> DiffArray:
    a = as_diff(a)
    perm = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(perm))
    return apply(np.transpose(a.value, perm), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, axis1: int, axis2: int) -> DiffArray:
    a = as_diff(a)
    perm = list(range(a.ndim))
    perm[axis1], perm[axis2] = perm[axis2], perm[axis1]
    return transpose(a, perm)


def broadcast_to(a, shape: Sequence[int]) -> DiffArray:
    a = as_diff(a)
    src = a.shape
    return apply(np.broadcast_to(a.value, tuple(shape)), (a,), lambda g: (_unbroadcast(g, src),))


def getitem(a, index) -> DiffArray:
    a = as_diff(a)
    if isinstance(index, DiffArray):
        index = index.value.astype(np.int64)
    src = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def vjp(g):
        full = np.zeros(src)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return apply(a.value[index], (a,), vjp)


def concatenate(arrays: Sequence, axis: int = 0) -> DiffArray:
    parts = [as_diff(x) for x in arrays]
    out = np.concatenate([p.value for p in parts], axis=axis)
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply(out, parts, vjp)


def stack(arrays: Sequence, axis: int = 0) -> DiffArray:
    parts = [as_diff(x) for x in arrays]
    out = np.stack([p.value for p in parts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return apply(out, parts, vjp)


__all__ = [
    "add", "subtract", "multiply", "divide", "negative", "power", "square", "matmul",
    "where", "masked_fill", "exp", "log", "sin", "cos", "tanh", "sqrt", "sigmoid",
    "relu", "silu", "gelu", "clip", "sum", "mean", "norm", "softmax", "reshape",
    "expand_dims", "transpose", "swapaxes", "broadcast_to", "getitem", "concatenate",
    "stack",
]
