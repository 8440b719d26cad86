"""Rotation helpers shared by kinematics, shape fitting and the environment."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from humimic.numerics import ops
from humimic.numerics.tape import DiffArray, as_diff

_SMALL_ANGLE = 1e-6


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_matrix(axis: Sequence[float], angle) -> DiffArray:
    """Rotation about a fixed unit ``axis`` by ``angle`` of shape (...), result (..., 3, 3).

    Differentiable in ``angle``.
    """
    K = skew(axis)
    K2 = K @ K
    angle = as_diff(angle)
    tail = angle.shape + (1, 1)
    s = ops.reshape(ops.sin(angle), tail)
    c = ops.reshape(1.0 - ops.cos(angle), tail)
    return np.eye(3) + s * K + c * K2


def rotvec_matrix(rotvec) -> DiffArray:
    """Rotation vector (..., 3) to matrix (..., 3, 3), differentiable everywhere.

    Below a small angle the sin/cos coefficients switch to their Taylor series.
    """
    v = as_diff(rotvec)
    theta2 = ops.sum(ops.square(v), axis=-1)
    small = theta2.value < _SMALL_ANGLE ** 2
    safe2 = ops.where(small, np.ones_like(theta2.value), theta2)
    theta = ops.sqrt(safe2)
    a = ops.where(small, 1.0 - theta2 / 6.0, ops.sin(theta) / theta)
    b = ops.where(small, 0.5 - theta2 / 24.0, (1.0 - ops.cos(theta)) / safe2)

    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = x * 0.0
    rows = [
        ops.stack([zero, -z, y], axis=-1),
        ops.stack([z, zero, -x], axis=-1),
        ops.stack([-y, x, zero], axis=-1),
    ]
    K = ops.stack(rows, axis=-2)
    tail = theta2.shape + (1, 1)
    return np.eye(3) + ops.reshape(a, tail) * K + ops.reshape(b, tail) * (K @ K)


def rotate(R, v) -> DiffArray:
    """Apply rotations (..., 3, 3) to vectors (..., 3)."""
    v = as_diff(v)
    out = ops.matmul(R, ops.reshape(v, v.shape + (1,)))
    return ops.reshape(out, out.shape[:-1])


def rpy_matrix(rpy: Sequence[float]) -> np.ndarray:
    """Fixed-axis roll-pitch-yaw, as used by robot description origins."""
    return Rotation.from_euler("xyz", np.asarray(rpy, dtype=np.float64)).as_matrix()


def yaw_of(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R)
    return np.arctan2(R[..., 1, 0], R[..., 0, 0])


def yaw_matrix(yaw) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    out = np.zeros(yaw.shape + (3, 3))
    out[..., 0, 0], out[..., 0, 1] = c, -s
    out[..., 1, 0], out[..., 1, 1] = s, c
    out[..., 2, 2] = 1.0
    return out
