"""
Cyclic-subsequence search.

A cycle is the first index pair (i, j), smallest i then smallest j, with
``j - i >= ceil(0.2 n)`` and ``||q_i - q_j|| <= eps``. Looping frames
``[i, j)`` then replays the motion indefinitely.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from humimic.exceptions import ContractViolation

logger = logging.getLogger(__name__)

MIN_SEPARATION = 0.2


def min_separation(n: int) -> int:
    return max(1, math.ceil(MIN_SEPARATION * n - 1e-12))


def _check(joints: np.ndarray, eps: float) -> np.ndarray:
    if not eps > 0:
        raise ContractViolation(f"cycle tolerance must be positive, got {eps}")
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim == 1:
        joints = joints[:, None]
    if joints.shape[0] < 5:
        raise ContractViolation("cycle search needs at least five frames")
    return joints


def extract_cycle(joints: np.ndarray, eps: float) -> Optional[Tuple[int, int]]:
    """KD-tree radius search; returns ``None`` when no pair qualifies.

    Start/end-distance pruning: start frames stop at ``n - gap``, and candidate end
    frames fewer than ``gap`` frames after the start are dropped before the exact
    distance check.
    """
    joints = _check(joints, eps)
    n = joints.shape[0]
    gap = min_separation(n)
    if gap >= n:
        return None
    tree = cKDTree(joints)
    # slightly inflated radius; every candidate is re-checked exactly below
    radius = eps * (1.0 + 1e-9)
    for i in range(n - gap):
        candidates = tree.query_ball_point(joints[i], radius)
        admissible = sorted(j for j in candidates if j - i >= gap)
        for j in admissible:
            if np.linalg.norm(joints[i] - joints[j]) <= eps:
                logger.debug(f"cycle found at ({i}, {j}) after scanning {i + 1} start frames")
                return i, int(j)
    return None


def extract_cycle_bruteforce(joints: np.ndarray, eps: float) -> Optional[Tuple[int, int]]:
    """O(n^2) scan with the same tie-breaking as ``extract_cycle``."""
    joints = _check(joints, eps)
    n = joints.shape[0]
    gap = min_separation(n)
    for i in range(n):
        for j in range(i + gap, n):
            if np.linalg.norm(joints[i] - joints[j]) <= eps:
                return i, j
    return None
