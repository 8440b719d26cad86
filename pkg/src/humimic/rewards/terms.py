"""Reward kernels shared by imitation and task rewards."""

from __future__ import annotations

import numpy as np

from humimic.exceptions import ContractViolation


def _gap_sq(s, s_ref) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    s_ref = np.asarray(s_ref, dtype=np.float64)
    if s.shape != s_ref.shape:
        raise ContractViolation(f"state shape {s.shape} differs from reference {s_ref.shape}")
    return np.sum(np.square(s - s_ref), axis=-1)


def exp_tracking_reward(s, s_ref, weight: float, sigma: float):
    """weight * exp(-||s - s_ref||^2 / (2 sigma^2)), over the last axis."""
    if not sigma > 0:
        raise ContractViolation(f"sigma must be positive, got {sigma}")
    return weight * np.exp(-_gap_sq(s, s_ref) / (2.0 * sigma * sigma))


def l2_deviation_reward(s, s_ref, weight: float):
    return -weight * _gap_sq(s, s_ref)


def l2_rate_reward(rate, rate_ref, weight: float):
    return -weight * _gap_sq(rate, rate_ref)


def contact_match_reward(contacts, contacts_ref, weight: float):
    """weight times the number of feet whose contact flag equals the reference's."""
    c = np.asarray(contacts).astype(bool)
    r = np.asarray(contacts_ref).astype(bool)
    if c.shape != r.shape:
        raise ContractViolation(f"contact flags {c.shape} do not match reference {r.shape}")
    return weight * np.sum(~(c ^ r), axis=-1).astype(np.float64)


def tracking_index(error, sigma: float = 0.4):
    """exp(-||e||^2 / sigma^2) over the last axis, in [0, 1]."""
    e = np.asarray(error, dtype=np.float64)
    return np.exp(-np.sum(e * e, axis=-1) / (sigma * sigma))
