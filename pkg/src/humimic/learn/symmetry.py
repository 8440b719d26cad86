"""
Left/right mirroring of flat observation and action vectors.

Each observation term has a fixed rule: base linear velocity and gravity
flip their lateral component, angular velocity flips roll and yaw, commands
flip lateral speed and yaw rate, joint-indexed terms use the robot's signed
joint permutation and foot-indexed terms swap feet.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.kinematics.symmetry import SignedPermutation, SymmetryMap, name_permutation
from humimic.kinematics.tree import KinematicTree
from humimic.numerics import ops
from humimic.numerics.tape import DiffArray
from humimic.policy.spec import ObservationSpec

logger = logging.getLogger(__name__)

_VECTOR_SIGNS = {
    "lin_vel": (1.0, -1.0, 1.0),
    "gravity": (1.0, -1.0, 1.0),
    "ang_vel": (-1.0, 1.0, -1.0),
    "command": (1.0, -1.0, -1.0),
    "height": (1.0,),
}
_JOINT_TERMS = ("joints", "joint_vel", "last_action")


@dataclass(frozen=True)
class SymmetryMaps:
    obs: SignedPermutation
    action: SignedPermutation
    ref: Optional[SignedPermutation] = None


def _term_mirror(name: str, dim: int, joints: SignedPermutation, feet: np.ndarray):
    if name in _VECTOR_SIGNS:
        signs = np.asarray(_VECTOR_SIGNS[name])
        if len(signs) != dim:
            raise ContractViolation(f"term {name!r} has {dim} values, mirroring expects {len(signs)}")
        return np.arange(dim), signs
    if name in _JOINT_TERMS:
        if dim != len(joints):
            raise ContractViolation(f"term {name!r} has {dim} values for {len(joints)} joints")
        return joints.perm, joints.signs
    if name == "contacts":
        return feet, np.ones(dim)
    if name == "phase":
        width = dim // max(len(feet), 1)
        perm = (feet[:, None] * width + np.arange(width)[None, :]).reshape(-1)
        return perm, np.ones(dim)
    raise ContractViolation(f"no mirror rule for observation term {name!r}")


def spec_mirror(spec: ObservationSpec, joints: SignedPermutation, feet: np.ndarray) -> SignedPermutation:
    """Signed permutation of a flat observation laid out by ``spec``."""
    perm, signs, offset = [], [], 0
    for term in spec.terms:
        p, s = _term_mirror(term.name, term.dim, joints, feet)
        for block in range(term.history):
            start = offset + block * term.dim
            perm.append(start + np.asarray(p))
            signs.append(np.asarray(s, dtype=np.float64))
        offset += term.size
    return SignedPermutation(np.concatenate(perm), np.concatenate(signs))


def build_symmetry_maps(tree: KinematicTree, obs_spec: ObservationSpec,
                        ref_spec: Optional[ObservationSpec] = None) -> SymmetryMaps:
    joints = SymmetryMap.from_tree(tree).joints
    feet = name_permutation(list(tree.feet))
    return SymmetryMaps(
        obs=spec_mirror(obs_spec, joints, feet),
        action=joints,
        ref=spec_mirror(ref_spec, joints, feet) if ref_spec is not None else None,
    )


def apply_mirror(x, mirror: SignedPermutation):
    if isinstance(x, DiffArray):
        return ops.matmul(x, mirror.matrix.T)
    return np.asarray(x, dtype=np.float64)[..., mirror.perm] * mirror.signs


def symmetry_aux_loss(policy, obs, ref, mask, maps: Optional[SymmetryMaps]) -> DiffArray:
    """``mean_batch sum_dof (M_a mu(o, r) - mu(M_o o, M_r r))^2``."""
    if maps is None:
        raise ContractViolation("symmetry loss needs observation and action mirror maps")
    if ref is not None and maps.ref is None:
        raise ContractViolation("symmetry loss got references but no reference mirror map")
    mirrored_ref = apply_mirror(ref, maps.ref) if ref is not None else None
    mu = policy.actor_forward(obs, ref, mask)
    mu_mirrored = policy.actor_forward(apply_mirror(obs, maps.obs), mirrored_ref, mask)
    gap = apply_mirror(mu, maps.action) - mu_mirrored
    return ops.mean(ops.sum(ops.square(gap), axis=-1))
