"""
Sagittal mirroring.

The mirror plane is x-z (lateral axis y). Joints and keypoints are paired by
swapping left/right in their names; unpaired ones map to themselves.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.numerics import ops
from humimic.numerics.tape import DiffArray

MIRROR = np.diag([1.0, -1.0, 1.0])

_SIDE = re.compile(r"(^|_)(left|right|l|r|Left|Right|L|R)(_|$)")
_SWAP = {"left": "right", "right": "left", "l": "r", "r": "l",
         "Left": "Right", "Right": "Left", "L": "R", "R": "L"}


def partner_name(name: str) -> str:
    """``left_knee`` -> ``right_knee``; names without a side token map to themselves."""
    return _SIDE.sub(lambda m: f"{m.group(1)}{_SWAP[m.group(2)]}{m.group(3)}", name, count=1)


def name_permutation(names: Sequence[str]) -> np.ndarray:
    index = {n: i for i, n in enumerate(names)}
    perm = []
    for name in names:
        partner = partner_name(name)
        if partner not in index:
            raise ContractViolation(f"{name!r} has no mirror partner {partner!r}")
        perm.append(index[partner])
    return np.asarray(perm, dtype=np.int64)


@dataclass(frozen=True)
class SignedPermutation:
    """``x -> signs * x[perm]``; must be an involution."""

    perm: np.ndarray
    signs: np.ndarray

    def __post_init__(self) -> None:
        perm = np.asarray(self.perm, dtype=np.int64)
        signs = np.asarray(self.signs, dtype=np.float64)
        n = len(perm)
        if signs.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
            raise ContractViolation("perm must be a permutation with one sign per entry")
        if not np.array_equal(perm[perm], np.arange(n)) or not np.array_equal(signs[perm], signs):
            raise ContractViolation("signed permutation is not an involution")
        object.__setattr__(self, "perm", perm)
        object.__setattr__(self, "signs", signs)

    def __len__(self) -> int:
        return len(self.perm)

    @property
    def matrix(self) -> np.ndarray:
        """P with (P @ x)[i] = signs[i] * x[perm[i]]."""
        P = np.zeros((len(self), len(self)))
        P[np.arange(len(self)), self.perm] = self.signs
        return P


@dataclass(frozen=True)
class SymmetryMap:
    joints: SignedPermutation
    keypoints: SignedPermutation

    @classmethod
    def from_tree(cls, tree) -> "SymmetryMap":
        actuated = tree.actuated_joints
        names = [j.name for j in actuated]
        perm = name_permutation(names)
        signs = []
        for i, j in enumerate(perm):
            axis = np.asarray(actuated[i].axis)
            partner_axis = np.asarray(actuated[j].axis)
            # reflected rotation about a equals rotation about -M a
            signs.append(1.0 if float(np.dot(-MIRROR @ axis, partner_axis)) >= 0.0 else -1.0)
        kp_perm = name_permutation(tree.keypoint_names) if tree.keypoints else np.zeros(0, dtype=np.int64)
        return cls(
            joints=SignedPermutation(perm, np.asarray(signs)),
            keypoints=SignedPermutation(kp_perm, np.ones(len(kp_perm))),
        )

    def mirror_joints(self, q):
        if isinstance(q, DiffArray):
            return ops.matmul(q, self.joints.matrix.T)
        return np.asarray(q, dtype=np.float64)[..., self.joints.perm] * self.joints.signs

    def mirror_keypoints(self, x):
        lateral = np.array([1.0, -1.0, 1.0])
        if isinstance(x, DiffArray):
            return ops.matmul(self.keypoints.matrix, x) * lateral
        return np.asarray(x, dtype=np.float64)[..., self.keypoints.perm, :] * lateral


class MirrorKind(str, Enum):
    JOINTS = "joints"
    KEYPOINTS = "keypoints"


def mirror(x, mapping: SymmetryMap, kind: Optional[Union[MirrorKind, str]] = None):
    """Mirror a joint vector (..., J) or a keypoint set (..., K, 3).

    Without ``kind`` the shape decides, and a shape that fits both readings is rejected.
    """
    arr = x.value if isinstance(x, DiffArray) else np.asarray(x)
    K = len(mapping.keypoints)
    fits = {
        MirrorKind.KEYPOINTS: K > 0 and arr.ndim >= 2 and arr.shape[-2:] == (K, 3),
        MirrorKind.JOINTS: arr.ndim >= 1 and arr.shape[-1:] == (len(mapping.joints),),
    }
    if kind is None:
        if all(fits.values()):
            raise ContractViolation(f"shape {arr.shape} is ambiguous; pass kind= to mirror it")
        kind = next((k for k, ok in fits.items() if ok), None)
    else:
        kind = MirrorKind(kind)
    if kind is None or not fits[kind]:
        raise ContractViolation(f"cannot mirror an array of shape {arr.shape}")
    if kind is MirrorKind.KEYPOINTS:
        return mapping.mirror_keypoints(x)
    return mapping.mirror_joints(x)


def mirror_rotvecs(rotvecs, perm: Sequence[int]):
    """Mirror per-joint rotation vectors (..., N, 3): R -> M R M, i.e. r -> (-x, y, -z)."""
    flip = np.array([-1.0, 1.0, -1.0])
    perm = np.asarray(perm, dtype=np.int64)
    if isinstance(rotvecs, DiffArray):
        P = np.eye(len(perm))[perm]
        return ops.matmul(P, rotvecs) * flip
    return np.asarray(rotvecs, dtype=np.float64)[..., perm, :] * flip


def side_pairs(names: Sequence[str]) -> List[tuple]:
    perm = name_permutation(names)
    return [(names[i], names[j]) for i, j in enumerate(perm) if i < j]


__all__ = ["MirrorKind", "SignedPermutation", "SymmetryMap", "mirror", "mirror_rotvecs", "partner_name", "side_pairs"]
