"""
Composite retargeting objective.

Each term takes a batch of human poses ``p`` (B, 22, 3) (or a single pose)
and any callable ``regressor(p) -> q``. Batched terms are per-frame norms
averaged over frames, so a single frame gives the plain norm.
"""

from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from humimic.exceptions import ConfigError, ContractViolation
from humimic.kinematics.fk import keypoint_positions
from humimic.kinematics.symmetry import SymmetryMap
from humimic.kinematics.tree import KinematicTree
from humimic.numerics import ops
from humimic.numerics.tape import DiffArray, as_diff
from humimic.retarget.regressor import canonical_pose
from humimic.shapefit.skeleton import JOINT_INDEX, ShapeParams, human_fk, mirror_pose, selection_matrix

logger = logging.getLogger(__name__)

Regressor = Callable[..., DiffArray]


class IkLossWeights(BaseModel):
    dist: float = Field(5000.0, ge=0, description="Keypoint distance weight")
    limit: float = Field(1000.0, ge=0, description="Joint-limit violation weight")
    disturb_start: float = Field(100.0, ge=0, description="Disturbance weight at the first epoch")
    disturb_end: float = Field(200.0, ge=0, description="Disturbance weight at the last epoch")
    sym: float = Field(1000.0, ge=0, description="Bilateral symmetry weight")
    dof: float = Field(1000.0, ge=0, description="Single-DoF joint supervision weight")
    disturb_sigma: float = Field(0.01, gt=0, description="Disturbance std as a fraction of 2*pi")

    def disturb_at(self, epoch: int, epochs: int) -> float:
        """Linear anneal from ``disturb_start`` (epoch 0) to ``disturb_end`` (last epoch)."""
        if epochs <= 1:
            return self.disturb_start
        t = min(max(epoch / (epochs - 1), 0.0), 1.0)
        return self.disturb_start + t * (self.disturb_end - self.disturb_start)


def _batched(p) -> Tuple[DiffArray, bool]:
    p = as_diff(p)
    if p.ndim == 2:
        return ops.reshape(p, (1,) + p.shape), True
    return p, False


def _frame_norm(x: DiffArray, weights: Optional[np.ndarray] = None) -> DiffArray:
    """sqrt of the (weighted) sum of squares over all but the first axis, averaged."""
    sq = ops.square(x)
    if weights is not None:
        sq = sq * weights
    per_frame = ops.sqrt(ops.sum(ops.reshape(sq, (x.shape[0], -1)), axis=1))
    return ops.mean(per_frame)


def human_targets(tree: KinematicTree, shape: ShapeParams, p) -> DiffArray:
    """Scaled human keypoints at the robot's keypoint names, root rotation removed."""
    S = selection_matrix(tree.keypoint_names)
    return ops.matmul(S, human_fk(canonical_pose(p), shape))


def robot_keypoints(tree: KinematicTree, q) -> DiffArray:
    return keypoint_positions(tree, q)


def loss_dist(tree: KinematicTree, shape: ShapeParams, regressor: Regressor, p) -> DiffArray:
    p, _ = _batched(p)
    q = regressor(p)
    diff = robot_keypoints(tree, q) - human_targets(tree, shape, p.value)
    return _frame_norm(diff, tree.keypoint_weights[:, None])


def limit_violation(tree: KinematicTree, q) -> DiffArray:
    q = as_diff(q)
    return ops.relu(tree.lower - q) + ops.relu(q - tree.upper)


def loss_limit(tree: KinematicTree, q) -> DiffArray:
    q = as_diff(q)
    if q.ndim == 1:
        q = ops.reshape(q, (1, -1))
    return _frame_norm(limit_violation(tree, q))


def sample_disturbance(rng: np.random.Generator, shape, sigma: float = 0.01) -> np.ndarray:
    """Zero-mean Gaussian angle-axis noise with std ``sigma * 2 pi``."""
    return rng.normal(0.0, sigma * 2.0 * np.pi, size=shape)


def loss_disturb(
    tree: KinematicTree,
    regressor: Regressor,
    p,
    noise,
    keypoints: Optional[Callable[[DiffArray], DiffArray]] = None,
) -> DiffArray:
    """Per-frame ratio ||K(f(p)) - K(f(p + dp))|| / ||dp||, averaged over frames.

    ``keypoints`` defaults to the robot's keypoint FK.
    """
    p, _ = _batched(p)
    noise = np.asarray(noise, dtype=np.float64).reshape(p.shape)
    scale = np.linalg.norm(noise.reshape(p.shape[0], -1), axis=1)
    if np.any(scale <= 0):
        raise ContractViolation("disturbance must have non-zero norm in every frame")
    keypoints = keypoints or (lambda q: robot_keypoints(tree, q))
    clean = keypoints(regressor(p))
    perturbed = keypoints(regressor(p + noise))
    diff = ops.reshape(clean - perturbed, (p.shape[0], -1))
    per_frame = ops.sqrt(ops.sum(ops.square(diff), axis=1)) / scale
    return ops.mean(per_frame)


def loss_sym(tree: KinematicTree, regressor: Regressor, p, mapping: Optional[SymmetryMap] = None) -> DiffArray:
    """|| mirror(K(f(p))) - K(f(mirror(p))) || averaged over frames."""
    mapping = mapping or SymmetryMap.from_tree(tree)
    p, _ = _batched(p)
    direct = mapping.mirror_keypoints(as_diff(robot_keypoints(tree, regressor(p))))
    swapped = robot_keypoints(tree, regressor(mirror_pose(p)))
    return _frame_norm(direct - swapped)


def single_dof_entries(
    tree: KinematicTree, joints: Optional[Iterable[str]] = None
) -> List[Tuple[int, int, int, float]]:
    """(robot index, human index, axis, sign) for the supervised joints.

    Defaults to every correspondence flagged ``single_dof``.
    """
    table = {c.robot_joint: c for c in tree.correspondence}
    if joints is None:
        names = [c.robot_joint for c in tree.correspondence if c.single_dof]
    else:
        names = list(joints)
    out = []
    for name in names:
        if name not in table or name not in tree.joint_names:
            raise ConfigError(f"joint {name!r} has no human correspondence", field="ik.single_dof_joints")
        c = table[name]
        out.append((tree.joint_index(name), JOINT_INDEX[c.human_joint], c.axis, c.sign))
    return out


def loss_single_dof(tree: KinematicTree, q, p, joints: Optional[Iterable[str]] = None) -> DiffArray:
    """L2 gap between designated robot joints and their human angle components."""
    entries = single_dof_entries(tree, joints)
    q = as_diff(q)
    if q.ndim == 1:
        q = ops.reshape(q, (1, -1))
    p = np.asarray(p.value if isinstance(p, DiffArray) else p, dtype=np.float64).reshape(q.shape[0], -1, 3)
    if not entries:
        return as_diff(0.0) * q.sum()
    robot_idx = [e[0] for e in entries]
    target = np.stack([e[3] * p[:, e[1], e[2]] for e in entries], axis=1)
    return _frame_norm(q[:, robot_idx] - target)


def total_loss(
    tree: KinematicTree,
    shape: ShapeParams,
    regressor: Regressor,
    p,
    weights: Optional[IkLossWeights] = None,
    noise=None,
    mapping: Optional[SymmetryMap] = None,
    disturb_weight: Optional[float] = None,
    single_dof_joints: Optional[Iterable[str]] = None,
) -> Tuple[DiffArray, Dict[str, float]]:
    """Weighted sum of the five terms; returns the total and each unweighted term.

    Terms with zero weight are skipped. The disturbance term also needs ``noise``.
    """
    weights = weights or IkLossWeights()
    lam_disturb = weights.disturb_start if disturb_weight is None else disturb_weight
    p, _ = _batched(p)
    q = regressor(p)
    components: Dict[str, float] = {}
    total = as_diff(0.0)
    if weights.dist > 0:
        diff = robot_keypoints(tree, q) - human_targets(tree, shape, p.value)
        term = _frame_norm(diff, tree.keypoint_weights[:, None])
        components["dist"] = term.item()
        total = total + weights.dist * term
    if weights.limit > 0:
        term = loss_limit(tree, q)
        components["limit"] = term.item()
        total = total + weights.limit * term
    if lam_disturb > 0 and noise is not None:
        term = loss_disturb(tree, regressor, p, noise)
        components["disturb"] = term.item()
        total = total + lam_disturb * term
    if weights.sym > 0:
        term = loss_sym(tree, regressor, p, mapping)
        components["sym"] = term.item()
        total = total + weights.sym * term
    if weights.dof > 0:
        term = loss_single_dof(tree, q, p, single_dof_joints)
        components["dof"] = term.item()
        total = total + weights.dof * term
    return total, components
