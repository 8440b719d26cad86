"""Differentiable forward kinematics over a ``KinematicTree``."""

from __future__ import annotations

from typing import Dict, List

import numpy as np

from humimic.exceptions import ContractViolation
from humimic.kinematics.tree import KinematicTree
from humimic.numerics import ops
from humimic.numerics.linalg import axis_angle_matrix, rotate
from humimic.numerics.tape import DiffArray, as_diff


class FkResult:
    """World poses of every link, in the tree's link order."""

    def __init__(self, tree: KinematicTree, positions: List[DiffArray], rotations: List[DiffArray]):
        self.tree = tree
        self._positions = positions
        self._rotations = rotations
        self._index: Dict[str, int] = {name: i for i, name in enumerate(tree.link_names)}

    @property
    def positions(self) -> DiffArray:
        """(..., L, 3)"""
        return ops.stack(self._positions, axis=-2)

    @property
    def rotations(self) -> DiffArray:
        """(..., L, 3, 3)"""
        return ops.stack(self._rotations, axis=-3)

    def position(self, link: str) -> DiffArray:
        return self._positions[self._index[link]]

    def rotation(self, link: str) -> DiffArray:
        return self._rotations[self._index[link]]

    def keypoints(self) -> DiffArray:
        """(..., K, 3) positions of the tree's keypoint links."""
        if not self.tree.keypoints:
            raise ContractViolation("tree has no keypoint map")
        return ops.stack([self.position(k.link) for k in self.tree.keypoints], axis=-2)


def forward_kinematics(
    tree: KinematicTree,
    q,
    base_position=None,
    base_rotation=None,
) -> FkResult:
    """Link poses for joint vector(s) ``q`` of shape (..., dof).

    Differentiable with respect to ``q`` and the base pose.
    """
    q = as_diff(q)
    if q.ndim == 0 or q.shape[-1] != tree.dof:
        raise ContractViolation(f"joint vector has shape {q.shape}, robot has {tree.dof} dof")
    batch = q.shape[:-1]
    p_root = as_diff(np.zeros(batch + (3,)) if base_position is None else base_position)
    R_root = as_diff(np.broadcast_to(np.eye(3), batch + (3, 3)) if base_rotation is None else base_rotation)

    positions: List[DiffArray] = [p_root]
    rotations: List[DiffArray] = [R_root]
    link_slot = {tree.root: 0}
    dof_index = 0
    for joint in tree.joints:
        slot = link_slot[joint.parent]
        p_parent, R_parent = positions[slot], rotations[slot]
        p = p_parent + rotate(R_parent, np.asarray(joint.xyz))
        R = ops.matmul(R_parent, joint.origin_rotation)
        if joint.actuated:
            R = ops.matmul(R, axis_angle_matrix(joint.axis, q[..., dof_index]))
            dof_index += 1
        link_slot[joint.child] = len(positions)
        positions.append(p)
        rotations.append(R)
    return FkResult(tree, positions, rotations)


def keypoint_positions(tree: KinematicTree, q, base_position=None, base_rotation=None) -> DiffArray:
    return forward_kinematics(tree, q, base_position, base_rotation).keypoints()


def reach(tree: KinematicTree) -> float:
    """Largest root-to-keypoint distance along the chain, a size scale for error bounds."""
    depth: Dict[str, float] = {tree.root: 0.0}
    for joint in tree.joints:
        depth[joint.child] = depth[joint.parent] + float(np.linalg.norm(joint.xyz))
    links = [k.link for k in tree.keypoints] or list(depth)
    return max(depth[name] for name in links)

