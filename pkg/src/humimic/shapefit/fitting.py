"""
Shape calibration: fit the skeleton's scale, bone lengths and offsets so that
human keypoints land on the robot's keypoints over a few paired poses.

The bone multipliers are parameterised as ``exp(b - mean(b))`` (unit geometric
mean) so that they cannot trade off against the global scale.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from humimic.exceptions import ConfigError, ContractViolation, FitFailure
from humimic.kinematics.fk import keypoint_positions
from humimic.kinematics.tree import KinematicTree
from humimic.numerics import ops
from humimic.numerics.nn import Parameter
from humimic.numerics.optim import Algorithm, Optimizer, OptimizerConfig
from humimic.numerics.tape import Tape
from humimic.shapefit.skeleton import (
    NUM_BONES,
    NUM_JOINTS,
    ShapeParams,
    human_fk_raw,
    pose_from_angles,
    selection_matrix,
    validate_pose,
)

logger = logging.getLogger(__name__)


@dataclass
class PosePair:
    name: str
    human: np.ndarray
    robot: np.ndarray
    base_rotation: Optional[np.ndarray] = None


class ShapeFitConfig(BaseModel):
    lr: float = Field(1e-2, gt=0, description="Adam learning rate")
    iterations: int = Field(2000, ge=1, description="Optimizer iterations")
    final_lr_fraction: float = Field(0.01, gt=0, le=1, description="lr decays geometrically to this fraction")
    eps: float = Field(1e-6, gt=0, description="Smoothing inside each keypoint distance, m")
    delta_weight: float = Field(1e-4, ge=0, description="L2 penalty on keypoint offsets; 0 fits the plain objective")
    bone_weight: float = Field(1e-3, ge=0, description="L2 penalty on log bone multipliers; 0 fits the plain objective")
    log_every: int = Field(100, ge=1)


@dataclass
class FitResult:
    shape: ShapeParams
    residual_max: float
    residual_mean: float
    per_keypoint: Dict[str, Tuple[float, float]]
    history: List[Tuple[int, float]] = field(default_factory=list)

    def report(self) -> Dict[str, object]:
        return {
            "residual_max_m": self.residual_max,
            "residual_mean_m": self.residual_mean,
            "per_keypoint": {k: {"max_m": v[0], "mean_m": v[1]} for k, v in self.per_keypoint.items()},
            "history": [{"iteration": i, "objective": o} for i, o in self.history],
        }


# --- pose pair files --------------------------------------------------------


class _PairEntry(BaseModel):
    name: str = "pair"
    human: Dict[str, List[float]] = Field(default_factory=dict)
    robot: Dict[str, float] = Field(default_factory=dict)


class _PairFile(BaseModel):
    pairs: List[_PairEntry]


def pose_pair(tree: KinematicTree, name: str, human: Dict, robot: Dict) -> PosePair:
    return PosePair(name, pose_from_angles(human), tree.vector(robot))


def load_pose_pairs(path: Union[str, Path], tree: KinematicTree) -> List[PosePair]:
    try:
        model = _PairFile.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (ValidationError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc), field=str(path)) from exc
    return [pose_pair(tree, e.name, e.human, e.robot) for e in model.pairs]


def default_pose_pairs(tree: KinematicTree) -> List[PosePair]:
    """Neutral stance, plus the T-pose when the keypoint map defines one."""
    pairs = [PosePair("rest", np.zeros((NUM_JOINTS, 3)), np.zeros(tree.dof))]
    if tree.t_pose:
        pairs.append(pose_pair(tree, "t_pose", tree.t_pose.get("human", {}), tree.t_pose.get("robot", {})))
    return pairs


def _check_pairs(tree: KinematicTree, pairs: Sequence[PosePair]) -> None:
    if not pairs:
        raise ContractViolation("the paired pose set is empty")
    for pair in pairs:
        validate_pose(pair.human)
        q = np.asarray(pair.robot)
        if q.shape != (tree.dof,):
            raise ContractViolation(f"pair {pair.name!r}: robot vector has shape {q.shape}")
        if np.any(q < tree.lower - 1e-9) or np.any(q > tree.upper + 1e-9):
            raise ConfigError(f"pair {pair.name!r} violates joint limits", field="pairs")


# --- fitting ----------------------------------------------------------------


def _robot_targets(tree: KinematicTree, pairs: Sequence[PosePair]) -> np.ndarray:
    out = []
    for pair in pairs:
        kp = keypoint_positions(tree, pair.robot, base_rotation=pair.base_rotation)
        out.append(kp.value)
    return np.stack(out)


def keypoint_residuals(tree: KinematicTree, pairs: Sequence[PosePair], shape: ShapeParams) -> np.ndarray:
    """(P, K) distances between scaled human keypoints and robot keypoints."""
    S = selection_matrix(tree.keypoint_names)
    human = np.stack([p.human for p in pairs])
    kp = S @ human_fk_raw(human, shape.alpha, shape.beta, shape.delta).value
    return np.linalg.norm(kp - _robot_targets(tree, pairs), axis=-1)


def fit_objective(tree: KinematicTree, pairs: Sequence[PosePair], shape: ShapeParams) -> float:
    """Keypoint-weighted sum over the pairs of the human-robot keypoint distances."""
    return float(np.sum(keypoint_residuals(tree, pairs, shape) * tree.keypoint_weights))


def initial_scale(tree: KinematicTree, pairs: Sequence[PosePair]) -> float:
    """Least-squares scale between unscaled human and robot keypoints about the root."""
    S = selection_matrix(tree.keypoint_names)
    human = S @ human_fk_raw(np.stack([p.human for p in pairs]), 1.0, np.ones(NUM_BONES),
                             np.zeros((NUM_JOINTS, 3))).value
    h = np.linalg.norm(human, axis=-1)
    r = np.linalg.norm(_robot_targets(tree, pairs), axis=-1)
    denom = float(np.sum(h * h))
    return float(np.sum(h * r) / denom) if denom > 0 else 1.0


def fit_shape(
    tree: KinematicTree,
    pairs: Sequence[PosePair],
    init: Optional[ShapeParams] = None,
    config: Optional[ShapeFitConfig] = None,
    opt: Optional[OptimizerConfig] = None,
) -> FitResult:
    """Minimise the keypoint-weighted sum of distances over the pair set.

    The distances are smoothed by ``config.eps`` so the gradient is defined at a
    zero residual. The two small priors on offsets and bone multipliers pick one
    solution when the pairs leave the offsets underdetermined; they do not involve
    the scale.
    """
    config = config or ShapeFitConfig()
    _check_pairs(tree, pairs)
    if not tree.keypoints:
        raise ContractViolation("robot has no keypoint map")
    S = selection_matrix(tree.keypoint_names)
    weights = tree.keypoint_weights
    targets = _robot_targets(tree, pairs)
    human = np.stack([p.human for p in pairs])

    init = init or ShapeParams(alpha=initial_scale(tree, pairs))
    log_b = np.log(init.beta)
    log_alpha = Parameter(np.log(init.alpha), "log_alpha")
    bones = Parameter(log_b - log_b.mean(), "bones")
    delta = Parameter(init.delta, "delta")
    optimizer = Optimizer(
        [log_alpha, bones, delta],
        opt or OptimizerConfig(lr=config.lr, algorithm=Algorithm.ADAM),
    )
    base_lr = optimizer.lr
    decay = config.final_lr_fraction ** (1.0 / max(config.iterations, 1))

    def objective():
        alpha = ops.exp(log_alpha.data())
        b = bones.data()
        beta = ops.exp(b - ops.mean(b))
        d = delta.data()
        kp = ops.matmul(S, human_fk_raw(human, alpha, beta, d))
        sq = ops.sum(ops.square(kp - targets), axis=-1)
        fit = ops.sum(ops.sqrt(sq + config.eps ** 2) * weights)
        centred = b - ops.mean(b)
        prior = config.delta_weight * ops.sum(ops.square(d)) + config.bone_weight * ops.sum(ops.square(centred))
        return fit + prior

    best = (np.inf, log_alpha.value.copy(), bones.value.copy(), delta.value.copy())
    history: List[Tuple[int, float]] = []
    for it in range(config.iterations + 1):
        with Tape() as tape:
            loss = objective()
            value = loss.item()
            if not np.isfinite(value):
                raise FitFailure("shape fit loss is not finite", it)
            if value < best[0]:
                best = (value, log_alpha.value.copy(), bones.value.copy(), delta.value.copy())
            if it % config.log_every == 0 or it == config.iterations:
                if history and best[0] >= history[-1][1]:
                    logger.warning(f"shape fit objective stalled at {best[0]:.3e} since iteration {history[-1][0]}")
                history.append((it, best[0]))
                logger.info(f"shape fit iteration {it}: objective {best[0]:.3e}")
            if it == config.iterations:
                break
            grads = tape.backward(loss)
        optimizer.step(grads)
        optimizer.set_lr(base_lr * decay ** (it + 1))

    _, la, b, d = best
    shape = ShapeParams(alpha=float(np.exp(la)), beta=np.exp(b - b.mean()), delta=d)
    residuals = keypoint_residuals(tree, pairs, shape)
    per_keypoint = {
        name: (float(residuals[:, k].max()), float(residuals[:, k].mean()))
        for k, name in enumerate(tree.keypoint_names)
    }
    result = FitResult(
        shape=shape,
        residual_max=float(residuals.max()),
        residual_mean=float(residuals.mean()),
        per_keypoint=per_keypoint,
        history=history,
    )
    logger.info(
        f"shape fit done: alpha={shape.alpha:.4f} residual mean={result.residual_mean:.2e} m "
        f"max={result.residual_max:.2e} m"
    )
    return result


__all__ = [
    "FitResult",
    "PosePair",
    "ShapeFitConfig",
    "default_pose_pairs",
    "fit_objective",
    "fit_shape",
    "keypoint_residuals",
    "load_pose_pairs",
    "pose_pair",
    "initial_scale",
]
