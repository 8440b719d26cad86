"""
IK regressor training and sequence retargeting.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.spatial.transform import Rotation

from humimic.exceptions import ContractViolation, TrainingDivergence
from humimic.kinematics.fk import keypoint_positions, reach
from humimic.kinematics.symmetry import SymmetryMap
from humimic.kinematics.tree import KinematicTree, clamp_to_limits
from humimic.numerics.nn import Parameter
from humimic.numerics.optim import Algorithm, Optimizer, OptimizerConfig
from humimic.numerics.tape import Tape
from humimic.postprocess.sequence import MotionSequence
from humimic.retarget.corpus import IkCorpusConfig, IkDataset
from humimic.retarget.losses import IkLossWeights, human_targets, sample_disturbance, total_loss
from humimic.retarget.regressor import IkRegressor, IkRegressorConfig
from humimic.seeding import named_rng
from humimic.shapefit.skeleton import ShapeParams, validate_pose

logger = logging.getLogger(__name__)


class IkTrainingConfig(BaseModel):
    model: IkRegressorConfig = Field(default_factory=IkRegressorConfig)
    weights: IkLossWeights = Field(default_factory=IkLossWeights)
    corpus: IkCorpusConfig = Field(default_factory=IkCorpusConfig)
    epochs: int = Field(100, ge=1, description="Passes over the training split")
    lr: float = Field(1e-4, gt=0, description="Adam learning rate")
    batch_size: int = Field(64, ge=1)
    clip_norm: Optional[float] = Field(10.0, gt=0, description="Global gradient-norm clip")
    single_dof_joints: Optional[List[str]] = Field(
        None, description="Supervised single-DoF joints; defaults to the correspondence flags"
    )


def _batch_loss(tree, shape, model, poses, noise, config, lam_disturb, mapping, parameters, scale):
    with Tape() as tape:
        loss, components = total_loss(
            tree, shape, model, poses, config.weights, noise, mapping, lam_disturb, config.single_dof_joints
        )
        grads = tape.backward(loss * scale)
    return loss.item() * scale, {p: grads[p] for p in parameters}, components


def _gradients(tree, shape, model, poses, noise, config, lam_disturb, mapping, parameters, workers):
    """Loss and gradients over one minibatch, optionally split across worker threads.

    Partial results are summed in worker order so the result does not depend on
    scheduling.
    """
    n = len(poses)
    if workers <= 1 or n < 2:
        value, grads, components = _batch_loss(tree, shape, model, poses, noise, config, lam_disturb,
                                               mapping, parameters, 1.0)
        return value, grads, components
    chunks = [c for c in np.array_split(np.arange(n), min(workers, n)) if len(c)]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [
            pool.submit(_batch_loss, tree, shape, model, poses[c], noise[c], config, lam_disturb,
                        mapping, parameters, len(c) / n)
            for c in chunks
        ]
        results = [f.result() for f in futures]
    value = sum(r[0] for r in results)
    grads = {p: sum(r[1][p] for r in results) for p in parameters}
    components: Dict[str, float] = {}
    for (_, _, part), c in zip(results, chunks):
        for key, term in part.items():
            components[key] = components.get(key, 0.0) + term * len(c) / n
    return value, grads, components


def _predict(model: Callable, poses) -> np.ndarray:
    out = model(poses)
    return np.asarray(getattr(out, "value", out), dtype=np.float64)


def keypoint_errors(tree: KinematicTree, model: Callable, dataset: IkDataset) -> np.ndarray:
    """Per-frame mean keypoint distance between FK of the prediction and FK of the
    generating joint vector."""
    if dataset.joints is None:
        raise ContractViolation("dataset has no generating joint vectors")
    predicted = keypoint_positions(tree, _predict(model, dataset.poses)).value
    truth = keypoint_positions(tree, dataset.joints).value
    return np.linalg.norm(predicted - truth, axis=-1).mean(axis=-1)


def _validation_loss(tree, shape, model, dataset, config, lam_disturb, mapping, noise) -> float:
    loss, _ = total_loss(tree, shape, model, dataset.poses, config.weights, noise, mapping, lam_disturb,
                         config.single_dof_joints)
    return loss.item()


def train_regressor(
    train: IkDataset,
    val: IkDataset,
    tree: KinematicTree,
    shape: ShapeParams,
    config: Optional[IkTrainingConfig] = None,
    seed: int = 0,
    num_threads: int = 1,
    progress: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> Tuple[IkRegressor, pd.DataFrame]:
    """Adam over shuffled minibatches; returns the model and per-epoch curves."""
    config = config or IkTrainingConfig()
    if len(train) == 0:
        raise ContractViolation("the training split is empty")
    model = IkRegressor(tree.dof, config.model, named_rng(seed, "ik.init"))
    parameters: List[Parameter] = model.parameters(trainable_only=True)
    optimizer = Optimizer(parameters, OptimizerConfig(lr=config.lr, algorithm=Algorithm.ADAM,
                                                      clip_norm=config.clip_norm))
    mapping = SymmetryMap.from_tree(tree)
    shuffle_rng = named_rng(seed, "ik.shuffle")
    noise_rng = named_rng(seed, "ik.noise")
    sigma = config.weights.disturb_sigma
    val_noise = sample_disturbance(named_rng(seed, "ik.val_noise"), val.poses.shape, sigma) if len(val) else None
    robot_reach = reach(tree)

    rows = []
    for epoch in range(config.epochs):
        lam = config.weights.disturb_at(epoch, config.epochs)
        # one fresh disturbance per frame per epoch
        noise = sample_disturbance(noise_rng, train.poses.shape, sigma)
        order = shuffle_rng.permutation(len(train))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads, _ = _gradients(tree, shape, model, train.poses[idx], noise[idx], config, lam,
                                         mapping, parameters, num_threads)
            if not np.isfinite(value):
                raise TrainingDivergence("ik", epoch, "training loss is not finite")
            optimizer.step(grads)
            total += value * len(idx)
            seen += len(idx)
        row = {"epoch": epoch, "lambda_disturb": lam, "train_loss": total / seen}
        if len(val):
            row["val_loss"] = _validation_loss(tree, shape, model, val, config, lam, mapping, val_noise)
            if not np.isfinite(row["val_loss"]):
                raise TrainingDivergence("ik", epoch, "validation loss is not finite")
            if val.joints is not None:
                errors = keypoint_errors(tree, model, val)
                row["val_keypoint_error_mean"] = float(errors.mean())
                row["val_keypoint_error_median"] = float(np.median(errors))
                row["val_keypoint_error_reach"] = float(errors.mean() / robot_reach)
        rows.append(row)
        logger.info(
            f"ik epoch {epoch + 1}/{config.epochs}: train {row['train_loss']:.4f} "
            f"val {row.get('val_loss', float('nan')):.4f} lambda_disturb {lam:.1f}"
        )
        if progress is not None:
            progress(epoch, row)
    return model, pd.DataFrame(rows)


def retarget_sequence(
    model: Callable,
    tree: KinematicTree,
    poses,
    fps: float,
    shape: Optional[ShapeParams] = None,
    root_translation=None,
    name: str = "retargeted",
    source_joints=None,
) -> Tuple[MotionSequence, Optional[pd.DataFrame]]:
    """Map a human pose stream (n, 22, 3) to a raw robot motion.

    Joint outputs are clamped to the limits; the human root translation is
    scaled by ``alpha`` and the root orientation is taken from the root joint.
    When ``source_joints`` is given a per-frame keypoint error report is returned
    alongside the sequence.
    """
    poses = validate_pose(poses).reshape(-1, 22, 3)
    shape = shape or ShapeParams.identity()
    n = len(poses)
    q = clamp_to_limits(tree, _predict(model, poses).reshape(n, tree.dof))
    translation = np.zeros((n, 3)) if root_translation is None else np.asarray(root_translation, dtype=np.float64)
    orientation = Rotation.from_rotvec(poses[:, 0]).as_quat()
    seq = MotionSequence(
        fps=fps,
        joints=q,
        root_translation=shape.alpha * translation.reshape(n, 3),
        root_orientation=orientation,
        name=name,
        joint_names=tree.joint_names,
    )
    report = None
    if source_joints is not None:
        truth = keypoint_positions(tree, np.asarray(source_joints, dtype=np.float64).reshape(n, tree.dof)).value
        predicted = keypoint_positions(tree, q).value
        error = np.linalg.norm(predicted - truth, axis=-1)
        target_gap = np.linalg.norm(predicted - human_targets(tree, shape, poses).value, axis=-1)
        report = pd.DataFrame(
            {
                "frame": np.arange(n),
                "keypoint_error_mean": error.mean(axis=1),
                "keypoint_error_max": error.max(axis=1),
                "target_distance_mean": target_gap.mean(axis=1),
            }
        )
    logger.info(f"retargeted {name!r}: {n} frames")
    return seq, report
