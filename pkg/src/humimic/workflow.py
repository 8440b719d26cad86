"""
Pipeline stages as plain functions.

Each stage reads its inputs from and writes its artifacts to a ``Workspace``
under ``paths.output_dir``; every artifact carries ``artifact_meta``. The CLI
is a thin layer over these functions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from humimic import io
from humimic.config import PipelineConfig, artifact_meta
from humimic.env.biped import BipedEnv, VecEnv, agent_term_dims, make_envs, make_specs
from humimic.env.config import EnvMode
from humimic.env.motions import HumanClip, generate_motion
from humimic.evaluation import ReplayPolicy, metrics_from_dump, rollout_dump
from humimic.exceptions import ConfigError, DatasetError
from humimic.kinematics.tree import KinematicTree, bundled_robot, load_robot
from humimic.learn.trainer import stage1_train, stage2_train
from humimic.policy.checkpoint import load_policy, save_policy
from humimic.policy.spec import ObservationSpec
from humimic.policy.transformer import MMTransformerPolicy
from humimic.postprocess.dataset import Manifest, build_dataset, load_dataset, load_motion, save_motion
from humimic.postprocess.pipeline import process_motion
from humimic.refbuffer.buffer import RefDataBuffer
from humimic.retarget.corpus import robot_from_human, split_dataset, synthetic_corpus
from humimic.retarget.regressor import IkRegressor
from humimic.retarget.training import retarget_sequence, train_regressor
from humimic.rewards.imitation import ImitationReward
from humimic.seeding import named_rng
from humimic.shapefit.fitting import FitResult, default_pose_pairs, fit_shape, load_pose_pairs
from humimic.shapefit.skeleton import ShapeParams

logger = logging.getLogger(__name__)

Progress = Optional[Callable[[int, Dict[str, float]], None]]


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def shape(self) -> Path:
        return self.root / "shape" / "shape.json"

    @property
    def ik(self) -> Path:
        return self.root / "ik" / "ik.hmck"

    @property
    def ik_curves(self) -> Path:
        return self.root / "ik" / "curves.csv"

    def human(self, name: str) -> Path:
        return self.root / "motions" / "human" / f"{name}.npz"

    def raw(self, name: str) -> Path:
        return self.root / "motions" / "raw" / f"{name}.npz"

    def raw_report(self, name: str) -> Path:
        return self.root / "motions" / "raw" / f"{name}_keypoint_error.csv"

    def processed(self, name: str) -> Path:
        return self.root / "motions" / "processed" / f"{name}.npz"

    def dataset(self, holdout: bool = False) -> Path:
        return self.root / ("dataset_holdout" if holdout else "dataset")

    def policy(self, stage: str) -> Path:
        return self.root / "policy" / f"{stage}.hmck"

    def trace(self, stage: str) -> Path:
        return self.root / "policy" / f"{stage}_trace.csv"

    @property
    def eval_dir(self) -> Path:
        return self.root / "eval"


def workspace(config: PipelineConfig) -> Workspace:
    return Workspace(config.output_dir)


def resolve_robot(config: PipelineConfig) -> KinematicTree:
    paths = config.paths
    if paths.robot is None:
        return bundled_robot("planar_biped")
    robot = Path(paths.robot)
    keymap = paths.keypoint_map
    if keymap is None:
        sibling = robot.with_name(f"{robot.stem}_keypoints.json")
        keymap = str(sibling) if sibling.exists() else None
    return load_robot(robot, keymap)


def robot_label(config: PipelineConfig) -> str:
    return Path(config.paths.robot).stem if config.paths.robot else "planar_biped"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DatasetError(f"{what} not found; run the earlier pipeline step first", str(path))
    return path


# --- retargeting ----------------------------------------------------------------


def run_fit_shape(config: PipelineConfig, tree: KinematicTree) -> FitResult:
    ws = workspace(config)
    if config.paths.pose_pairs:
        pairs = load_pose_pairs(config.paths.pose_pairs, tree)
    else:
        pairs = default_pose_pairs(tree)
    result = fit_shape(tree, pairs, config=config.shape)
    io.write_json(ws.shape, {"shape": result.shape.to_dict(), "report": result.report()},
                  artifact_meta(config, robot=robot_label(config), pairs=[p.name for p in pairs]))
    logger.info(f"shape fit: alpha {result.shape.alpha:.4f}, residual max {result.residual_max:.2e} m")
    return result


def load_shape(config: PipelineConfig) -> ShapeParams:
    data = io.read_json(_require(workspace(config).shape, "shape fit"))
    return ShapeParams.from_dict(data["shape"])


def run_train_ik(config: PipelineConfig, tree: KinematicTree, progress: Progress = None):
    ws = workspace(config)
    shape = load_shape(config)
    corpus = synthetic_corpus(tree, config.ik.corpus, named_rng(config.seed, "ik.corpus"))
    train, val = split_dataset(corpus, named_rng(config.seed, "ik.split"), config.ik.corpus.train_fraction)
    model, curves = train_regressor(train, val, tree, shape, config.ik, config.seed,
                                    config.runtime.num_threads, progress)
    meta = artifact_meta(config, robot=robot_label(config))
    model.save(ws.ik, meta, robot=robot_label(config))
    io.write_csv(ws.ik_curves, curves, meta)
    return model, curves


def run_generate_motions(config: PipelineConfig, names: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    ws = workspace(config)
    out = {}
    for name in names or list(config.motions.clips):
        if name not in config.motions.clips:
            raise ConfigError(f"no clip named {name!r}", field="motions.clips")
        clip = generate_motion(config.motions.clips[name], name)
        clip.save(ws.human(name), artifact_meta(config))
        out[name] = ws.human(name)
    return out


def run_retarget(config: PipelineConfig, tree: KinematicTree, names: Optional[Sequence[str]] = None,
                 model=None) -> Dict[str, Path]:
    """Human clips to raw robot motions, with a keypoint error report per clip.

    The report compares against the robot vectors the correspondence table
    assigns to each human frame.
    """
    ws = workspace(config)
    shape = load_shape(config)
    model = model or IkRegressor.load(_require(ws.ik, "IK checkpoint"))
    out = {}
    for name in names or list(config.motions.clips):
        clip = HumanClip.load(_require(ws.human(name), f"human clip {name!r}"))
        source = robot_from_human(tree, clip.poses)
        seq, report = retarget_sequence(model, tree, clip.poses, clip.fps, shape, clip.root_translation,
                                        name, source)
        meta = artifact_meta(config, source=str(ws.human(name)))
        save_motion(ws.raw(name), seq, meta)
        if report is not None:
            io.write_csv(ws.raw_report(name), report, meta)
            logger.info(f"{name}: mean keypoint error {report['keypoint_error_mean'].mean():.4f} m")
        out[name] = ws.raw(name)
    return out


# --- datasets --------------------------------------------------------------------


def run_postprocess(config: PipelineConfig, tree: KinematicTree,
                    names: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    ws = workspace(config)
    out = {}
    for name in names or list(config.motions.clips):
        seq = load_motion(_require(ws.raw(name), f"raw motion {name!r}"))
        processed = process_motion(seq, tree, config.postprocess)
        save_motion(ws.processed(name), processed, artifact_meta(config, source=str(ws.raw(name))))
        out[name] = ws.processed(name)
    return out


def run_build_dataset(config: PipelineConfig, holdout: bool = False) -> Manifest:
    ws = workspace(config)
    names = config.motions.holdout if holdout else config.motions.training
    if not names:
        raise ConfigError("no clips selected for this split", field="motions.holdout")
    sequences = [load_motion(_require(ws.processed(n), f"processed motion {n!r}")) for n in names]
    return build_dataset(sequences, ws.dataset(holdout), artifact_meta(config, split="holdout" if holdout else "train"))


def load_buffer(config: PipelineConfig, directory: Path, num_envs: int) -> RefDataBuffer:
    sequences = load_dataset(_require(Path(directory), "dataset"), verify=config.dataset.verify)
    return RefDataBuffer(sequences, num_envs, config.dataset.buffer)


# --- training ----------------------------------------------------------------------


def training_envs(config: PipelineConfig, tree: KinematicTree, buffer: Optional[RefDataBuffer],
                  num_envs: int) -> VecEnv:
    obs_spec, ref_spec = make_specs(tree, config.env, buffer, config.policy.mode, config.policy.obs_tokens,
                                    config.policy.ref_tokens, config.policy.history)
    return make_envs(tree, config.env, num_envs, config.seed, buffer, ImitationReward(config.rewards),
                     obs_spec, ref_spec, config.runtime.num_threads)


def new_policy(config: PipelineConfig, venv: VecEnv) -> MMTransformerPolicy:
    return MMTransformerPolicy(venv.obs_spec, venv.action_dim, config.policy, venv.ref_spec,
                               named_rng(config.seed, "policy.init"))


def run_train(config: PipelineConfig, tree: KinematicTree, stage: int, progress: Progress = None) -> Path:
    ws = workspace(config)
    if stage == 1:
        ppo = config.stage1.ppo
        buffer = load_buffer(config, ws.dataset(), ppo.num_envs)
        venv = training_envs(config, tree, buffer, ppo.num_envs)
        policy = new_policy(config, venv)
        trace = stage1_train(venv, policy, config.stage1, config.seed, progress)
        meta = artifact_meta(config, stage=1)
        save_policy(ws.policy("stage1"), policy, meta)
        io.write_csv(ws.trace("stage1"), trace, meta)
        return ws.policy("stage1")
    if stage == 2:
        ppo = config.stage2.ppo
        dagger = load_policy(_require(ws.policy("stage1"), "stage-1 policy"))
        buffer = load_buffer(config, ws.dataset(), ppo.num_envs)
        check_compatible(dagger, tree, config, buffer)
        venv = training_envs(config, tree, buffer, ppo.num_envs)
        result = stage2_train(venv, dagger, config.stage2, config.seed, progress)
        meta = artifact_meta(config, stage=2, teacher_base_checksum=result.teacher_base_checksum)
        save_policy(ws.policy("stage2"), result.student, meta)
        if result.teacher is not None:
            save_policy(ws.policy("teacher"), result.teacher, meta)
        io.write_csv(ws.trace("stage2"), result.trace, meta)
        return ws.policy("stage2")
    raise ConfigError(f"stage must be 1 or 2, got {stage}", field="stage")


# --- evaluation ----------------------------------------------------------------------


def _check_spec(spec: Optional[ObservationSpec], dims: Dict[str, int], what: str) -> None:
    if spec is None:
        return
    for term in spec.terms:
        if dims.get(term.name) != term.dim:
            raise ConfigError(f"checkpoint {what} term {term.name!r} has {term.dim} values, "
                              f"the run provides {dims.get(term.name)}", field="eval.checkpoint")


def check_compatible(policy: MMTransformerPolicy, tree: KinematicTree, config: PipelineConfig,
                     buffer: Optional[RefDataBuffer]) -> None:
    """Raise ``ConfigError`` when a checkpoint cannot run on this robot and dataset."""
    if policy.action_dim != tree.dof:
        raise ConfigError(f"checkpoint acts on {policy.action_dim} joints, robot has {tree.dof}",
                          field="eval.checkpoint")
    _check_spec(policy.obs_spec, agent_term_dims(tree, config.env), "observation")
    if buffer is not None:
        _check_spec(policy.ref_spec, buffer.term_dims, "reference")


def eval_env(config: PipelineConfig, tree: KinematicTree, buffer: Optional[RefDataBuffer],
             obs_spec: Optional[ObservationSpec], ref_spec: Optional[ObservationSpec],
             replay: bool = False) -> BipedEnv:
    env_config = config.env
    if replay:
        env_config = env_config.model_copy(
            update={"mode": EnvMode.SIMPLIFIED,
                    "actuator": env_config.actuator.model_copy(update={"ideal": True})}
        )
    return BipedEnv(tree, env_config, buffer, 0, ImitationReward(config.rewards),
                    named_rng(config.seed, "eval.env"), obs_spec, ref_spec)


def run_rollout_dump(config: PipelineConfig, tree: KinematicTree, checkpoint: Optional[Path] = None,
                     dataset: Optional[Path] = None, replay: bool = False) -> pd.DataFrame:
    """Rollout dump of a checkpoint (or of the reference replay) on a dataset."""
    ws = workspace(config)
    directory = Path(dataset) if dataset is not None else ws.dataset(holdout=True)
    buffer = load_buffer(config, directory, 1)
    if replay:
        if config.eval.masked:
            raise ConfigError("replay needs visible references", field="eval.masked")
        env = eval_env(config, tree, buffer, None, make_specs(tree, config.env, buffer)[1], replay=True)
        policy = ReplayPolicy(env.ref_spec, tree.dof, env.nominal, env.config.actuator.action_scale)
    else:
        policy = load_policy(_require(Path(checkpoint or ws.policy("stage2")), "policy checkpoint"))
        check_compatible(policy, tree, config, buffer)
        env = eval_env(config, tree, buffer, policy.obs_spec, policy.ref_spec)
    return rollout_dump(env, policy, config.eval)


def run_eval(config: PipelineConfig, tree: KinematicTree, checkpoint: Optional[Path] = None,
             dataset: Optional[Path] = None, replay: bool = False) -> pd.DataFrame:
    ws = workspace(config)
    dump = run_rollout_dump(config, tree, checkpoint, dataset, replay)
    metrics = metrics_from_dump(dump, config.eval.sigma, config.eval.settle_steps)
    meta = artifact_meta(config, checkpoint=str(checkpoint) if checkpoint else None, replay=replay)
    io.write_csv(ws.eval_dir / "rollout.csv", dump, meta)
    io.write_csv(ws.eval_dir / "metrics.csv", metrics, meta)
    return metrics


def run_smoke(config: PipelineConfig, progress: Progress = None) -> List[Path]:
    """Every stage on the bundled fixtures; returns one path per artifact kind."""
    tree = resolve_robot(config)
    ws = workspace(config)
    run_fit_shape(config, tree)
    run_train_ik(config, tree, progress)
    run_generate_motions(config)
    run_retarget(config, tree)
    run_postprocess(config, tree)
    run_build_dataset(config)
    run_build_dataset(config, holdout=True)
    run_train(config, tree, 1, progress)
    run_eval(config, tree, ws.policy("stage1"))
    first = config.motions.training[0]
    return [ws.shape, ws.ik, ws.raw(first), ws.processed(first), ws.dataset(), ws.policy("stage1"),
            ws.eval_dir / "metrics.csv"]
