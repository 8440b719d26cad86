"""
Pipeline configuration.

``PipelineConfig`` composes the per-module configs. ``load_config`` layers,
in order: the packaged ``default.yaml``, a named profile, the user's YAML or
JSON file, the two environment overrides and finally dotted ``--set``
overrides. Validation errors come back as ``ConfigError`` naming the field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator

from humimic import __version__
from humimic.env.config import EnvConfig
from humimic.env.motions import MotionGeneratorConfig, MotionKind
from humimic.evaluation import EvalConfig
from humimic.exceptions import ConfigError
from humimic.learn.config import Stage1Config, Stage2Config
from humimic.policy.spec import PolicyConfig
from humimic.postprocess.pipeline import PostprocessConfig
from humimic.refbuffer.buffer import RefBufferConfig
from humimic.retarget.training import IkTrainingConfig
from humimic.rewards.imitation import RewardConfig
from humimic.shapefit.fitting import ShapeFitConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent / "data" / "config" / "default.yaml"
ENV_OVERRIDES = {"HUMIMIC_OUTPUT_DIR": "paths.output_dir", "HUMIMIC_NUM_THREADS": "runtime.num_threads"}
# dict-valued sections where --set may introduce new keys
OPEN_SECTIONS = ("rewards.terms", "motions.clips")


class PathsConfig(BaseModel):
    robot: Optional[str] = Field(None, description="Robot model (URDF); defaults to the bundled planar biped")
    keypoint_map: Optional[str] = Field(None, description="Keypoint map JSON; defaults to the bundled one")
    pose_pairs: Optional[str] = Field(None, description="Pose-pair JSON for fit-shape")
    output_dir: str = Field("runs", description="Root of every artifact the pipeline writes")

    @model_validator(mode="after")
    def _inputs_exist(self):
        for name in ("robot", "keypoint_map", "pose_pairs"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ValueError(f"{name} path does not exist: {value}")
        if self.keypoint_map is not None and self.robot is None:
            raise ValueError("a keypoint map needs an explicit robot model")
        return self


class RuntimeConfig(BaseModel):
    num_threads: int = Field(1, ge=1, description="Worker threads for IK loss partitioning and env stepping")
    num_envs: int = Field(8, ge=1, description="Parallel training environments")


class DatasetConfig(BaseModel):
    buffer: RefBufferConfig = Field(default_factory=RefBufferConfig)
    verify: bool = Field(True, description="Check array checksums when loading a dataset")


def _default_clips() -> Dict[str, MotionGeneratorConfig]:
    return {
        "walk": MotionGeneratorConfig(kind=MotionKind.WALK, speed=0.6),
        "walk_slow": MotionGeneratorConfig(kind=MotionKind.WALK, speed=0.4, period=1.1),
        "squat": MotionGeneratorConfig(kind=MotionKind.SQUAT, period=2.0),
    }


class MotionsConfig(BaseModel):
    clips: Dict[str, MotionGeneratorConfig] = Field(default_factory=_default_clips)
    holdout: List[str] = Field(["walk_slow"], description="Clips kept out of training for eval")

    @model_validator(mode="after")
    def _holdout_known(self):
        unknown = [name for name in self.holdout if name not in self.clips]
        if unknown:
            raise ValueError(f"holdout names unknown clips {unknown}")
        if self.clips and set(self.holdout) == set(self.clips):
            raise ValueError("every clip is held out; nothing left to train on")
        return self

    @property
    def training(self) -> List[str]:
        return [name for name in self.clips if name not in self.holdout]


class PipelineConfig(BaseModel):
    seed: int = Field(0, ge=0, description="Root seed of every named random stream")
    paths: PathsConfig = Field(default_factory=PathsConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    shape: ShapeFitConfig = Field(default_factory=ShapeFitConfig)
    ik: IkTrainingConfig = Field(default_factory=IkTrainingConfig)
    postprocess: PostprocessConfig = Field(default_factory=PostprocessConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    motions: MotionsConfig = Field(default_factory=MotionsConfig)
    env: EnvConfig = Field(default_factory=EnvConfig)
    rewards: RewardConfig = Field(default_factory=RewardConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    stage1: Stage1Config = Field(default_factory=Stage1Config)
    stage2: Stage2Config = Field(default_factory=Stage2Config)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _rates_agree(self):
        if abs(self.postprocess.filter.target_fps * self.env.dt - 1.0) > 1e-9:
            raise ValueError("postprocess.filter.target_fps must equal 1 / env.dt")
        return self

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)


PROFILES: Dict[str, Dict[str, Any]] = {
    "default": {},
    "smoke": {
        "runtime": {"num_envs": 2},
        "shape": {"iterations": 150, "log_every": 50},
        "ik": {
            "epochs": 2,
            "batch_size": 32,
            "model": {"d_model": 16, "layers": 1, "heads": 2},
            "corpus": {"num_sequences": 2, "frames": 60, "stride": 5},
        },
        "motions": {"clips": {"walk": {"duration_s": 2.0}, "walk_slow": {"duration_s": 2.0},
                              "squat": {"duration_s": 2.0}}},
        "env": {"max_episode_s": 1.0},
        "policy": {"transformer": {"d_model": 16, "layers": 1, "heads": 2}, "obs_tokens": 2, "ref_tokens": 2},
        "stage1": {"iterations": 2, "ppo": {"num_envs": 2, "steps_per_env": 8, "epochs": 1, "minibatches": 1}},
        "stage2": {"iterations": 2, "ppo": {"num_envs": 2, "steps_per_env": 8, "epochs": 1, "minibatches": 1},
                   "rho": {"iterations": 2}},
        "eval": {"max_steps": 20, "command_episodes": 1},
    },
    "acceptance": {
        "runtime": {"num_envs": 16},
        "ik": {"epochs": 60},
        "stage1": {"iterations": 300, "ppo": {"num_envs": 16, "steps_per_env": 32}},
        "stage2": {"iterations": 400, "ppo": {"num_envs": 16, "steps_per_env": 32}, "rho": {"iterations": 300}},
        "eval": {"min_joint_index": 0.5, "min_survival": 0.9, "max_command_error": 0.3},
    },
}


def get_profile(name: str = "default") -> Dict[str, Any]:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}", field="profile")
    return copy.deepcopy(PROFILES[name])


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values in ``update`` win, nested dicts are merged."""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}", field="config")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse {path.name}: {e}", field="config") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name} must hold a mapping at the top level", field="config")
    return data


def _lookup(data: Mapping[str, Any], dotted: str) -> bool:
    node: Any = data
    for part in dotted.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return False
        node = node[part]
    return True


def apply_override(data: Dict[str, Any], assignment: str, reference: Optional[Mapping[str, Any]] = None) -> None:
    """Apply ``a.b.c=value`` in place; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value", field="set")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    parts = key.split(".")
    if not key or any(not p for p in parts):
        raise ConfigError(f"bad override key {key!r}", field="set")
    parent = ".".join(parts[:-1])
    if reference is not None and not _lookup(reference, key) and parent not in OPEN_SECTIONS \
            and not any(parent.startswith(f"{s}.") for s in OPEN_SECTIONS):
        raise ConfigError("no such setting", field=key)
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None


def validate_config(data: Mapping[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(first["msg"], field=field) from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    profile: str = "default",
    overrides: Sequence[str] = (),
    use_env: bool = True,
) -> PipelineConfig:
    data = read_config_file(DEFAULT_CONFIG)
    data = deep_merge(data, get_profile(profile))
    if path is not None:
        data = deep_merge(data, read_config_file(path))
    # full schema with defaults, so --set can tell typos from real keys
    reference = PipelineConfig.model_construct().model_dump(mode="json")
    reference = deep_merge(reference, data)
    if use_env:
        load_dotenv()
        for variable, dotted in ENV_OVERRIDES.items():
            value = os.environ.get(variable)
            if value:
                apply_override(data, f"{dotted}={value}")
                logger.debug(f"{variable} overrides {dotted}")
    for assignment in overrides:
        apply_override(data, assignment, reference)
    config = validate_config(data)
    logger.debug(f"config {config_hash(config)[:12]} (profile {profile})")
    return config


def config_hash(config: BaseModel) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def artifact_meta(config: PipelineConfig, **extra: Any) -> Dict[str, Any]:
    """The block every artifact embeds."""
    return {"config_hash": config_hash(config), "seed": config.seed, "version": __version__, **extra}


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
