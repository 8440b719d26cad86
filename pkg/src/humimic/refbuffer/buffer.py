"""
Reference data buffer
=====================

Holds expert sequences in memory and serves per-environment reference frames
during training:

- each env is assigned a sequence, a start frame and a world anchor at reset
- ``frame_index`` maps env step ``t`` to a sequence frame, looping through the
  cycle ``[i, j)`` when the sequence has one
- stored body-frame velocities are integrated into an absolute root pose with
  a per-env cache, so a monotone sweep over ``t`` costs O(1) per step
- past the end of a non-cyclic sequence the reference is unavailable (mask 0)
  and every consumer sees zeros
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator
from scipy.spatial.transform import Rotation

from humimic.exceptions import ConfigError, ContractViolation
from humimic.numerics.linalg import yaw_matrix
from humimic.postprocess.dataset import load_dataset
from humimic.postprocess.sequence import CHANNELS, MotionSequence, tilt_from_gravity

logger = logging.getLogger(__name__)

DEFAULT_TERMS = ("lin_vel", "ang_vel", "gravity", "height", "joints", "joint_vel", "phase")
BASE_TERMS = ("lin_vel", "ang_vel", "gravity", "height")
JOINT_TERMS = ("joints", "joint_vel")


class CommandRanges(BaseModel):
    lin_vel_x: Tuple[float, float] = Field((-1.0, 1.0), description="Forward velocity command range, m/s")
    lin_vel_y: Tuple[float, float] = Field((-1.0, 1.0), description="Lateral velocity command range, m/s")
    ang_vel_z: Tuple[float, float] = Field((-1.0, 1.0), description="Yaw rate command range, rad/s")

    @field_validator("lin_vel_x", "lin_vel_y", "ang_vel_z")
    @classmethod
    def _ordered(cls, value):
        if value[0] > value[1]:
            raise ValueError("range lower bound exceeds upper bound")
        return value

    @property
    def low(self) -> np.ndarray:
        return np.array([self.lin_vel_x[0], self.lin_vel_y[0], self.ang_vel_z[0]])

    @property
    def high(self) -> np.ndarray:
        return np.array([self.lin_vel_x[1], self.lin_vel_y[1], self.ang_vel_z[1]])


class RefBufferConfig(BaseModel):
    terms: List[str] = Field(list(DEFAULT_TERMS), description="Reference observation terms, in order")
    commands: CommandRanges = Field(default_factory=CommandRanges)
    observation_noise: float = Field(0.0, ge=0, description="Uniform additive noise on reference observations")

    @field_validator("terms")
    @classmethod
    def _known_terms(cls, value):
        unknown = [t for t in value if t not in CHANNELS]
        if unknown:
            raise ValueError(f"unknown reference terms {unknown}")
        if len(set(value)) != len(value):
            raise ValueError("reference terms must be unique")
        return value


@dataclass
class Assignment:
    sequence: int
    start: int
    anchor_position: np.ndarray
    anchor_yaw: float
    anchor_rotation: np.ndarray


@dataclass
class _Cache:
    step: int
    position: np.ndarray
    rotation: np.ndarray


@dataclass
class ReferenceState:
    """One reference frame. All channels are zero when ``mask`` is 0."""

    mask: int
    frame: Optional[int]
    channels: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def base(self) -> np.ndarray:
        return np.concatenate([self.channels[name] for name in BASE_TERMS])

    @property
    def joint(self) -> np.ndarray:
        return np.concatenate([self.channels[name] for name in JOINT_TERMS])

    @property
    def phase(self) -> np.ndarray:
        return self.channels["phase"]


class RefDataBuffer:
    def __init__(self, sequences: Sequence[MotionSequence], num_envs: int = 1,
                 config: Optional[RefBufferConfig] = None):
        if not sequences:
            raise ContractViolation("reference buffer needs at least one sequence")
        if num_envs < 1:
            raise ContractViolation("num_envs must be at least 1")
        self.config = config or RefBufferConfig()
        self.sequences: List[MotionSequence] = list(sequences)
        for seq in self.sequences:
            if not seq.augmented or seq.phase is None or seq.contacts is None:
                raise ContractViolation(f"sequence {seq.name!r} is not augmented")
        self._channels = [
            {name: seq.channel(name) for name in CHANNELS} for seq in self.sequences
        ]
        widths = {name: self._channels[0][name].shape[1] for name in CHANNELS}
        for index, chans in enumerate(self._channels):
            if {name: c.shape[1] for name, c in chans.items()} != widths:
                raise ContractViolation(f"sequence {index} has a different channel layout")
        self.term_dims: Dict[str, int] = widths
        self.num_envs = num_envs
        self._assignments: List[Optional[Assignment]] = [None] * num_envs
        self._caches: List[Optional[_Cache]] = [None] * num_envs
        self.integration_work = np.zeros(num_envs, dtype=np.int64)

    @classmethod
    def from_directory(cls, directory, num_envs: int = 1, config: Optional[RefBufferConfig] = None) -> "RefDataBuffer":
        return cls(load_dataset(directory), num_envs, config)

    # -- inventory ----------------------------------------------------------
    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    @property
    def total_frames(self) -> int:
        return sum(seq.num_frames for seq in self.sequences)

    def observation_dim(self, terms: Optional[Sequence[str]] = None) -> int:
        terms = self.config.terms if terms is None else terms
        return sum(self._term_dim(t) for t in terms)

    def _term_dim(self, term: str) -> int:
        if term not in self.term_dims:
            raise ConfigError(f"unknown reference term {term!r}", field="refbuffer.terms")
        return self.term_dims[term]

    def effective_end(self, sequence: int) -> int:
        seq = self.sequences[sequence]
        return seq.cycle[1] if seq.cycle else seq.num_frames

    def stats(self) -> pd.DataFrame:
        rows = []
        for seq in self.sequences:
            rows.append(
                {
                    "name": seq.name,
                    "frames": seq.num_frames,
                    "fps": seq.fps,
                    "duration_s": seq.num_frames / seq.fps,
                    "cycle_start": seq.cycle[0] if seq.cycle else None,
                    "cycle_end": seq.cycle[1] if seq.cycle else None,
                    "channels": ",".join(f"{name}[{self.term_dims[name]}]" for name in seq.channel_names()),
                }
            )
        return pd.DataFrame(rows)

    # -- assignment ---------------------------------------------------------
    def assignment(self, env: int) -> Assignment:
        current = self._assignments[env]
        if current is None:
            raise ContractViolation(f"env {env} has not been reset")
        return current

    def reset_env(
        self,
        env: int,
        rng: np.random.Generator,
        spawn_position: Sequence[float] = (0.0, 0.0),
        spawn_yaw: float = 0.0,
        sequence: Optional[int] = None,
        start: Optional[int] = None,
    ) -> Assignment:
        """Sample a sequence and start frame uniformly and anchor them at the spawn pose."""
        seq_id = int(rng.integers(self.num_sequences)) if sequence is None else int(sequence)
        if not 0 <= seq_id < self.num_sequences:
            raise ContractViolation(f"sequence id {seq_id} out of range")
        end = self.effective_end(seq_id)
        start = int(rng.integers(end)) if start is None else int(start)
        if not 0 <= start < self.sequences[seq_id].num_frames:
            raise ContractViolation(f"start frame {start} out of range")
        chans = self._channels[seq_id]
        position = np.array([spawn_position[0], spawn_position[1], chans["height"][start, 0]])
        rotation = yaw_matrix(float(spawn_yaw)) @ tilt_from_gravity(chans["gravity"][start])
        assignment = Assignment(seq_id, start, position, float(spawn_yaw), rotation)
        self._assignments[env] = assignment
        self._caches[env] = None
        return assignment

    # -- lookup -------------------------------------------------------------
    def frame_index(self, env: int, t: int) -> Optional[int]:
        """Sequence frame for env step ``t``, or ``None`` past the end of a non-cyclic clip."""
        if t < 0:
            raise ContractViolation(f"step must be non-negative, got {t}")
        a = self.assignment(env)
        seq = self.sequences[a.sequence]
        k = a.start + t
        if seq.cycle is None:
            return k if k < seq.num_frames else None
        i, j = seq.cycle
        if k < j:
            return k
        return i + (k - i) % (j - i)

    def query(self, env: int, t: int) -> ReferenceState:
        idx = self.frame_index(env, t)
        if idx is None:
            return ReferenceState(0, None, {name: np.zeros(w) for name, w in self.term_dims.items()})
        chans = self._channels[self.assignment(env).sequence]
        return ReferenceState(1, idx, {name: chans[name][idx].copy() for name in CHANNELS})

    def available(self, env: int, t: int) -> int:
        return int(self.frame_index(env, t) is not None)

    def reference_observation(
        self,
        env: int,
        t: int,
        terms: Optional[Sequence[str]] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[np.ndarray, int]:
        """Concatenated terms in ``terms`` order and the availability mask."""
        terms = list(self.config.terms if terms is None else terms)
        dims = [self._term_dim(term) for term in terms]
        state = self.query(env, t)
        if not state.mask:
            return np.zeros(sum(dims)), 0
        obs = np.concatenate([state.channels[term] for term in terms]) if terms else np.zeros(0)
        if rng is not None and self.config.observation_noise > 0:
            scale = self.config.observation_noise
            obs = obs + rng.uniform(-scale, scale, size=obs.shape)
        return obs, 1

    def command_from_reference(self, env: int, t: int, rng: np.random.Generator) -> np.ndarray:
        """(v_x, v_y, w_z) from the reference when available, else a uniform sample."""
        state = self.query(env, t)
        if state.mask:
            return np.array([state.channels["lin_vel"][0], state.channels["lin_vel"][1],
                             state.channels["ang_vel"][2]])
        ranges = self.config.commands
        return rng.uniform(ranges.low, ranges.high)

    # -- absolute pose --------------------------------------------------------
    def _velocities(self, env: int, step: int):
        idx = self.frame_index(env, step)
        if idx is None:
            return None
        chans = self._channels[self.assignment(env).sequence]
        return chans["lin_vel"][idx], chans["ang_vel"][idx]

    def integrate_absolute(self, env: int, t: int) -> Tuple[np.ndarray, np.ndarray]:
        """World root position (3,) and rotation (3, 3) at env step ``t``.

        Continues from the cached step when ``t`` is not behind it, otherwise
        restarts from the reset anchor.
        """
        if t < 0:
            raise ContractViolation(f"step must be non-negative, got {t}")
        a = self.assignment(env)
        dt = self.sequences[a.sequence].dt
        cache = self._caches[env]
        if cache is None or cache.step > t:
            cache = _Cache(0, a.anchor_position.copy(), a.anchor_rotation.copy())
        position, rotation = cache.position.copy(), cache.rotation.copy()
        for step in range(cache.step + 1, t + 1):
            self.integration_work[env] += 1
            velocities = self._velocities(env, step)
            if velocities is None:
                continue
            lin, ang = velocities
            rotation = rotation @ Rotation.from_rotvec(ang * dt).as_matrix()
            position = position + rotation @ lin * dt
        self._caches[env] = _Cache(t, position, rotation)
        return position.copy(), rotation.copy()

    def cached_step(self, env: int) -> Optional[int]:
        cache = self._caches[env]
        return None if cache is None else cache.step
