"""
Planar biped
============

A sagittal-plane toy robot built from a ``KinematicTree`` whose joints all
pitch about y. The base is a rigid body with planar pose (x, z, pitch) that
carries the whole robot mass; joints are position-controlled by decoupled PD
actuators. Ground contact uses penalty springs at the heel and toe of every
foot.

Two modes:

- ``simplified``: the base is welded to the reference root pose (or held in
  place when there is no reference) and contacts are off. The base part of the
  state, and therefore of observations and rewards, is the reference base.
- ``full``: free base with contacts.

Each env owns its random stream and one slot of a shared ``RefDataBuffer``.
The reference observation returned with the observation at step ``t`` is the
target frame ``t + 1``; rewards at step ``t + 1`` are scored against it.
"""

from __future__ import annotations

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from humimic.env.config import EnvConfig, EnvMode
from humimic.env.task import TASK_TERMS, task_rewards
from humimic.exceptions import ConfigError, ContractViolation, EnvFault
from humimic.kinematics.fk import forward_kinematics
from humimic.kinematics.tree import KinematicTree
from humimic.policy.spec import EmbeddingMode, ObservationSpec, make_spec
from humimic.refbuffer.buffer import RefDataBuffer
from humimic.rewards.imitation import ImitationReward
from humimic.rewards.termination import imitation_termination, task_termination
from humimic.rewards.toddler import ToddlerConfig, toddler_force
from humimic.seeding import named_rng

logger = logging.getLogger(__name__)

CONTACT_HEIGHT = 1e-3


def agent_term_dims(tree: KinematicTree, config: EnvConfig) -> Dict[str, int]:
    J = tree.dof
    dims = {"lin_vel": 3, "ang_vel": 3, "gravity": 3, "height": 1, "joints": J, "joint_vel": J,
            "last_action": J, "command": 3}
    return {name: dims[name] for name in config.obs_terms}


def pitch_matrix(pitch: float) -> np.ndarray:
    return Rotation.from_euler("y", float(pitch)).as_matrix()


def pitch_of(rotation: np.ndarray) -> float:
    """Pitch of a rotation matrix, ignoring yaw."""
    R = np.asarray(rotation)
    return float(np.arctan2(-R[2, 0], R[2, 2]))


@dataclass
class EnvState:
    base_position: np.ndarray
    base_pitch: float
    base_velocity: np.ndarray
    base_pitch_rate: float
    joints: np.ndarray
    joint_vel: np.ndarray
    contacts: np.ndarray
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(
            self.base_position.copy(),
            float(self.base_pitch),
            self.base_velocity.copy(),
            float(self.base_pitch_rate),
            self.joints.copy(),
            self.joint_vel.copy(),
            self.contacts.copy(),
            self.t,
        )

    @property
    def rotation(self) -> np.ndarray:
        return pitch_matrix(self.base_pitch)

    @property
    def position3(self) -> np.ndarray:
        return np.array([self.base_position[0], 0.0, self.base_position[1]])

    @property
    def height(self) -> float:
        return float(self.base_position[1])

    @property
    def gravity(self) -> np.ndarray:
        return np.array([np.sin(self.base_pitch), 0.0, -np.cos(self.base_pitch)])

    @property
    def lin_vel(self) -> np.ndarray:
        """Body-frame linear velocity."""
        world = np.array([self.base_velocity[0], 0.0, self.base_velocity[1]])
        return self.rotation.T @ world

    @property
    def ang_vel(self) -> np.ndarray:
        return np.array([0.0, self.base_pitch_rate, 0.0])

    def channels(self) -> Dict[str, np.ndarray]:
        return {
            "lin_vel": self.lin_vel,
            "ang_vel": self.ang_vel,
            "gravity": self.gravity,
            "height": np.array([self.height]),
            "joints": self.joints.copy(),
            "joint_vel": self.joint_vel.copy(),
            "contacts": self.contacts.astype(np.float64),
        }

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.base_position))
            and np.isfinite(self.base_pitch)
            and np.all(np.isfinite(self.base_velocity))
            and np.isfinite(self.base_pitch_rate)
            and np.all(np.isfinite(self.joints))
            and np.all(np.isfinite(self.joint_vel))
        )


@dataclass
class PhysicsParams:
    mass: float
    base_inertia: float
    joint_inertia: np.ndarray
    stiffness: np.ndarray
    damping: np.ndarray


@dataclass
class StepResult:
    obs: np.ndarray
    ref: np.ndarray
    mask: int
    task_reward: Dict[str, float]
    imitation_reward: Dict[str, float]
    done: bool
    timeout: bool = False
    fault: bool = False
    info: Dict[str, Any] = field(default_factory=dict)


def _subtree_links(tree: KinematicTree) -> Dict[str, List[str]]:
    children: Dict[str, List[str]] = {}
    for joint in tree.joints:
        children.setdefault(joint.parent, []).append(joint.child)

    def collect(link: str) -> List[str]:
        out = [link]
        for child in children.get(link, []):
            out.extend(collect(child))
        return out

    return {joint.name: collect(joint.child) for joint in tree.actuated_joints}


def nominal_physics(tree: KinematicTree, config: EnvConfig) -> PhysicsParams:
    """Masses and inertias at the zero pose; link masses sit at link origins."""
    fk = forward_kinematics(tree, np.zeros(tree.dof))
    masses = {link.name: link.mass for link in tree.links}
    positions = {name: fk.position(name).value for name in tree.link_names}
    mass = tree.total_mass
    if mass <= 0:
        raise ConfigError("robot has no mass", field="robot")
    base_inertia = sum(m * (positions[n][0] ** 2 + positions[n][2] ** 2) for n, m in masses.items())
    subtrees = _subtree_links(tree)
    inertia = []
    for joint in tree.actuated_joints:
        pivot = positions[joint.child]
        value = sum(masses[n] * float(np.sum((positions[n] - pivot) ** 2)) for n in subtrees[joint.name])
        inertia.append(max(value, config.actuator.min_inertia))
    inertia = np.asarray(inertia)
    kp = np.full(tree.dof, config.actuator.stiffness)
    if config.actuator.damping is None:
        kd = 2.0 * np.sqrt(kp * inertia)
    else:
        kd = np.full(tree.dof, config.actuator.damping)
    return PhysicsParams(mass, max(base_inertia, 0.1), inertia, kp, kd)


class BipedEnv:
    def __init__(
        self,
        tree: KinematicTree,
        config: Optional[EnvConfig] = None,
        buffer: Optional[RefDataBuffer] = None,
        env_id: int = 0,
        reward: Optional[ImitationReward] = None,
        rng: Optional[np.random.Generator] = None,
        obs_spec: Optional[ObservationSpec] = None,
        ref_spec: Optional[ObservationSpec] = None,
    ):
        if not tree.feet:
            raise ConfigError("robot has no feet in its keypoint map", field="paths.keypoint_map")
        self.tree = tree
        self.config = config or EnvConfig()
        self.mode = self.config.mode
        self.buffer = buffer
        self.env_id = env_id
        self.reward = reward or ImitationReward()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        if buffer is not None:
            self._check_buffer(buffer)
            if env_id >= buffer.num_envs:
                raise ContractViolation(f"env {env_id} has no slot in a buffer sized for {buffer.num_envs}")
        self.obs_spec = obs_spec or make_spec(self.term_dims)
        missing = [t.name for t in self.obs_spec.terms if t.name not in self.term_dims]
        if missing:
            raise ConfigError(f"observation spec names unknown terms {missing}", field="env.obs_terms")
        self.ref_spec = ref_spec
        if ref_spec is None and buffer is not None:
            self.ref_spec = make_spec({t: buffer.term_dims[t] for t in buffer.config.terms})
        self.nominal = np.zeros(tree.dof)
        self.nominal_physics = nominal_physics(tree, self.config)
        self.physics = self.nominal_physics
        self.toddler: Optional[ToddlerConfig] = None
        self.state: Optional[EnvState] = None
        self.command = np.zeros(3)
        self.last_action = np.zeros(tree.dof)
        self._targets = self.nominal.copy()
        self._external = np.zeros(2)
        self._points_prev: Optional[np.ndarray] = None
        self._history: Deque[Dict[str, np.ndarray]] = deque(maxlen=self.obs_spec.max_history)
        self._next_push: Optional[int] = None
        self._command_period: Optional[int] = None

    # -- layout ---------------------------------------------------------------
    def _check_buffer(self, buffer: RefDataBuffer) -> None:
        for seq in buffer.sequences:
            if abs(seq.dt - self.config.dt) > 1e-9:
                raise ConfigError(
                    f"reference {seq.name!r} runs at {seq.fps} fps, env steps at {1.0 / self.config.dt:g} Hz",
                    field="env.dt",
                )
            if seq.joint_names is not None and list(seq.joint_names) != self.tree.joint_names:
                raise ConfigError(f"reference {seq.name!r} joint order differs from the robot", field="paths.robot")

    @property
    def dof(self) -> int:
        return self.tree.dof

    @property
    def action_dim(self) -> int:
        return self.tree.dof

    @property
    def num_feet(self) -> int:
        return len(self.tree.feet)

    @property
    def term_dims(self) -> Dict[str, int]:
        return agent_term_dims(self.tree, self.config)

    @property
    def obs_dim(self) -> int:
        return self.obs_spec.dim

    @property
    def ref_dim(self) -> int:
        return self.ref_spec.dim if self.ref_spec is not None else 0

    @property
    def max_steps(self) -> int:
        return self.config.max_episode_steps

    def set_mode(self, mode: EnvMode) -> None:
        """Switch between simplified and full physics; joint state is kept."""
        mode = EnvMode(mode)
        if mode is not self.mode:
            logger.debug(f"env {self.env_id}: mode {self.mode.value} -> {mode.value}")
        self.mode = mode
        if self.state is not None and mode is EnvMode.SIMPLIFIED:
            self.state.contacts = np.zeros(self.num_feet, dtype=bool)
        self._points_prev = None

    def _referenced(self) -> bool:
        return self.buffer is not None and not self.config.mask_references

    # -- kinematics -------------------------------------------------------------
    def contact_points(self, state: Optional[EnvState] = None) -> np.ndarray:
        """World heel and toe positions, (F, 2, 3)."""
        state = state or self.state
        fk = forward_kinematics(self.tree, state.joints, state.position3, state.rotation)
        half = self.config.contact.foot_half_length
        points = []
        for foot in self.tree.feet:
            p = fk.position(foot).value
            forward = fk.rotation(foot).value[:, 0]
            points.append([p - half * forward, p + half * forward])
        return np.asarray(points)

    def mechanical_energy(self, state: Optional[EnvState] = None) -> float:
        state = state or self.state
        phys = self.physics
        kinetic = 0.5 * phys.mass * float(np.dot(state.base_velocity, state.base_velocity))
        kinetic += 0.5 * phys.base_inertia * state.base_pitch_rate ** 2
        kinetic += 0.5 * float(np.sum(phys.joint_inertia * state.joint_vel ** 2))
        return kinetic + phys.mass * self.config.gravity * state.height

    # -- reset ------------------------------------------------------------------
    def _randomize(self) -> PhysicsParams:
        rand = self.config.randomization
        base = self.nominal_physics
        if not rand.enabled:
            return base
        scale = self.rng.uniform(*rand.mass_range)
        payload = self.rng.uniform(-rand.payload, rand.payload)
        mass = max(base.mass * scale + payload, 0.1 * base.mass)
        return PhysicsParams(
            mass=mass,
            base_inertia=base.base_inertia * scale,
            joint_inertia=base.joint_inertia * scale,
            stiffness=base.stiffness * self.rng.uniform(*rand.stiffness_range),
            damping=base.damping * self.rng.uniform(*rand.damping_range),
        )

    def _ground(self, state: EnvState) -> None:
        lowest = float(self.contact_points(state)[..., 2].min())
        state.base_position[1] -= lowest

    def reset(self, sequence: Optional[int] = None, start: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, int]:
        """Start a new episode; returns (observation, reference observation, mask)."""
        self.physics = self._randomize()
        J, F = self.tree.dof, self.num_feet
        if self._referenced():
            self.buffer.reset_env(self.env_id, self.rng, sequence=sequence, start=start)
            ref = self.buffer.query(self.env_id, 0).channels
            pitch = float(np.arctan2(ref["gravity"][0], -ref["gravity"][2]))
            R = pitch_matrix(pitch)
            world_v = R @ ref["lin_vel"]
            state = EnvState(
                base_position=np.array([0.0, float(ref["height"][0])]),
                base_pitch=pitch,
                base_velocity=np.array([world_v[0], world_v[2]]),
                base_pitch_rate=float(ref["ang_vel"][1]),
                joints=np.clip(ref["joints"], self.tree.lower, self.tree.upper),
                joint_vel=ref["joint_vel"].copy(),
                contacts=np.zeros(F, dtype=bool),
            )
            if self.mode is EnvMode.SIMPLIFIED:
                position, rotation = self.buffer.integrate_absolute(self.env_id, 0)
                state.base_position = np.array([position[0], position[2]])
                state.base_pitch = pitch_of(rotation)
        else:
            state = EnvState(
                base_position=np.zeros(2),
                base_pitch=0.0,
                base_velocity=np.zeros(2),
                base_pitch_rate=0.0,
                joints=np.clip(self.nominal, self.tree.lower, self.tree.upper),
                joint_vel=np.zeros(J),
                contacts=np.zeros(F, dtype=bool),
            )
            self._ground(state)
            self._sample_command()
        if self.mode is EnvMode.FULL and self.config.contact.enabled and self._referenced():
            self._ground(state)
        if self.mode is EnvMode.FULL and self.config.contact.enabled:
            state.contacts = self.contact_points(state)[..., 2].min(axis=1) < CONTACT_HEIGHT
        self.state = state
        self.last_action = np.zeros(J)
        self._targets = state.joints.copy()
        self._external = np.zeros(2)
        self._points_prev = None
        self._schedule_push()
        self._command_period = self._steps(self.config.command_resample_s)
        self._refresh_command()
        self._history.clear()
        self._history.append(self.observation_terms())
        obs = self.observe()
        ref_obs, mask = self.reference_observation()
        return obs, ref_obs, mask

    def _steps(self, seconds: Optional[float]) -> Optional[int]:
        return None if seconds is None else max(int(round(seconds / self.config.dt)), 1)

    def _schedule_push(self) -> None:
        rand = self.config.randomization
        self._next_push = None
        if rand.enabled and rand.pushes:
            t = self.state.t if self.state is not None else 0
            self._next_push = t + self._steps(self.rng.uniform(*rand.push_interval))

    def _sample_command(self) -> None:
        ranges = self.config.commands
        self.command = self.rng.uniform(ranges.low, ranges.high)

    def _refresh_command(self) -> None:
        if self._referenced():
            state = self.buffer.query(self.env_id, self.state.t)
            if state.mask:
                self.command = self.buffer.command_from_reference(self.env_id, self.state.t, self.rng)

    # -- observation ------------------------------------------------------------
    def observation_terms(self) -> Dict[str, np.ndarray]:
        s = self.state
        terms = {
            "lin_vel": s.lin_vel,
            "ang_vel": s.ang_vel,
            "gravity": s.gravity,
            "height": np.array([s.height]),
            "joints": s.joints.copy(),
            "joint_vel": s.joint_vel.copy(),
            "last_action": self.last_action.copy(),
            "command": self.command.copy(),
        }
        return {name: terms[name] for name in self.config.obs_terms}

    def observe(self, noise: bool = True) -> np.ndarray:
        obs = self.obs_spec.flatten(list(self._history))
        scale = self.config.obs_noise
        if noise and scale > 0:
            obs = obs + self.rng.uniform(-scale, scale, size=obs.shape)
        return obs

    def reference_observation(self) -> Tuple[np.ndarray, int]:
        """Target frame ``t + 1`` in reference-spec order, and its mask."""
        if self.ref_spec is None:
            return np.zeros(0), 0
        if not self._referenced():
            return np.zeros(self.ref_spec.dim), 0
        terms = [t.name for t in self.ref_spec.terms]
        return self.buffer.reference_observation(self.env_id, self.state.t + 1, terms, self.rng)

    # -- dynamics ---------------------------------------------------------------
    def apply_external_force(self, force: Sequence[float]) -> None:
        """World force on the base for the next step: (F_x, F_z) or (F_x, F_y, F_z)."""
        f = np.asarray(force, dtype=np.float64).reshape(-1)
        if f.size == 3:
            f = f[[0, 2]]
        if f.size != 2:
            raise ContractViolation(f"force must have 2 or 3 components, got {f.size}")
        self._external = self._external + f
        logger.debug(f"env {self.env_id}: external force {f.tolist()} at step {self.state.t}")

    def _actuate(self, h: float) -> None:
        s, phys = self.state, self.physics
        if self.config.actuator.ideal:
            return
        accel = phys.stiffness * (self._targets - s.joints) / phys.joint_inertia
        s.joint_vel = (s.joint_vel + h * accel) / (1.0 + h * phys.damping / phys.joint_inertia)
        s.joints = s.joints + h * s.joint_vel
        clamped = (s.joints < self.tree.lower) | (s.joints > self.tree.upper)
        s.joints = np.clip(s.joints, self.tree.lower, self.tree.upper)
        s.joint_vel = np.where(clamped, 0.0, s.joint_vel)

    def _contacts(self, h: float):
        """Normal forces and friction-capped tangential forces at penetrating points.

        Returns the explicit force and torque on the base and, for points whose
        tangential damping stays under the friction cap, (lever z, joint-induced
        velocity) pairs that are resolved implicitly with the base velocity.
        """
        s, model = self.state, self.config.contact
        points = self.contact_points()
        prev = self._points_prev if self._points_prev is not None else points
        velocity = (points - prev) / h
        self._points_prev = points
        force = np.zeros(2)
        torque = 0.0
        sticking: List[Tuple[float, float]] = []
        for foot in range(points.shape[0]):
            for k in range(points.shape[1]):
                z = points[foot, k, 2]
                if z >= 0.0:
                    continue
                r = points[foot, k] - s.position3
                normal = max(0.0, -model.stiffness * z - model.damping * velocity[foot, k, 2])
                force[1] += normal
                torque -= r[0] * normal
                cap = model.friction * normal
                slip = velocity[foot, k, 0]
                if abs(model.tangential_damping * slip) <= cap:
                    rigid = s.base_velocity[0] + s.base_pitch_rate * r[2]
                    sticking.append((r[2], slip - rigid))
                else:
                    tangential = -np.sign(slip) * cap
                    force[0] += tangential
                    torque += r[2] * tangential
        return force, torque, sticking

    def _integrate_base(self, h: float) -> None:
        s, phys = self.state, self.physics
        M, I = phys.mass, phys.base_inertia
        constant = self._external / M + np.array([0.0, -self.config.gravity])
        force, torque, sticking = np.zeros(2), 0.0, []
        if self.config.contact.enabled:
            force, torque, sticking = self._contacts(h)
        c = h * self.config.contact.tangential_damping
        lever = np.array([r for r, _ in sticking])
        drift = np.array([u for _, u in sticking])
        # implicit tangential damping, coupled through the pitch lever arms
        A = np.array([[M + c * len(sticking), c * lever.sum()],
                      [c * lever.sum(), I + c * np.sum(lever ** 2)]])
        rhs = np.array([
            M * s.base_velocity[0] + h * (force[0] + M * constant[0]) - c * drift.sum(),
            I * s.base_pitch_rate + h * torque - c * np.sum(lever * drift),
        ])
        vx, pitch_rate = np.linalg.solve(A, rhs)
        vz = s.base_velocity[1] + h * (force[1] / M + constant[1])
        s.base_velocity = np.array([vx, vz])
        # exact for the constant part of the acceleration
        s.base_position = s.base_position + h * s.base_velocity - 0.5 * h * h * constant
        s.base_pitch_rate = float(pitch_rate)
        s.base_pitch = s.base_pitch + h * s.base_pitch_rate

    def _weld_base(self) -> None:
        s = self.state
        if not self._referenced():
            s.base_velocity = np.zeros(2)
            s.base_pitch_rate = 0.0
            return
        position, rotation = self.buffer.integrate_absolute(self.env_id, s.t)
        ref = self.buffer.query(self.env_id, s.t)
        s.base_position = np.array([position[0], position[2]])
        s.base_pitch = pitch_of(rotation)
        if ref.mask:
            world_v = rotation @ ref.channels["lin_vel"]
            s.base_velocity = np.array([world_v[0], world_v[2]])
            s.base_pitch_rate = float(ref.channels["ang_vel"][1])
        else:
            s.base_velocity = np.zeros(2)
            s.base_pitch_rate = 0.0

    def step(self, action: Sequence[float]) -> StepResult:
        if self.state is None:
            raise ContractViolation("step() before reset()")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.size != self.dof:
            raise ContractViolation(f"action has {action.size} entries, robot has {self.dof} joints")
        s = self.state
        act = self.config.actuator
        self._targets = np.clip(self.nominal + act.action_scale * action, self.tree.lower, self.tree.upper)
        s.t += 1
        ref = self.buffer.query(self.env_id, s.t) if self._referenced() else None
        mask = int(ref.mask) if ref is not None else 0
        simplified = self.mode is EnvMode.SIMPLIFIED

        if self._next_push is not None and s.t >= self._next_push and not simplified:
            push = self.rng.uniform(-self.config.randomization.push_velocity, self.config.randomization.push_velocity)
            s.base_velocity = s.base_velocity + np.array([push, 0.0])
            logger.debug(f"env {self.env_id}: push {push:+.3f} m/s at step {s.t}")
            self._schedule_push()
        if self.toddler is not None and mask and not simplified:
            lift = toddler_force(s.height, float(s.base_velocity[1]), float(ref.channels["height"][0]), self.toddler)
            if lift:
                self.apply_external_force((0.0, lift))

        fault = False
        try:
            if act.ideal:
                s.joint_vel = (self._targets - s.joints) / self.config.dt
                s.joints = self._targets.copy()
            h = self.config.sub_dt
            for _ in range(self.config.substeps):
                self._actuate(h)
                if not simplified:
                    self._integrate_base(h)
            if simplified:
                self._weld_base()
            if not s.is_finite():
                raise EnvFault(f"env {self.env_id}: non-finite state at step {s.t}")
        except (EnvFault, FloatingPointError) as exc:
            logger.warning(f"{exc}; flagging for reset")
            fault = True
        self._external = np.zeros(2)

        if not fault and not simplified and self.config.contact.enabled:
            s.contacts = self.contact_points()[..., 2].min(axis=1) < CONTACT_HEIGHT
        else:
            s.contacts = np.zeros(self.num_feet, dtype=bool)

        if self._command_period is not None and s.t % self._command_period == 0 and not mask:
            self._sample_command()
        self._refresh_command()

        task = task_rewards(s.gravity, s.lin_vel, self.command, action, self.last_action, self.config.task)
        channels = s.channels()
        ref_channels = ref.channels if ref is not None else {}
        imitation = self.reward(channels, ref_channels, mask) if mask else {n: 0.0 for n in self.reward.term_names}
        self.last_action = action.copy()

        spec = self.reward.config.termination
        if fault:
            terminated = True
        elif mask and not simplified:
            terminated = imitation_termination(s.height, s.gravity, float(ref_channels["height"][0]),
                                               ref_channels["gravity"], mask, spec)
        elif not simplified:
            terminated = task_termination(s.height, s.gravity, spec)
        else:
            terminated = False
        timeout = s.t >= self.max_steps and not terminated

        info: Dict[str, Any] = {
            "t": s.t,
            "command": self.command.copy(),
            "lin_vel": s.lin_vel,
            "base_x": float(s.base_position[0]),
            "height": s.height,
            "pitch": float(s.base_pitch),
        }
        if mask:
            info["joint_error"] = channels["joints"] - ref_channels["joints"]
            info["lin_vel_error"] = channels["lin_vel"] - ref_channels["lin_vel"]
            info["ang_vel_error"] = channels["ang_vel"] - ref_channels["ang_vel"]

        if fault:
            obs = np.zeros(self.obs_dim)
            ref_obs, next_mask = np.zeros(self.ref_dim), 0
        else:
            self._history.append(self.observation_terms())
            obs = self.observe()
            ref_obs, next_mask = self.reference_observation()
        return StepResult(obs, ref_obs, next_mask, task, imitation, terminated or timeout, timeout, fault, info)


@dataclass
class VecStep:
    obs: np.ndarray
    ref: np.ndarray
    mask: np.ndarray
    task_reward: Dict[str, np.ndarray]
    imitation_reward: Dict[str, np.ndarray]
    dones: np.ndarray
    timeouts: np.ndarray
    faults: np.ndarray
    terminal_obs: np.ndarray
    terminal_ref: np.ndarray
    terminal_mask: np.ndarray
    infos: List[Dict[str, Any]]


class VecEnv:
    """Steps a list of envs, optionally on a thread pool, and resets finished ones."""

    def __init__(self, envs: Sequence[BipedEnv], num_workers: int = 1):
        if not envs:
            raise ContractViolation("VecEnv needs at least one env")
        self.envs = list(envs)
        self.num_workers = max(int(num_workers), 1)
        first = self.envs[0]
        for env in self.envs[1:]:
            if env.obs_dim != first.obs_dim or env.ref_dim != first.ref_dim or env.dof != first.dof:
                raise ContractViolation("all envs must share observation and action layouts")

    @property
    def num_envs(self) -> int:
        return len(self.envs)

    @property
    def obs_spec(self) -> ObservationSpec:
        return self.envs[0].obs_spec

    @property
    def ref_spec(self) -> Optional[ObservationSpec]:
        return self.envs[0].ref_spec

    @property
    def action_dim(self) -> int:
        return self.envs[0].action_dim

    def _map(self, fn, items):
        if self.num_workers == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
            return list(pool.map(fn, items))

    def set_mode(self, mode: EnvMode) -> None:
        for env in self.envs:
            env.set_mode(mode)

    def set_toddler(self, config: Optional[ToddlerConfig]) -> None:
        for env in self.envs:
            env.toddler = config

    def set_masked(self, masked: bool) -> None:
        for env in self.envs:
            env.config = env.config.model_copy(update={"mask_references": bool(masked)})

    def reset(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        results = self._map(lambda env: env.reset(), self.envs)
        obs, ref, mask = zip(*results)
        return np.stack(obs), np.stack(ref), np.asarray(mask, dtype=np.int64)

    def step(self, actions: np.ndarray) -> VecStep:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.num_envs, self.action_dim):
            raise ContractViolation(f"actions must be {(self.num_envs, self.action_dim)}, got {actions.shape}")
        results: List[StepResult] = self._map(lambda pair: pair[0].step(pair[1]), list(zip(self.envs, actions)))
        obs = np.stack([r.obs for r in results])
        ref = np.stack([r.ref for r in results])
        mask = np.asarray([r.mask for r in results], dtype=np.int64)
        terminal_obs, terminal_ref, terminal_mask = obs.copy(), ref.copy(), mask.copy()
        for i, (env, r) in enumerate(zip(self.envs, results)):
            if r.done:
                obs[i], ref[i], mask[i] = env.reset()
        task = {name: np.asarray([r.task_reward[name] for r in results]) for name in TASK_TERMS}
        names = self.envs[0].reward.term_names
        imitation = {name: np.asarray([r.imitation_reward[name] for r in results]) for name in names}
        return VecStep(
            obs=obs,
            ref=ref,
            mask=mask,
            task_reward=task,
            imitation_reward=imitation,
            dones=np.asarray([r.done for r in results]),
            timeouts=np.asarray([r.timeout for r in results]),
            faults=np.asarray([r.fault for r in results]),
            terminal_obs=terminal_obs,
            terminal_ref=terminal_ref,
            terminal_mask=terminal_mask,
            infos=[r.info for r in results],
        )


def make_specs(
    tree: KinematicTree,
    config: EnvConfig,
    buffer: Optional[RefDataBuffer] = None,
    mode: EmbeddingMode = EmbeddingMode.BASIC,
    obs_tokens: int = 4,
    ref_tokens: int = 4,
    history: int = 1,
) -> Tuple[ObservationSpec, Optional[ObservationSpec]]:
    """Observation and reference specs for envs built from these inputs."""
    obs_spec = make_spec(agent_term_dims(tree, config), mode, obs_tokens, history)
    ref_spec = None
    if buffer is not None:
        ref_spec = make_spec({t: buffer.term_dims[t] for t in buffer.config.terms}, mode, ref_tokens, 1)
    return obs_spec, ref_spec


def make_envs(
    tree: KinematicTree,
    config: EnvConfig,
    num_envs: int,
    seed: int,
    buffer: Optional[RefDataBuffer] = None,
    reward: Optional[ImitationReward] = None,
    obs_spec: Optional[ObservationSpec] = None,
    ref_spec: Optional[ObservationSpec] = None,
    num_workers: int = 1,
) -> VecEnv:
    """``num_envs`` envs sharing one reward (and its curriculum) and one buffer."""
    if obs_spec is None:
        obs_spec, default_ref = make_specs(tree, config, buffer)
        ref_spec = ref_spec or default_ref
    reward = reward or ImitationReward()
    envs = [
        BipedEnv(tree, config, buffer, i, reward, named_rng(seed, f"env.{i}"), obs_spec, ref_spec)
        for i in range(num_envs)
    ]
    return VecEnv(envs, num_workers)
