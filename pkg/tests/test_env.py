import numpy as np
import pytest

from humimic.env import (
    ActuatorConfig,
    BipedEnv,
    ContactModel,
    EnvConfig,
    EnvMode,
    RandomizationConfig,
    TaskRewardConfig,
    make_envs,
    make_specs,
)
from humimic.env.motions import SHIN, THIGH, MotionGeneratorConfig, MotionKind, generate_motion, leg_ik
from humimic.env.task import task_rewards
from humimic.exceptions import ConfigError, ContractViolation

DOWN = np.array([0.0, 0.0, -1.0])
FLOATING = ContactModel(enabled=False)


def make_env(tree, buffer=None, **overrides):
    return BipedEnv(tree, EnvConfig(**overrides), buffer, 0, rng=np.random.default_rng(0))


def snapshot(env):
    s = env.state
    return np.concatenate([s.base_position, [s.base_pitch], s.base_velocity, [s.base_pitch_rate], s.joints])


class TestDynamics:
    def test_rest_without_gravity_is_a_fixed_point(self, biped):
        env = make_env(biped, gravity=0.0, contact=FLOATING)
        env.reset()
        before = snapshot(env)
        for _ in range(5):
            env.step(np.zeros(biped.dof))
        assert np.array_equal(snapshot(env), before)

    def test_simplified_base_is_fixed(self, biped, rng):
        env = make_env(biped, mode=EnvMode.SIMPLIFIED)
        env.reset()
        position, pitch = env.state.base_position.copy(), env.state.base_pitch
        for _ in range(100):
            result = env.step(rng.normal(scale=0.5, size=biped.dof))
            assert not result.done
            assert not env.state.contacts.any()
        assert np.array_equal(env.state.base_position, position) and env.state.base_pitch == pitch

    def test_ballistic_velocity_change(self, biped):
        env = make_env(biped, contact=FLOATING)
        env.reset()
        for _ in range(5):
            vx, vz = env.state.base_velocity
            env.step(np.zeros(biped.dof))
            assert env.state.base_velocity[1] - vz == pytest.approx(-9.81 * 0.02, abs=1e-9)
            assert env.state.base_velocity[0] == pytest.approx(vx, abs=1e-12)

    def test_free_flight_conserves_energy(self, biped):
        env = make_env(biped, contact=FLOATING)
        env.reset()
        env.state.base_velocity = np.array([0.3, 2.0])
        energy = env.mechanical_energy()
        for _ in range(10):
            env.step(np.zeros(biped.dof))
        assert env.mechanical_energy() == pytest.approx(energy, abs=1e-8)

    def test_weight_balancing_force_hovers(self, biped):
        env = make_env(biped, contact=FLOATING)
        env.reset()
        env.apply_external_force((0.0, env.physics.mass * 9.81))
        env.step(np.zeros(biped.dof))
        assert env.state.base_velocity[1] == pytest.approx(0.0, abs=1e-9)

    def test_zero_force_changes_nothing(self, biped, rng):
        actions = rng.normal(scale=0.3, size=(20, biped.dof))
        runs = []
        for push in (False, True):
            env = make_env(biped)
            env.reset()
            for a in actions:
                if push:
                    env.apply_external_force((0.0, 0.0, 0.0))
                env.step(a)
            runs.append(snapshot(env))
        assert np.array_equal(runs[0], runs[1])

    def test_push_matches_impulse(self, biped):
        env = make_env(biped, contact=FLOATING)
        env.reset()
        force = 0.5 * env.physics.mass / env.config.dt
        env.apply_external_force((force, 0.0))
        env.step(np.zeros(biped.dof))
        assert env.state.base_velocity[0] == pytest.approx(0.5, abs=1e-9)

    def test_force_shape(self, biped):
        env = make_env(biped)
        env.reset()
        with pytest.raises(ContractViolation, match="2 or 3"):
            env.apply_external_force([1.0])

    def test_joints_stay_within_limits(self, biped, rng):
        env = make_env(biped)
        env.reset()
        for _ in range(60):
            result = env.step(rng.normal(scale=3.0, size=biped.dof))
            if not result.fault:
                assert np.all(env.state.joints >= biped.lower) and np.all(env.state.joints <= biped.upper)
            if result.done:
                env.reset()

    def test_ideal_actuators_reach_targets(self, biped):
        env = make_env(biped, mode=EnvMode.SIMPLIFIED, actuator=ActuatorConfig(ideal=True))
        env.reset()
        action = np.clip(np.full(biped.dof, 0.3), biped.lower, biped.upper)
        env.step(np.full(biped.dof, 0.3))
        assert np.array_equal(env.state.joints, action)

    def test_non_finite_state_is_a_fault(self, biped):
        env = make_env(biped, mode=EnvMode.SIMPLIFIED)
        env.reset()
        env.state.joint_vel[:] = np.nan
        result = env.step(np.zeros(biped.dof))
        assert result.fault and result.done and not result.timeout
        assert np.array_equal(result.obs, np.zeros(env.obs_dim))

    def test_step_contracts(self, biped):
        env = make_env(biped)
        with pytest.raises(ContractViolation, match="reset"):
            env.step(np.zeros(biped.dof))
        env.reset()
        with pytest.raises(ContractViolation, match="11 joints"):
            env.step(np.zeros(3))

    def test_contact_forces_push_and_respect_friction(self, biped, rng):
        env = make_env(biped)
        env.reset()
        friction = env.config.contact.friction
        for _ in range(40):
            s = env.state
            s.joints = rng.uniform(biped.lower, biped.upper)
            s.base_pitch = rng.uniform(-0.3, 0.3)
            s.base_velocity = rng.normal(size=2)
            s.base_pitch_rate = rng.normal()
            env._ground(s)
            s.base_position[1] -= rng.uniform(1e-3, 0.05)
            points = env.contact_points()
            assert points[..., 2].min() < 0.0
            env._points_prev = points + rng.normal(scale=0.02, size=points.shape)
            force, _, _ = env._contacts(0.005)
            assert force[1] >= 0.0
            assert abs(force[0]) <= friction * force[1] + 1e-9

    def test_separating_contacts_do_not_pull(self, biped):
        env = make_env(biped)
        env.reset()
        env.state.base_position[1] -= 0.02
        points = env.contact_points()
        # every point rises at 10 m/s, so damping outweighs the spring
        env._points_prev = points - np.array([0.0, 0.0, 0.05])
        force, torque, _ = env._contacts(0.005)
        assert force[1] == 0.0 and force[0] == 0.0 and torque == 0.0


class TestModes:
    def test_standing_registers_both_feet(self, biped):
        env = make_env(biped)
        env.reset()
        assert env.state.contacts.tolist() == [True, True]
        assert env.contact_points()[..., 2].min() == pytest.approx(0.0, abs=1e-12)

    def test_switch_keeps_joint_state(self, biped, rng):
        env = make_env(biped)
        env.reset()
        for _ in range(5):
            env.step(rng.normal(scale=0.2, size=biped.dof))
        joints, joint_vel = env.state.joints.copy(), env.state.joint_vel.copy()
        env.set_mode(EnvMode.SIMPLIFIED)
        assert np.array_equal(env.state.joints, joints) and np.array_equal(env.state.joint_vel, joint_vel)
        assert not env.state.contacts.any()
        env.set_mode("full")
        assert env.mode is EnvMode.FULL

    def test_simplified_base_follows_reference(self, biped, buffer):
        env = BipedEnv(biped, EnvConfig(mode=EnvMode.SIMPLIFIED), buffer, 1)
        env.reset(sequence=0, start=0)
        for _ in range(10):
            env.step(np.zeros(biped.dof))
        position, _ = buffer.integrate_absolute(1, env.state.t)
        assert np.allclose(env.state.base_position, [position[0], position[2]])


class TestObservations:
    def test_noise_free_readout(self, biped):
        env = make_env(biped)
        obs, ref, mask = env.reset()
        assert np.array_equal(obs, env.obs_spec.flatten([env.observation_terms()]))
        assert obs.shape == (3 + 3 + 3 * 11 + 3,)
        assert ref.size == 0 and mask == 0

    def test_noise_bounds(self, biped):
        env = make_env(biped, obs_noise=0.05)
        env.reset()
        clean = env.observe(noise=False)
        draws = np.stack([env.observe() for _ in range(2500)])
        gap = draws - clean
        assert draws.size >= 100_000
        assert gap.max() <= 0.05 + 1e-12 and gap.min() >= -0.05 - 1e-12
        assert gap.max() > 0.049 and gap.min() < -0.049

    def test_reset_to_reference_frame(self, biped, buffer, processed_walk):
        env = BipedEnv(biped, EnvConfig(), buffer, 0)
        obs, ref, mask = env.reset(sequence=0, start=7)
        assert np.array_equal(env.state.joints, processed_walk.joints[7])
        assert mask == 1
        joints = env.ref_spec.term_slices()["joints"]
        assert np.array_equal(ref[joints], processed_walk.joints[8])

    def test_reference_tracks_next_frame(self, biped, buffer, processed_walk):
        env = BipedEnv(biped, EnvConfig(mode=EnvMode.SIMPLIFIED), buffer, 0)
        env.reset(sequence=0, start=3)
        result = env.step(np.zeros(biped.dof))
        joints = env.ref_spec.term_slices()["joints"]
        assert np.array_equal(result.ref[joints], processed_walk.joints[5])
        assert "joint_error" in result.info
        assert set(result.imitation_reward) == set(env.reward.term_names)

    def test_masked_references(self, biped, buffer):
        env = BipedEnv(biped, EnvConfig(mask_references=True), buffer, 0)
        obs, ref, mask = env.reset()
        assert mask == 0 and np.array_equal(ref, np.zeros(env.ref_dim))
        result = env.step(np.zeros(biped.dof))
        assert set(result.imitation_reward.values()) == {0.0}

    def test_buffer_must_match_control_rate(self, biped, buffer):
        with pytest.raises(ConfigError, match="fps"):
            BipedEnv(biped, EnvConfig(dt=0.01), buffer, 0)
        with pytest.raises(ContractViolation, match="slot"):
            BipedEnv(biped, EnvConfig(), buffer, 2)

    def test_robot_without_feet(self, arm):
        with pytest.raises(ConfigError, match="feet"):
            BipedEnv(arm)

    def test_specs(self, biped, buffer):
        obs_spec, ref_spec = make_specs(biped, EnvConfig(), buffer)
        assert obs_spec.dim == 42
        assert ref_spec.dim == 3 + 3 + 3 + 1 + 11 + 11 + 2 * len(biped.feet)
        assert make_specs(biped, EnvConfig())[1] is None


class TestVecEnv:
    def test_shapes_and_auto_reset(self, biped):
        vec = make_envs(biped, EnvConfig(mode=EnvMode.SIMPLIFIED, max_episode_s=0.06), 3, seed=0)
        obs, ref, mask = vec.reset()
        assert obs.shape == (3, vec.envs[0].obs_dim) and mask.tolist() == [0, 0, 0]
        for _ in range(3):
            out = vec.step(np.zeros((3, biped.dof)))
        assert out.dones.all() and out.timeouts.all() and not out.faults.any()
        assert all(env.state.t == 0 for env in vec.envs)
        assert set(out.task_reward) == {"alive", "upright", "command", "action_rate"}
        assert out.terminal_obs.shape == out.obs.shape

    def test_action_shape(self, biped):
        vec = make_envs(biped, EnvConfig(), 2, seed=0)
        vec.reset()
        with pytest.raises(ContractViolation, match="actions"):
            vec.step(np.zeros((3, biped.dof)))

    def test_seeded_randomization(self, biped):
        config = EnvConfig(randomization=RandomizationConfig(enabled=True))
        masses = []
        for _ in range(2):
            vec = make_envs(biped, config, 2, seed=11)
            vec.reset()
            masses.append([env.physics.mass for env in vec.envs])
        assert masses[0] == masses[1]
        assert masses[0][0] != masses[0][1]

    def test_thread_pool_matches_serial(self, biped, rng):
        actions = rng.normal(scale=0.3, size=(10, 2, biped.dof))
        outputs = []
        for workers in (1, 2):
            vec = make_envs(biped, EnvConfig(), 2, seed=3, num_workers=workers)
            vec.reset()
            outputs.append(np.stack([vec.step(a).obs for a in actions]))
        assert np.array_equal(outputs[0], outputs[1])

    def test_set_masked(self, biped, buffer):
        vec = make_envs(biped, EnvConfig(), 2, seed=0, buffer=buffer)
        assert vec.reset()[2].tolist() == [1, 1]
        vec.set_masked(True)
        assert vec.reset()[2].tolist() == [0, 0]


class TestTaskRewards:
    def test_perfect_step(self):
        parts = task_rewards(DOWN, np.array([0.5, 0.0, 0.0]), np.array([0.5, 0.0, 0.0]),
                             np.ones(2), np.ones(2), TaskRewardConfig())
        assert parts == pytest.approx({"alive": 0.2, "upright": 0.3, "command": 1.0, "action_rate": 0.0})

    def test_penalties(self):
        parts = task_rewards(np.array([np.sin(0.5), 0.0, -np.cos(0.5)]), np.zeros(3), np.array([0.25, 0.0, 0.0]),
                             np.array([1.0, 0.0]), np.zeros(2), TaskRewardConfig())
        assert parts["upright"] == pytest.approx(0.3 * np.exp(-1.0))
        assert parts["command"] == pytest.approx(np.exp(-0.5))
        assert parts["action_rate"] == pytest.approx(-0.01)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="unknown observation terms"):
            EnvConfig(obs_terms=["torque"])
        with pytest.raises(ValueError, match="control step"):
            EnvConfig(max_episode_s=0.01)
        with pytest.raises(ValueError, match="multiplier"):
            RandomizationConfig(mass_range=(0.0, 1.0))

    def test_derived_quantities(self):
        config = EnvConfig()
        assert config.max_episode_steps == 500
        assert config.sub_dt == pytest.approx(0.005)


class TestMotions:
    def test_leg_ik_reaches_target(self):
        x, z = np.array([0.1, -0.2, 0.0]), np.array([-0.7, -0.6, -0.5])
        hip, knee = leg_ik(x, z)
        ankle_x = -THIGH * np.sin(hip) - SHIN * np.sin(hip + knee)
        ankle_z = -THIGH * np.cos(hip) - SHIN * np.cos(hip + knee)
        assert np.allclose(ankle_x, x, atol=1e-9) and np.allclose(ankle_z, z, atol=1e-9)
        assert np.all(knee >= 0.0)

    def test_leg_ik_clamps_unreachable(self):
        _, knee = leg_ik(0.0, -5.0)
        assert float(knee) == pytest.approx(0.0, abs=1e-2)

    @pytest.mark.parametrize("kind", list(MotionKind))
    def test_clip_layout(self, kind):
        clip = generate_motion(MotionGeneratorConfig(kind=kind, duration_s=2.0))
        assert clip.poses.shape == (100, 22, 3) and clip.root_translation.shape == (100, 3)
        assert clip.stance.shape == (100, 2) and clip.stance.dtype == bool
        assert np.all(np.isfinite(clip.poses))

    def test_walk_alternates_stance(self):
        clip = generate_motion(MotionGeneratorConfig(duration_s=4.0))
        assert clip.stance.mean(axis=0) == pytest.approx([0.6, 0.6], abs=0.05)
        assert clip.stance.any(axis=1).all()

    def test_save_load(self, tmp_path):
        clip = generate_motion(MotionGeneratorConfig(kind=MotionKind.SQUAT, duration_s=1.0), "squat")
        clip.save(tmp_path / "squat.npz")
        back = type(clip).load(tmp_path / "squat.npz")
        assert back.name == "squat" and back.fps == 50.0
        assert np.array_equal(back.poses, clip.poses) and np.array_equal(back.stance, clip.stance)

    def test_too_short(self):
        with pytest.raises(ConfigError, match="two frames"):
            generate_motion(MotionGeneratorConfig(duration_s=0.01))
