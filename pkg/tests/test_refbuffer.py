import numpy as np
import pytest
from scipy import stats

from humimic.exceptions import ConfigError, ContractViolation
from humimic.postprocess.dataset import read_manifest
from humimic.postprocess.sequence import MotionSequence, identity_orientations, integrate_root
from humimic.refbuffer.buffer import CommandRanges, RefBufferConfig, RefDataBuffer


def synthetic_sequence(n=40, fps=10.0, dof=3, cycle=None, lin_vel=None, ang_vel=None, name="synthetic", seed=0):
    """Augmented sequence with chosen velocity channels and recognisable joint values."""
    rng = np.random.default_rng(seed)
    phase = np.zeros((n, 4))
    phase[:, 0::2] = 1.0
    return MotionSequence(
        fps=fps,
        joints=np.arange(n)[:, None] + np.zeros((n, dof)),
        root_translation=np.tile([0.0, 0.0, 0.7], (n, 1)),
        root_orientation=identity_orientations(n),
        name=name,
        lin_vel=np.zeros((n, 3)) if lin_vel is None else lin_vel,
        ang_vel=np.zeros((n, 3)) if ang_vel is None else ang_vel,
        gravity=np.tile([0.0, 0.0, -1.0], (n, 1)),
        height=np.full(n, 0.7),
        joint_vel=rng.normal(size=(n, dof)),
        contacts=np.ones((n, 2)),
        phase=phase,
        cycle=cycle,
    )


class TestLookup:
    def test_first_step_is_start_frame(self):
        buf = RefDataBuffer([synthetic_sequence()])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=7)
        state = buf.query(0, 0)
        assert state.mask == 1 and state.frame == 7
        assert np.array_equal(state.channels["joints"], np.full(3, 7.0))

    def test_cyclic_index(self):
        buf = RefDataBuffer([synthetic_sequence(cycle=(10, 30))])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        assert buf.frame_index(0, 55) == 15
        assert buf.frame_index(0, 29) == 29
        assert buf.frame_index(0, 30) == 10

    def test_cyclic_query_is_periodic(self):
        buf = RefDataBuffer([synthetic_sequence(cycle=(10, 30))])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=3)
        for t in range(10, 80, 7):
            a, b = buf.query(0, t), buf.query(0, t + 20)
            assert a.frame == b.frame
            assert all(np.array_equal(a.channels[k], b.channels[k]) for k in a.channels)

    def test_query_is_idempotent(self):
        buf = RefDataBuffer([synthetic_sequence()])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=2)
        a, b = buf.query(0, 5), buf.query(0, 5)
        assert a.frame == b.frame and np.array_equal(a.base, b.base) and np.array_equal(a.joint, b.joint)

    def test_mask_past_end(self):
        buf = RefDataBuffer([synthetic_sequence(n=20)])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=15)
        assert buf.available(0, 4) == 1
        assert buf.available(0, 5) == 0
        state = buf.query(0, 5)
        assert state.frame is None
        assert all(not np.any(value) for value in state.channels.values())
        obs, mask = buf.reference_observation(0, 5)
        assert mask == 0 and obs.shape == (buf.observation_dim(),) and not obs.any()

    def test_unassigned_env(self):
        buf = RefDataBuffer([synthetic_sequence()], num_envs=2)
        with pytest.raises(ContractViolation, match="reset"):
            buf.query(1, 0)

    def test_negative_step(self):
        buf = RefDataBuffer([synthetic_sequence()])
        buf.reset_env(0, np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            buf.frame_index(0, -1)


class TestObservation:
    def test_full_spec_length(self, buffer):
        buffer.reset_env(0, np.random.default_rng(0))
        obs, mask = buffer.reference_observation(0, 0)
        assert mask == 1
        assert len(obs) == sum(buffer.term_dims[t] for t in buffer.config.terms)

    def test_subset_matches_query(self, buffer):
        buffer.reset_env(0, np.random.default_rng(0), sequence=0, start=4)
        state = buffer.query(0, 3)
        obs, _ = buffer.reference_observation(0, 3, ["phase", "height", "joints"])
        dof = buffer.term_dims["joints"]
        assert np.array_equal(obs[:4], state.channels["phase"])
        assert obs[4] == state.channels["height"][0]
        assert np.array_equal(obs[5:5 + dof], state.channels["joints"])

    def test_unknown_term(self, buffer):
        buffer.reset_env(0, np.random.default_rng(0))
        with pytest.raises(ConfigError, match="torque"):
            buffer.reference_observation(0, 0, ["torque"])

    def test_config_rejects_unknown_terms(self):
        with pytest.raises(ValueError):
            RefBufferConfig(terms=["joints", "torque"])
        with pytest.raises(ValueError):
            RefBufferConfig(terms=["joints", "joints"])

    def test_observation_noise(self, processed_sequences):
        buf = RefDataBuffer(processed_sequences, config=RefBufferConfig(observation_noise=0.05))
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        clean, _ = buf.reference_observation(0, 1)
        noisy, _ = buf.reference_observation(0, 1, rng=np.random.default_rng(1))
        gap = np.abs(noisy - clean)
        assert gap.max() <= 0.05 and gap.max() > 0


class TestCommands:
    def test_reference_velocity(self):
        lin = np.tile([0.4, -0.1, 0.0], (40, 1))
        ang = np.tile([0.0, 0.0, 0.3], (40, 1))
        buf = RefDataBuffer([synthetic_sequence(lin_vel=lin, ang_vel=ang)])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        assert np.array_equal(buf.command_from_reference(0, 5, np.random.default_rng(0)), [0.4, -0.1, 0.3])

    def test_sampled_when_unavailable(self):
        buf = RefDataBuffer([synthetic_sequence(n=10)])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=9)
        rng = np.random.default_rng(3)
        draws = np.stack([buf.command_from_reference(0, 5, rng) for _ in range(10_000)])
        assert np.all(draws >= -1.0) and np.all(draws <= 1.0)
        for column in draws.T:
            assert stats.kstest(column, stats.uniform(loc=-1.0, scale=2.0).cdf).pvalue > 0.01

    def test_custom_ranges(self):
        config = RefBufferConfig(commands=CommandRanges(lin_vel_x=(0.5, 0.5), lin_vel_y=(0.0, 0.0),
                                                        ang_vel_z=(-0.2, 0.2)))
        buf = RefDataBuffer([synthetic_sequence(n=10)], config=config)
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=9)
        command = buf.command_from_reference(0, 3, np.random.default_rng(0))
        assert command[0] == 0.5 and command[1] == 0.0 and abs(command[2]) <= 0.2

    def test_ranges_ordered(self):
        with pytest.raises(ValueError):
            CommandRanges(lin_vel_x=(1.0, -1.0))


class TestIntegration:
    def test_constant_forward_velocity(self):
        lin = np.tile([1.0, 0.0, 0.0], (40, 1))
        buf = RefDataBuffer([synthetic_sequence(fps=10.0, lin_vel=lin)])
        buf.reset_env(0, np.random.default_rng(0), spawn_position=(2.0, -1.0), sequence=0, start=0)
        position, rotation = buf.integrate_absolute(0, 10)
        assert np.allclose(position, [3.0, -1.0, 0.7])
        assert np.allclose(rotation, np.eye(3))

    def test_spawn_yaw_turns_heading(self):
        lin = np.tile([1.0, 0.0, 0.0], (40, 1))
        buf = RefDataBuffer([synthetic_sequence(fps=10.0, lin_vel=lin)])
        buf.reset_env(0, np.random.default_rng(0), spawn_yaw=np.pi / 2, sequence=0, start=0)
        position, _ = buf.integrate_absolute(0, 10)
        assert np.allclose(position, [0.0, 1.0, 0.7])

    def test_zero_velocity_stays_at_anchor(self):
        buf = RefDataBuffer([synthetic_sequence()])
        assignment = buf.reset_env(0, np.random.default_rng(0), spawn_position=(0.5, 0.5), spawn_yaw=0.3)
        for t in (0, 5, 60):
            position, rotation = buf.integrate_absolute(0, t)
            assert np.allclose(position, assignment.anchor_position)
            assert np.allclose(rotation, assignment.anchor_rotation)

    def test_matches_full_reintegration(self, rng):
        n = 60
        lin = rng.normal(size=(n, 3))
        ang = rng.normal(scale=0.5, size=(n, 3))
        buf = RefDataBuffer([synthetic_sequence(n=n, lin_vel=lin, ang_vel=ang)])
        a = buf.reset_env(0, rng, spawn_position=(1.0, 2.0), spawn_yaw=-0.4, sequence=0, start=0)
        positions, rotations = integrate_root(lin, ang, 0.1, a.anchor_position, a.anchor_rotation)
        for t in range(n):
            position, rotation = buf.integrate_absolute(0, t)
            assert np.allclose(position, positions[t], atol=1e-9)
            assert np.allclose(rotation, rotations[t], atol=1e-9)

    def test_monotone_sweep_is_linear(self):
        buf = RefDataBuffer([synthetic_sequence(n=50, cycle=(10, 40))])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        for t in range(200):
            buf.integrate_absolute(0, t)
        assert buf.integration_work[0] == 199
        assert buf.cached_step(0) == 199

    def test_backwards_query_restarts(self):
        buf = RefDataBuffer([synthetic_sequence()])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        buf.integrate_absolute(0, 30)
        buf.integrate_absolute(0, 10)
        assert buf.integration_work[0] == 40

    def test_reset_invalidates_cache(self):
        buf = RefDataBuffer([synthetic_sequence()])
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        buf.integrate_absolute(0, 12)
        buf.reset_env(0, np.random.default_rng(0), sequence=0, start=0)
        assert buf.cached_step(0) is None


class TestAssignment:
    def test_single_sequence(self):
        buf = RefDataBuffer([synthetic_sequence()])
        rng = np.random.default_rng(0)
        assert {buf.reset_env(0, rng).sequence for _ in range(50)} == {0}

    def test_seeded_assignments(self, processed_sequences):
        buf = RefDataBuffer(processed_sequences)
        a = [buf.reset_env(0, np.random.default_rng(9)) for _ in range(3)]
        b = [buf.reset_env(0, np.random.default_rng(9)) for _ in range(3)]
        assert [(x.sequence, x.start) for x in a] == [(y.sequence, y.start) for y in b]

    def test_uniform_sequence_choice(self):
        buf = RefDataBuffer([synthetic_sequence(name=f"s{i}", seed=i) for i in range(4)])
        rng = np.random.default_rng(0)
        counts = np.bincount([buf.reset_env(0, rng).sequence for _ in range(10_000)], minlength=4)
        assert np.all(np.abs(counts / 10_000 - 0.25) < 0.02)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_start_stays_inside_cycle_end(self):
        buf = RefDataBuffer([synthetic_sequence(n=40, cycle=(10, 30))])
        rng = np.random.default_rng(0)
        assert max(buf.reset_env(0, rng).start for _ in range(500)) < 30

    def test_needs_sequences(self):
        with pytest.raises(ContractViolation):
            RefDataBuffer([])

    def test_needs_augmented_sequences(self, processed_walk):
        with pytest.raises(ContractViolation, match="augmented"):
            RefDataBuffer([processed_walk.strip()])


class TestInventory:
    def test_from_directory(self, dataset_dir):
        buf = RefDataBuffer.from_directory(dataset_dir, num_envs=3)
        assert buf.num_sequences == 2 and buf.num_envs == 3
        assert buf.total_frames == read_manifest(dataset_dir).total_frames

    def test_stats(self, buffer):
        table = buffer.stats()
        assert list(table["name"]) == ["walk", "squat"]
        assert {"frames", "fps", "duration_s", "cycle_start", "cycle_end", "channels"} <= set(table.columns)
        assert "phase[4]" in table.loc[0, "channels"]
