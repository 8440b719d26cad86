import numpy as np
import pytest
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from humimic.env.motions import MotionGeneratorConfig, generate_motion
from humimic.exceptions import ContractViolation
from humimic.postprocess.augment import ContactConfig, augment_references, detect_contacts, encode_phase
from humimic.postprocess.cycles import extract_cycle, extract_cycle_bruteforce, min_separation
from humimic.postprocess.filters import CausalFilter262, FilterConfig, butterworth_lowpass, causal_ma_262
from humimic.postprocess.pipeline import PostprocessConfig, process_motion
from humimic.postprocess.resample import resample
from humimic.postprocess.sequence import MotionSequence, identity_orientations, integrate_root

from conftest import biped_sequence


def still_sequence(tree, n=20, fps=50.0, height=0.8):
    translation = np.tile([0.0, 0.0, height], (n, 1))
    return MotionSequence(fps, np.zeros((n, tree.dof)), translation, identity_orientations(n))


def amplitude(y, freq, fps):
    """Amplitude of the ``freq`` component over a whole number of periods."""
    t = np.arange(len(y)) / fps
    c = 2.0 * np.mean(y * np.cos(2 * np.pi * freq * t))
    s = 2.0 * np.mean(y * np.sin(2 * np.pi * freq * t))
    return np.hypot(c, s)


class TestMotionSequence:
    def test_channel_length_mismatch(self):
        with pytest.raises(ContractViolation, match="lin_vel"):
            MotionSequence(50.0, np.zeros((5, 2)), np.zeros((5, 3)), identity_orientations(5),
                           lin_vel=np.zeros((4, 3)))

    def test_phase_on_unit_circle(self):
        with pytest.raises(ContractViolation, match="unit circle"):
            MotionSequence(50.0, np.zeros((5, 2)), np.zeros((5, 3)), identity_orientations(5),
                           phase=np.ones((5, 2)))

    @pytest.mark.parametrize("cycle", [(3, 2), (0, 10), (0, 1), (-1, 5)])
    def test_invalid_cycle(self, cycle):
        with pytest.raises(ContractViolation, match="cycle"):
            MotionSequence(50.0, np.zeros((10, 2)), np.zeros((10, 3)), identity_orientations(10), cycle=cycle)

    def test_strip_drops_augmentation(self, processed_walk):
        stripped = processed_walk.strip()
        assert not stripped.augmented and stripped.cycle is None
        assert np.array_equal(stripped.joints, processed_walk.joints)

    def test_unknown_channel(self, processed_walk):
        with pytest.raises(ContractViolation, match="unknown channel"):
            processed_walk.channel("torque")

    def test_integration_inverts_backward_differences(self, biped):
        n, fps = 40, 50.0
        t = np.arange(n) / fps
        translation = np.stack([0.7 * t, 0.2 * np.sin(t), 0.8 + 0.01 * t], axis=1)
        rotations = Rotation.from_euler("ZYX", np.stack([0.5 * t, 0.05 * np.sin(3 * t), np.zeros(n)], axis=1))
        seq = augment_references(
            MotionSequence(fps, np.zeros((n, biped.dof)), translation, rotations.as_quat()), biped
        )
        positions, mats = integrate_root(seq.lin_vel, seq.ang_vel, seq.dt, translation[0], rotations[0].as_matrix())
        assert np.allclose(positions, translation, atol=1e-9)
        assert np.allclose(mats, rotations.as_matrix(), atol=1e-9)


class TestResample:
    def test_same_rate_is_identity(self, biped):
        seq = still_sequence(biped)
        out = resample(seq, 50.0)
        assert out.num_frames == seq.num_frames
        assert np.array_equal(out.joints, seq.joints)

    def test_constant_stays_constant(self, biped):
        seq = still_sequence(biped, n=31, fps=30.0)
        out = resample(seq, 50.0)
        assert out.num_frames == 51
        assert np.allclose(out.root_translation, [0.0, 0.0, 0.8])

    def test_ramp_midpoints(self):
        n = 11
        ramp = np.arange(n, dtype=float)[:, None]
        seq = MotionSequence(30.0, ramp, np.zeros((n, 3)), identity_orientations(n))
        out = resample(seq, 60.0)
        assert out.num_frames == 2 * n - 1
        assert np.allclose(out.joints[1::2, 0], np.arange(n - 1) + 0.5)

    def test_orientation_slerp(self):
        n = 3
        quats = Rotation.from_euler("z", [0.0, 0.4, 0.8]).as_quat()
        seq = MotionSequence(10.0, np.zeros((n, 1)), np.zeros((n, 3)), quats)
        out = resample(seq, 20.0)
        yaw = Rotation.from_quat(out.root_orientation).as_euler("ZYX")[:, 0]
        assert np.allclose(yaw, [0.0, 0.2, 0.4, 0.6, 0.8])

    def test_bad_arguments(self, biped):
        with pytest.raises(ContractViolation, match="positive"):
            resample(still_sequence(biped), 0.0)
        with pytest.raises(ContractViolation, match="two frames"):
            resample(still_sequence(biped, n=1), 30.0)


class TestFilters:
    def test_unit_dc_gain(self):
        x = np.full((100, 3), 2.5)
        assert np.allclose(butterworth_lowpass(x, FilterConfig()), 2.5)

    def test_single_pass_gain_at_cutoff(self):
        config = FilterConfig(cutoff_ratio=0.04)
        fps = config.target_fps
        t = np.arange(2000) / fps
        y = butterworth_lowpass(np.sin(2 * np.pi * config.cutoff * t), config, zero_phase=False)
        assert amplitude(y[1000:], config.cutoff, fps) == pytest.approx(1 / np.sqrt(2), rel=0.05)

    def test_stopband(self):
        config = FilterConfig(cutoff_ratio=0.04)
        fps = config.target_fps
        t = np.arange(2000) / fps
        freq = 5.0 * config.cutoff
        y = butterworth_lowpass(np.sin(2 * np.pi * freq * t), config, zero_phase=False)
        assert amplitude(y[1000:], freq, fps) < 0.1

    def test_too_short(self):
        with pytest.raises(ContractViolation, match="too short"):
            butterworth_lowpass(np.zeros(2), FilterConfig(order=2))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            FilterConfig(cutoff_ratio=0.6)
        with pytest.raises(ValidationError):
            FilterConfig(causal_weights=(0.5, 0.5, 0.5))

    def test_causal_impulse(self):
        x = np.zeros(8)
        x[3] = 10.0
        y = causal_ma_262(x)
        assert np.allclose(y[3:6], [2.0, 6.0, 2.0])
        assert np.allclose(y[[0, 1, 2, 6, 7]], 0.0)

    def test_causal_constant(self):
        assert np.allclose(causal_ma_262(np.full(6, 4.0)), 4.0)

    def test_causal_matches_convolution(self, rng):
        x = rng.normal(size=50)
        expected = np.convolve(x, [0.2, 0.6, 0.2][::-1], mode="full")[: len(x)]
        assert np.allclose(causal_ma_262(x)[2:], expected[2:])

    def test_streaming_matches_batch(self, rng):
        x = rng.normal(size=(30, 4))
        stream = CausalFilter262()
        out = np.stack([stream(sample) for sample in x])
        assert np.allclose(out, causal_ma_262(x))
        stream.reset()
        assert np.allclose(stream(x[5]), x[5])


class TestAugment:
    def test_stationary(self, biped):
        seq = augment_references(still_sequence(biped), biped)
        assert np.allclose(seq.lin_vel, 0.0) and np.allclose(seq.ang_vel, 0.0)
        assert np.allclose(seq.gravity, [0.0, 0.0, -1.0])
        assert np.allclose(seq.height, 0.8)
        assert np.all(seq.contacts == 1.0)

    def test_forward_velocity_in_body_frame(self, biped):
        n, fps, yaw = 25, 50.0, 0.7
        heading = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        translation = np.arange(n)[:, None] / fps * heading + [0.0, 0.0, 0.8]
        quats = np.tile(Rotation.from_euler("z", yaw).as_quat(), (n, 1))
        seq = augment_references(MotionSequence(fps, np.zeros((n, biped.dof)), translation, quats), biped)
        assert np.allclose(seq.lin_vel, [1.0, 0.0, 0.0])

    def test_yaw_rate(self, biped):
        n, fps, omega = 30, 50.0, 0.9
        quats = Rotation.from_euler("z", omega * np.arange(n) / fps).as_quat()
        seq = augment_references(
            MotionSequence(fps, np.zeros((n, biped.dof)), np.tile([0.0, 0.0, 0.8], (n, 1)), quats), biped
        )
        assert np.allclose(seq.ang_vel, [0.0, 0.0, omega], atol=1e-9)

    def test_tilted_gravity(self, biped):
        n = 5
        quats = np.tile(Rotation.from_euler("y", 0.3).as_quat(), (n, 1))
        seq = augment_references(
            MotionSequence(50.0, np.zeros((n, biped.dof)), np.tile([0.0, 0.0, 0.8], (n, 1)), quats), biped
        )
        assert np.allclose(seq.gravity, [np.sin(0.3), 0.0, -np.cos(0.3)])

    def test_needs_three_frames(self, biped):
        with pytest.raises(ContractViolation, match="three"):
            augment_references(still_sequence(biped, n=2), biped)

    def test_dof_mismatch(self, arm, biped):
        with pytest.raises(ContractViolation, match="joints"):
            augment_references(still_sequence(arm), biped)

    def test_swinging_foot_is_not_in_contact(self, biped):
        n, fps = 20, 50.0
        translation = np.stack([np.arange(n) / fps, np.zeros(n), np.full(n, 0.8)], axis=1)
        seq = MotionSequence(fps, np.zeros((n, biped.dof)), translation, identity_orientations(n))
        flags = detect_contacts(seq, biped, velocity_threshold=0.05)
        assert not flags.any()

    def test_contacts_follow_known_stance(self, skeleton):
        config = MotionGeneratorConfig(duration_s=4.0)
        clip = generate_motion(config, "walk")
        seq = biped_sequence(skeleton, duration_s=4.0)
        flags = detect_contacts(seq, skeleton, 0.05, height_margin=0.05)
        agreement = np.mean(flags == clip.stance)
        assert agreement >= 0.95

    def test_phase_single_segment(self):
        phase = encode_phase(np.ones(8, dtype=bool))
        angles = np.arctan2(phase[:, 0, 1], phase[:, 0, 0])
        assert np.allclose(angles, np.pi * np.arange(8) / 8)

    def test_phase_alternating_segments(self):
        flags = np.array([1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1], dtype=bool)
        phase = encode_phase(flags)
        assert np.allclose(np.sum(phase ** 2, axis=-1), 1.0)
        angles = np.unwrap(np.arctan2(phase[:, 0, 1], phase[:, 0, 0]))
        assert np.allclose(np.diff(angles[:4]), np.pi / 4)
        assert np.allclose(np.diff(angles[4:8]), np.pi / 4)
        assert angles[4] == pytest.approx(np.pi)

    def test_phase_shape(self):
        assert encode_phase(np.zeros((5, 2), dtype=bool)).shape == (5, 2, 2)


class TestCycles:
    def test_three_periods(self):
        k = np.arange(150)
        joints = np.stack([np.sin(2 * np.pi * k / 50), np.cos(2 * np.pi * k / 50)], axis=1)
        i, j = extract_cycle(joints, 1e-6)
        assert (j - i) % 50 == 0
        assert np.linalg.norm(joints[i] - joints[j]) <= 1e-6
        assert (i, j) == (0, 50)

    def test_monotone_ramp(self):
        assert extract_cycle(np.linspace(0, 10, 40)[:, None], 0.1) is None

    def test_close_repeats_are_pruned(self):
        joints = np.linspace(0, 10, 40)[:, None]
        joints[6] = joints[5]
        joints[39] = joints[33]
        assert extract_cycle(joints, 1e-9) is None
        assert extract_cycle_bruteforce(joints, 1e-9) is None
        joints[39] = joints[31]
        assert extract_cycle(joints, 1e-9) == (31, 39)

    def test_constant(self):
        n = 23
        assert extract_cycle(np.ones((n, 3)), 0.01) == (0, min_separation(n))

    def test_matches_bruteforce(self, rng):
        for _ in range(5):
            walk = np.cumsum(rng.normal(scale=0.2, size=(60, 3)), axis=0)
            assert extract_cycle(walk, 0.4) == extract_cycle_bruteforce(walk, 0.4)

    def test_bad_arguments(self):
        with pytest.raises(ContractViolation, match="positive"):
            extract_cycle(np.zeros((10, 2)), 0.0)
        with pytest.raises(ContractViolation, match="five"):
            extract_cycle(np.zeros((4, 2)), 0.1)

    def test_min_separation(self):
        assert min_separation(10) == 2
        assert min_separation(11) == 3
        assert min_separation(1) == 1


class TestPipeline:
    def test_processed_walk(self, biped, processed_walk):
        assert processed_walk.fps == 50.0
        assert processed_walk.augmented
        assert processed_walk.cycle is not None
        i, j = processed_walk.cycle
        assert j - i >= 0.2 * processed_walk.num_frames
        assert np.linalg.norm(processed_walk.joints[i] - processed_walk.joints[j]) <= 0.15
        assert np.all(processed_walk.joints >= biped.lower) and np.all(processed_walk.joints <= biped.upper)
        assert processed_walk.phase.shape == (processed_walk.num_frames, 4)

    def test_rate_conversion(self, biped):
        seq = biped_sequence(biped, duration_s=2.0, fps=30.0)
        out = process_motion(seq, biped, PostprocessConfig())
        assert out.fps == 50.0
        assert out.num_frames == int(np.floor((seq.num_frames - 1) / 30.0 * 50.0 + 1e-9)) + 1

    def test_unsmoothed_keeps_joints(self, biped):
        seq = biped_sequence(biped, duration_s=1.0)
        out = process_motion(seq, biped, PostprocessConfig(smooth=False))
        assert np.allclose(out.joints, seq.joints)

    def test_contact_config(self):
        with pytest.raises(ValidationError):
            ContactConfig(velocity_threshold=0.0)
