import numpy as np
import pytest

from humimic.exceptions import ConfigError, ContractViolation
from humimic.rewards import (
    JOINT_LEVELS,
    VELOCITY_LEVELS,
    CurriculumTerm,
    CurriculumTracker,
    ImitationReward,
    RewardConfig,
    RewardTermConfig,
    TerminationSpec,
    ToddlerConfig,
    contact_match_reward,
    curriculum_update,
    exp_tracking_reward,
    gravity_angle,
    imitation_termination,
    l2_deviation_reward,
    l2_rate_reward,
    make_tracker,
    task_termination,
    toddler_anneal,
    toddler_force,
    tracking_index,
)

UP = np.array([0.0, 0.0, -1.0])


def tilted(angle):
    return np.array([0.0, -np.sin(angle), -np.cos(angle)])


class TestKernels:
    def test_exp_at_reference(self):
        assert exp_tracking_reward([1.0, 2.0], [1.0, 2.0], 3.0, 0.4) == pytest.approx(3.0)

    def test_exp_one_sigma_away(self):
        assert exp_tracking_reward([0.3, 0.0], [0.0, 0.0], 2.0, 0.3) == pytest.approx(2.0 * np.exp(-0.5))

    def test_exp_matches_formula(self, rng):
        s, s_ref = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        expected = [1.5 * np.exp(-np.sum((a - b) ** 2) / (2 * 0.45 ** 2)) for a, b in zip(s, s_ref)]
        assert np.allclose(exp_tracking_reward(s, s_ref, 1.5, 0.45), expected)

    def test_exp_rejects_bad_input(self):
        with pytest.raises(ContractViolation, match="sigma"):
            exp_tracking_reward([0.0], [0.0], 1.0, 0.0)
        with pytest.raises(ContractViolation, match="shape"):
            exp_tracking_reward([0.0, 1.0], [0.0], 1.0, 0.5)

    def test_l2_terms(self, rng):
        assert l2_deviation_reward([1.0, 1.0], [1.0, 1.0], 5.0) == 0.0
        assert l2_deviation_reward([1.0, 0.0], [0.0, 0.0], 2.0) == pytest.approx(-2.0)
        a, b = rng.normal(size=6), rng.normal(size=6)
        expected = -0.7 * sum((x - y) ** 2 for x, y in zip(a, b))
        assert l2_rate_reward(a, b, 0.7) == pytest.approx(expected)

    def test_contact_match(self, rng):
        assert contact_match_reward([1, 0], [1, 0], 0.5) == pytest.approx(1.0)
        assert contact_match_reward([1, 1], [1, 0], 0.5) == pytest.approx(0.5)
        c, r = rng.random((50, 2)) > 0.5, rng.random((50, 2)) > 0.5
        expected = [0.3 * sum(int(x == y) for x, y in zip(row_c, row_r)) for row_c, row_r in zip(c, r)]
        assert np.allclose(contact_match_reward(c, r, 0.3), expected)

    def test_tracking_index(self):
        assert tracking_index(np.zeros(3)) == 1.0
        assert tracking_index([0.4, 0.0]) == pytest.approx(np.exp(-1.0))
        assert np.all(tracking_index(np.full((4, 2), 10.0)) < 1e-6)


class TestCurriculum:
    def test_default_levels(self):
        assert JOINT_LEVELS == (0.5, 0.45, 0.42, 0.4, 0.35)
        assert VELOCITY_LEVELS == (0.75, 0.6, 0.5, 0.45, 0.4)

    def test_advances_after_full_window(self):
        term = CurriculumTerm("joint_pos", 1.0, JOINT_LEVELS, dwell=4)
        assert curriculum_update(term, [0.9] * 4).level == 1
        assert curriculum_update(term, [0.9] * 3).level == 0

    def test_one_dip_blocks(self):
        term = CurriculumTerm("joint_pos", 1.0, JOINT_LEVELS, dwell=4)
        assert curriculum_update(term, [0.9, 0.5, 0.9, 0.9]).level == 0

    def test_stays_at_last_level(self):
        term = CurriculumTerm("lin_vel", 1.0, VELOCITY_LEVELS, level=4, dwell=1)
        assert curriculum_update(term, [1.0]) == term
        assert term.sigma == 0.4

    def test_tracker_matches_scripted_replay(self, rng):
        dwell, threshold = 3, 0.7
        stream = rng.choice([0.5, 0.8, 0.9], size=80, p=[0.15, 0.45, 0.4])
        tracker = CurriculumTracker({"joint_pos": CurriculumTerm("joint_pos", 1.0, JOINT_LEVELS, 0, threshold, dwell)})

        level, streak = 0, 0
        for value in stream:
            streak = streak + 1 if value >= threshold else 0
            if streak >= dwell and level < len(JOINT_LEVELS) - 1:
                level, streak = level + 1, 0
            assert tracker.record({"joint_pos": value}) == {"joint_pos": level}
        assert len(tracker.history) == 80

    def test_tracker_skips_nan_and_unknown(self):
        tracker = CurriculumTracker({"a": CurriculumTerm("a", 1.0, (0.5, 0.4), dwell=1)})
        assert tracker.record({"a": float("nan"), "b": 1.0}) == {"a": 0}
        assert tracker.record({"a": 1.0}) == {"a": 1}

    @pytest.mark.parametrize("levels", [(), (0.5, 0.5), (0.4, 0.5), (0.5, -0.1)])
    def test_level_validation(self, levels):
        with pytest.raises(ContractViolation):
            CurriculumTerm("x", 1.0, levels)


class TestImitationReward:
    def state(self):
        return {
            "joints": np.array([0.1, -0.2]),
            "joint_vel": np.array([1.0, 0.5]),
            "lin_vel": np.array([0.8, 0.0, 0.0]),
            "ang_vel": np.zeros(3),
            "height": np.array([0.75]),
            "gravity": UP.copy(),
            "contacts": np.array([1.0, 0.0]),
        }

    def test_perfect_tracking(self):
        reward = ImitationReward()
        terms = reward(self.state(), self.state(), 1)
        assert terms["joint_pos"] == pytest.approx(1.0)
        assert terms["ang_vel"] == pytest.approx(0.5)
        assert terms["joint_vel"] == 0.0 and terms["joint_pos_l2"] == 0.0
        assert terms["contacts"] == pytest.approx(0.4)

    def test_no_reference_zeroes_every_term(self):
        terms = ImitationReward()(self.state(), self.state(), 0)
        assert set(terms.values()) == {0.0}

    def test_sigma_follows_curriculum(self):
        reward = ImitationReward(RewardConfig(curriculum_dwell=1))
        ref = self.state()
        ref["joints"] = ref["joints"] + [0.5, 0.0]
        before = reward(self.state(), ref, 1)["joint_pos"]
        reward.tracker.record({"joint_pos": 1.0})
        assert reward.sigma("joint_pos") == 0.45
        after = reward(self.state(), ref, 1)["joint_pos"]
        assert after == pytest.approx(np.exp(-0.25 / (2 * 0.45 ** 2)))
        assert after < before

    def test_missing_channel(self):
        state = self.state()
        del state["height"]
        with pytest.raises(ConfigError, match="height"):
            ImitationReward()(state, self.state(), 1)

    def test_normalized_uses_referenced_steps(self):
        reward = ImitationReward()
        per_term = {"joint_pos": np.array([0.8, 0.2, 0.6]), "lin_vel": np.array([1.0, 0.0, 0.5]),
                    "ang_vel": np.array([0.5, 0.5, 0.5])}
        out = reward.normalized(per_term, np.array([1, 0, 1]))
        assert out == pytest.approx({"joint_pos": 0.7, "lin_vel": 0.75, "ang_vel": 1.0})
        assert np.isnan(reward.normalized(per_term, np.zeros(3))["joint_pos"])

    def test_tracker_covers_weighted_curriculum_terms(self):
        assert set(make_tracker(RewardConfig()).terms) == {"joint_pos", "lin_vel", "ang_vel"}

    def test_term_validation(self):
        with pytest.raises(ValueError, match="unknown channel"):
            RewardTermConfig(channel="torque")
        with pytest.raises(ValueError, match="curriculum"):
            RewardTermConfig(channel="joints", kind="l2", levels=[0.5, 0.4])


class TestToddler:
    config = ToddlerConfig()

    def test_zero_at_threshold(self):
        assert toddler_force(0.75 - 0.05, 0.0, 0.75, self.config) == 0.0

    def test_zero_above_threshold(self):
        assert toddler_force(0.8, -5.0, 0.75, self.config) == 0.0

    def test_travel_clamp_and_force_cap(self):
        sag = 0.7 - 2 * self.config.max_compression
        assert toddler_force(sag, 0.0, 0.75, self.config) == pytest.approx(2000.0 * 0.15)
        stiff = ToddlerConfig(stiffness=6000.0, max_compression=0.1)
        assert toddler_force(0.5, -10.0, 0.75, stiff) == pytest.approx(730.0)

    def test_damping_opposes_motion(self):
        falling = toddler_force(0.65, -0.2, 0.75, self.config)
        rising = toddler_force(0.65, 0.2, 0.75, self.config)
        assert falling - rising == pytest.approx(2 * 100.0 * 0.2)

    def test_anneal(self):
        assert toddler_anneal(self.config, 0.0) == self.config
        gone = toddler_anneal(self.config, 1.0)
        for h in np.linspace(0.3, 0.7, 5):
            assert toddler_force(h, -1.0, 0.75, gone) == 0.0
        half = toddler_anneal(self.config, 0.5)
        full = toddler_force(0.65, -0.1, 0.75, self.config)
        assert toddler_force(0.65, -0.1, 0.75, half) == pytest.approx(full / 2)

    def test_cap_validation(self):
        with pytest.raises(ValueError, match="max_force"):
            ToddlerConfig(stiffness=10000.0)


class TestTermination:
    spec = TerminationSpec()

    def test_on_reference(self):
        assert not imitation_termination(0.75, UP, 0.75, UP, 1, self.spec)

    def test_height_gap(self):
        assert imitation_termination(0.75, UP, 1.25, UP, 1, self.spec)
        assert not imitation_termination(0.75, UP, 1.25, UP, 0, self.spec)

    def test_decision_boundary(self):
        for gap in np.linspace(0.0, 0.6, 25):
            expected = gap > self.spec.max_height_deviation + 1e-9
            if abs(gap - self.spec.max_height_deviation) < 1e-9:
                continue
            assert imitation_termination(0.75, UP, 0.75 + gap, UP, 1, self.spec) == expected
        for angle in np.linspace(0.0, 0.9, 19):
            if abs(angle - self.spec.max_gravity_deviation) < 1e-9:
                continue
            expected = angle > self.spec.max_gravity_deviation
            assert imitation_termination(0.75, UP, 0.75, tilted(angle), 1, self.spec) == expected

    def test_task_checks_apply_without_reference(self):
        assert imitation_termination(0.2, UP, 0.75, UP, 0, self.spec)
        assert task_termination(0.75, tilted(1.2), self.spec)
        assert not task_termination(0.75, tilted(0.8), self.spec)

    def test_gravity_angle(self):
        assert gravity_angle(UP, UP) == pytest.approx(0.0, abs=1e-7)
        assert gravity_angle(UP, -UP) == pytest.approx(np.pi)
        assert gravity_angle(tilted(0.3), UP) == pytest.approx(0.3)
