import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from humimic.exceptions import ConfigError, ContractViolation
from humimic.kinematics.tree import bundled_path
from humimic.numerics.gradcheck import finite_difference
from humimic.numerics.tape import Tape
from humimic.shapefit.fitting import (
    PosePair,
    ShapeFitConfig,
    default_pose_pairs,
    fit_objective,
    fit_shape,
    initial_scale,
    keypoint_residuals,
    load_pose_pairs,
)
from humimic.shapefit.skeleton import (
    JOINT_INDEX,
    MIRROR_PERM,
    NUM_BONES,
    NUM_JOINTS,
    ShapeParams,
    human_fk,
    human_fk_raw,
    mirror_pose,
    pose_from_angles,
    rest_keypoints,
    selection_matrix,
    validate_pose,
)


def random_pose(rng, n=None, scale=0.4):
    shape = (NUM_JOINTS, 3) if n is None else (n, NUM_JOINTS, 3)
    return rng.normal(scale=scale, size=shape)


def skeleton_pairs(tree):
    bent = {"left_knee": 0.8, "right_knee": 0.3, "left_hip": -0.5, "right_elbow": -0.7, "left_shoulder": -1.0}
    human = pose_from_angles({name: [0.0, angle, 0.0] for name, angle in bent.items()})
    return [
        PosePair("rest", np.zeros((NUM_JOINTS, 3)), np.zeros(tree.dof)),
        PosePair("bent", human, tree.vector(bent)),
    ]


class TestSkeleton:
    def test_zero_pose_is_rest(self):
        assert np.allclose(human_fk(np.zeros((NUM_JOINTS, 3))).value, rest_keypoints())

    def test_rest_height(self):
        rest = rest_keypoints()
        assert rest[JOINT_INDEX["left_foot"], 2] == pytest.approx(-0.86)
        assert rest[JOINT_INDEX["pelvis"]] == pytest.approx(np.zeros(3))

    def test_global_scale(self, rng):
        pose = random_pose(rng)
        base = human_fk(pose).value
        assert np.allclose(human_fk(pose, ShapeParams(alpha=2.0)).value, 2.0 * base)

    def test_bone_multiplier_stretches_one_segment(self):
        beta = np.ones(NUM_BONES)
        beta[JOINT_INDEX["left_knee"] - 1] = 1.5
        kp = human_fk(np.zeros((NUM_JOINTS, 3)), ShapeParams(beta=beta)).value
        rest = rest_keypoints()
        assert kp[JOINT_INDEX["left_knee"], 2] == pytest.approx(rest[JOINT_INDEX["left_knee"], 2] - 0.2)
        assert np.allclose(kp[JOINT_INDEX["right_knee"]], rest[JOINT_INDEX["right_knee"]])

    def test_batched(self, rng):
        poses = random_pose(rng, 4)
        batch = human_fk(poses).value
        for i in range(4):
            assert np.allclose(batch[i], human_fk(poses[i]).value)

    def test_mirror_pose_is_involution(self, rng):
        pose = random_pose(rng, 3)
        assert np.allclose(mirror_pose(mirror_pose(pose)), pose)

    def test_mirror_commutes_with_fk(self, rng):
        pose = random_pose(rng)
        direct = human_fk(pose).value[MIRROR_PERM] * np.array([1.0, -1.0, 1.0])
        assert np.allclose(human_fk(mirror_pose(pose)).value, direct, atol=1e-12)

    def test_gradients_match_finite_difference(self, rng):
        pose = random_pose(rng)
        alpha0, beta0 = 1.1, rng.uniform(0.8, 1.2, size=NUM_BONES)
        delta0 = rng.normal(scale=0.02, size=(NUM_JOINTS, 3))
        weights = rng.normal(size=(NUM_JOINTS, 3))

        with Tape() as tape:
            beta = tape.variable(beta0)
            delta = tape.variable(delta0)
            loss = (human_fk_raw(pose, alpha0, beta, delta) * weights).sum()
            grads = tape.backward(loss)

        def by_beta(b):
            return float(np.sum(human_fk_raw(pose, alpha0, b, delta0).value * weights))

        def by_delta(d):
            return float(np.sum(human_fk_raw(pose, alpha0, beta0, d).value * weights))

        assert np.allclose(grads[beta], finite_difference(by_beta, beta0), atol=1e-6)
        assert np.allclose(grads[delta], finite_difference(by_delta, delta0), atol=1e-6)

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_non_positive_scale(self, alpha):
        with pytest.raises(ContractViolation, match="alpha"):
            ShapeParams(alpha=alpha)

    def test_non_positive_bone(self):
        beta = np.ones(NUM_BONES)
        beta[3] = 0.0
        with pytest.raises(ContractViolation, match="beta"):
            ShapeParams(beta=beta)

    def test_shape_dict_round_trip(self, rng):
        shape = ShapeParams(1.3, rng.uniform(0.5, 2.0, NUM_BONES), rng.normal(size=(NUM_JOINTS, 3)))
        back = ShapeParams.from_dict(shape.to_dict())
        assert back.alpha == shape.alpha
        assert np.array_equal(back.beta, shape.beta) and np.array_equal(back.delta, shape.delta)

    def test_pose_validation(self):
        with pytest.raises(ContractViolation, match="22"):
            validate_pose(np.zeros((21, 3)))
        pose = np.zeros((NUM_JOINTS, 3))
        pose[4, 1] = 2.0 * np.pi
        with pytest.raises(ContractViolation, match="2\\*pi"):
            validate_pose(pose)
        pose[4, 1] = np.nan
        with pytest.raises(ContractViolation, match="non-finite"):
            validate_pose(pose)

    def test_pose_from_unknown_joint(self):
        with pytest.raises(ContractViolation, match="tail"):
            pose_from_angles({"tail": [0.0, 0.0, 1.0]})

    def test_selection_matrix(self):
        S = selection_matrix(["left_knee", "head"])
        assert S.shape == (2, NUM_JOINTS)
        assert S[0, JOINT_INDEX["left_knee"]] == 1.0 and S.sum() == 2.0
        with pytest.raises(ContractViolation):
            selection_matrix(["left_sole"])


class TestShapeFit:
    def test_identical_skeleton_fits_exactly(self, skeleton):
        pairs = skeleton_pairs(skeleton)
        assert initial_scale(skeleton, pairs) == pytest.approx(1.0)
        result = fit_shape(skeleton, pairs, config=ShapeFitConfig(iterations=20, log_every=5))
        assert result.residual_max < 1e-6
        assert set(result.per_keypoint) == set(skeleton.keypoint_names)

    def test_recovers_global_scale(self, skeleton_factory):
        small = skeleton_factory(0.5)
        pairs = skeleton_pairs(small)
        assert initial_scale(small, pairs) == pytest.approx(0.5)
        result = fit_shape(small, pairs, config=ShapeFitConfig(iterations=50, log_every=10))
        assert result.shape.alpha == pytest.approx(0.5, rel=1e-3)
        assert result.residual_max < 1e-3

    def test_biped_fit_reduces_residual(self, biped):
        pairs = load_pose_pairs(bundled_path("planar_biped_pairs.json"), biped)
        start = keypoint_residuals(biped, pairs, ShapeParams(alpha=initial_scale(biped, pairs))).mean()
        result = fit_shape(biped, pairs, config=ShapeFitConfig(iterations=200, log_every=50))
        assert result.residual_mean < start
        objectives = [value for _, value in result.history]
        assert all(b <= a for a, b in zip(objectives, objectives[1:]))
        assert result.history[-1][0] == 200

    def test_report_layout(self, skeleton):
        result = fit_shape(skeleton, skeleton_pairs(skeleton), config=ShapeFitConfig(iterations=2, log_every=1))
        report = result.report()
        assert {"residual_max_m", "residual_mean_m", "per_keypoint", "history"} <= set(report)
        assert len(report["history"]) == 3

    def test_default_pairs_start_at_rest(self, biped):
        pairs = default_pose_pairs(biped)
        assert pairs[0].name == "rest"
        assert np.array_equal(pairs[0].robot, np.zeros(biped.dof))

    def test_empty_pairs(self, skeleton):
        with pytest.raises(ContractViolation, match="empty"):
            fit_shape(skeleton, [])

    def test_pair_outside_limits(self, skeleton):
        q = np.zeros(skeleton.dof)
        q[0] = 3.0
        with pytest.raises(ConfigError, match="limits"):
            fit_shape(skeleton, [PosePair("bad", np.zeros((NUM_JOINTS, 3)), q)])

    def test_pair_file_validation(self, tmp_path, biped):
        path = tmp_path / "pairs.json"
        path.write_text('{"pairs": "nope"}', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_pose_pairs(path, biped)

    def test_fit_objective_is_weighted_distance_sum(self, biped):
        pairs = load_pose_pairs(bundled_path("planar_biped_pairs.json"), biped)
        shape = ShapeParams(alpha=initial_scale(biped, pairs))
        residuals = keypoint_residuals(biped, pairs, shape)
        expected = sum(w * residuals[p, k] for p in range(len(pairs))
                       for k, w in enumerate(biped.keypoint_weights))
        assert fit_objective(biped, pairs, shape) == pytest.approx(expected)

    @pytest.mark.slow
    def test_scale_is_optimal_for_distance_sum(self, biped):
        pairs = load_pose_pairs(bundled_path("planar_biped_pairs.json"), biped)
        shape = fit_shape(biped, pairs, config=ShapeFitConfig(iterations=2000, log_every=500)).shape
        best = fit_objective(biped, pairs, shape)
        for factor in np.linspace(0.9, 1.1, 41):
            scaled = ShapeParams(shape.alpha * factor, shape.beta, shape.delta)
            assert fit_objective(biped, pairs, scaled) >= best * (1.0 - 1e-3)

    def test_invariant_to_common_rotation(self, biped):
        pairs = load_pose_pairs(bundled_path("planar_biped_pairs.json"), biped)
        R = Rotation.from_rotvec([0.3, -0.2, 0.9])
        rotated = []
        for pair in pairs:
            human = pair.human.copy()
            human[0] = (R * Rotation.from_rotvec(human[0])).as_rotvec()
            rotated.append(PosePair(pair.name, human, pair.robot, base_rotation=R.as_matrix()))
        config = ShapeFitConfig(iterations=60, log_every=20)
        plain = fit_shape(biped, pairs, config=config)
        turned = fit_shape(biped, rotated, config=config)
        assert turned.shape.alpha == pytest.approx(plain.shape.alpha, rel=1e-5)
        assert np.allclose(turned.shape.beta, plain.shape.beta, atol=1e-5)
        assert np.allclose(turned.shape.delta, plain.shape.delta, atol=1e-5)
        assert turned.residual_mean == pytest.approx(plain.residual_mean, abs=1e-7)
