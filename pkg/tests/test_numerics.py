"""Differentiation tape, optimizers and finite-difference oracle."""

import numpy as np
import pytest

from scipy.spatial.transform import Rotation

from humimic.exceptions import ContractViolation
from humimic.numerics import (
    Algorithm,
    Optimizer,
    OptimizerConfig,
    Tape,
    constant,
    finite_difference,
    ops,
    optimizer_step,
    relative_error,
)
from humimic.numerics.linalg import rotvec_matrix
from humimic.numerics.nn import Linear, Parameter, RMSNorm, TransformerEncoder


def _grad(f, x):
    with Tape() as tape:
        leaf = tape.variable(x)
        out = f(leaf)
    return tape.backward(out)[leaf]


class TestBackward:
    def test_square(self):
        assert _grad(lambda x: x * x, 3.0) == pytest.approx(6.0)

    def test_sin_at_zero(self):
        assert _grad(ops.sin, 0.0) == pytest.approx(1.0)

    def test_product_plus_exp_matches_finite_differences(self, rng):
        xy = rng.normal(size=2)

        def f_diff(v):
            return v[0] * v[1] + ops.exp(v[0])

        def f_np(v):
            return v[0] * v[1] + np.exp(v[0])

        assert relative_error(_grad(f_diff, xy), finite_difference(f_np, xy)) < 1e-5

    def test_constant_has_zero_gradient(self):
        with Tape() as tape:
            x = tape.variable(2.0)
            y = tape.variable(5.0)
            out = x * 3.0 + constant(y) * 0.0
        grads = tape.backward(out)
        assert grads[y] == 0.0
        assert grads[x] == pytest.approx(3.0)

    def test_unused_leaf_gets_zero(self):
        with Tape() as tape:
            x = tape.variable(np.ones(3))
            unused = tape.variable(np.ones(2))
            out = ops.sum(x)
        grads = tape.backward(out)
        np.testing.assert_array_equal(grads[unused], np.zeros(2))

    def test_non_scalar_output_is_rejected(self):
        with Tape() as tape:
            x = tape.variable(np.ones(3))
            out = x * 2.0
        with pytest.raises(ContractViolation, match="scalar"):
            tape.backward(out)

    def test_shared_node_accumulates(self):
        assert _grad(lambda x: x * x + x * x, 2.0) == pytest.approx(8.0)

    def test_replay_is_deterministic(self, rng):
        x = rng.normal(size=(4, 3))

        def f(v):
            return ops.sum(ops.tanh(v @ np.ones((3, 2))) ** 2)

        np.testing.assert_array_equal(_grad(f, x), _grad(f, x))

    def test_nothing_recorded_outside_tape(self):
        x = ops.exp(np.ones(2))
        assert not x.requires_grad

    def test_clip_has_zero_gradient_outside_range(self):
        g = _grad(lambda x: ops.sum(ops.clip(x, -1.0, 1.0)), np.array([-2.0, 0.5, 3.0]))
        np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])


ELEMENTWISE = [
    (ops.exp, np.exp),
    (ops.sin, np.sin),
    (ops.cos, np.cos),
    (ops.tanh, np.tanh),
    (ops.sigmoid, lambda v: 1.0 / (1.0 + np.exp(-v))),
    (ops.silu, lambda v: v / (1.0 + np.exp(-v))),
    (ops.square, np.square),
]


class TestOperationGradients:
    """Every registered operation against the finite-difference oracle."""

    @pytest.mark.parametrize("diff_op, np_op", ELEMENTWISE)
    def test_elementwise(self, diff_op, np_op, rng):
        for _ in range(10):
            x = rng.normal(size=5)
            weights = rng.normal(size=5)
            analytic = _grad(lambda v: ops.sum(diff_op(v) * weights), x)
            numeric = finite_difference(lambda v: float(np.sum(np_op(v) * weights)), x)
            assert relative_error(analytic, numeric, floor=1e-6) < 1e-4

    def test_log_and_sqrt_on_positive_inputs(self, rng):
        x = rng.uniform(0.5, 2.0, size=4)
        analytic = _grad(lambda v: ops.sum(ops.log(v) + ops.sqrt(v)), x)
        numeric = finite_difference(lambda v: float(np.sum(np.log(v) + np.sqrt(v))), x)
        assert relative_error(analytic, numeric) < 1e-4

    def test_matmul_softmax_chain(self, rng):
        W = rng.normal(size=(3, 4))
        x = rng.normal(size=(2, 3))
        target = rng.normal(size=(2, 4))

        def f_diff(v):
            return ops.sum(ops.softmax(v @ W, axis=-1) * target)

        def f_np(v):
            z = v @ W
            e = np.exp(z - z.max(axis=-1, keepdims=True))
            return float(np.sum(e / e.sum(axis=-1, keepdims=True) * target))

        assert relative_error(_grad(f_diff, x), finite_difference(f_np, x), floor=1e-6) < 1e-4

    def test_norm_and_mean(self, rng):
        x = rng.normal(size=(3, 4))
        analytic = _grad(lambda v: ops.mean(ops.norm(v, axis=-1)), x)
        numeric = finite_difference(lambda v: float(np.mean(np.linalg.norm(v, axis=-1))), x)
        assert relative_error(analytic, numeric) < 1e-4

    def test_indexing_stacking_and_reshape(self, rng):
        x = rng.normal(size=(4, 3))

        def f_diff(v):
            parts = ops.stack([v[:, 0], v[:, 2] * 2.0], axis=-1)
            flat = ops.reshape(ops.concatenate([parts, v[1:3, :2]], axis=0), (-1,))
            return ops.sum(flat * flat)

        def f_np(v):
            parts = np.stack([v[:, 0], v[:, 2] * 2.0], axis=-1)
            return float(np.sum(np.concatenate([parts, v[1:3, :2]], axis=0) ** 2))

        assert relative_error(_grad(f_diff, x), finite_difference(f_np, x)) < 1e-4

    def test_rotvec_matrix_near_zero(self, rng):
        v = rng.normal(size=3) * 1e-8

        def f_diff(w):
            return ops.sum(rotvec_matrix(w) * np.arange(9.0).reshape(3, 3))

        def f_np(w):
            return float(np.sum(Rotation.from_rotvec(w).as_matrix() * np.arange(9.0).reshape(3, 3)))

        assert relative_error(_grad(f_diff, v), finite_difference(f_np, v, h=1e-5), floor=1e-6) < 1e-4

    def test_rotvec_matrix_is_a_rotation(self, rng):
        R = rotvec_matrix(rng.normal(size=(5, 3))).value
        np.testing.assert_allclose(R @ np.swapaxes(R, -1, -2), np.broadcast_to(np.eye(3), R.shape), atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-12)


class TestOptimizer:
    def test_plain_gradient_step(self):
        params, _ = optimizer_step([np.array(1.0)], [np.array(2.0)],
                                   OptimizerConfig(lr=0.1, algorithm=Algorithm.PLAIN))
        assert float(params[0]) == pytest.approx(0.8)

    def test_zero_gradient_is_a_fixed_point(self):
        for algorithm in Algorithm:
            params, _ = optimizer_step([np.array([1.0, -2.0])], [np.zeros(2)],
                                       OptimizerConfig(lr=0.1, algorithm=algorithm))
            np.testing.assert_array_equal(params[0], [1.0, -2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation, match="shape"):
            optimizer_step([np.zeros(2)], [np.zeros(3)], OptimizerConfig())

    def test_clip_applies_before_step(self):
        params, _ = optimizer_step([np.zeros(2)], [np.array([3.0, 4.0])],
                                   OptimizerConfig(lr=1.0, algorithm=Algorithm.PLAIN, clip_norm=1.0))
        np.testing.assert_allclose(params[0], [-0.6, -0.8])

    def test_adam_solves_quadratic(self):
        x = Parameter(5.0, "x")
        opt = Optimizer([x], OptimizerConfig(lr=0.05, algorithm=Algorithm.ADAM))
        best = abs(float(x.value))
        for _ in range(2000):
            with Tape() as tape:
                loss = x.data() * x.data()
            opt.step(tape.backward(loss))
            best = min(best, abs(float(x.value)))
        assert best < 1e-2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(lr=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(clip_norm=-1.0)

    def test_frozen_parameters_are_skipped(self):
        a = Parameter(np.ones(2), "a")
        b = Parameter(np.ones(2), "b", trainable=False)
        opt = Optimizer([a, b], OptimizerConfig(lr=0.5, algorithm=Algorithm.PLAIN))
        with Tape() as tape:
            loss = ops.sum(a.data() * b.data())
        opt.step(tape.backward(loss))
        np.testing.assert_allclose(a.value, [0.5, 0.5])
        np.testing.assert_array_equal(b.value, [1.0, 1.0])

    def test_non_finite_gradients_skip_the_update(self):
        a = Parameter(np.ones(2), "a")
        opt = Optimizer([a], OptimizerConfig(lr=0.5, algorithm=Algorithm.PLAIN))
        norm = opt.step({a: np.array([np.nan, 1.0])})
        assert not np.isfinite(norm)
        np.testing.assert_array_equal(a.value, [1.0, 1.0])


class TestFiniteDifference:
    def test_square(self):
        assert finite_difference(lambda v: float(v[0] ** 2), [3.0])[0] == pytest.approx(6.0, abs=1e-4)

    def test_constant(self):
        np.testing.assert_allclose(finite_difference(lambda v: 4.0, np.ones(3)), 0.0)

    def test_step_must_be_positive(self):
        with pytest.raises(ContractViolation):
            finite_difference(lambda v: 0.0, [1.0], h=0.0)


class TestLayers:
    def test_linear_gradient(self, rng):
        layer = Linear(3, 2, rng)
        x = rng.normal(size=(4, 3))
        with Tape() as tape:
            loss = ops.sum(ops.square(layer(x)))
        grads = tape.backward(loss)
        weight = layer.parameters()[0]

        def f(w):
            saved = weight.value.copy()
            weight.value = w
            out = float(np.sum(np.square(layer(x).value)))
            weight.value = saved
            return out

        assert relative_error(grads[weight], finite_difference(f, weight.value.copy())) < 1e-4

    def test_padding_keys_do_not_change_other_tokens(self, rng):
        encoder = TransformerEncoder(16, 1, 2, rng)
        x = rng.normal(size=(1, 4, 16))
        pad = np.array([[False, False, False, True]])
        y1 = encoder(x, key_padding=pad).value
        x2 = x.copy()
        x2[0, 3] = rng.normal(size=16) * 10.0
        y2 = encoder(x2, key_padding=pad).value
        np.testing.assert_allclose(y1[0, :3], y2[0, :3], atol=1e-12)

    @pytest.mark.parametrize("scale", [0.5, 1.0, 250.0])
    def test_rms_norm_gives_unit_rms(self, rng, scale):
        norm = RMSNorm(12)
        x = rng.normal(scale=scale, size=(3, 5, 12))
        y = norm(x).value
        np.testing.assert_allclose(np.sqrt(np.mean(y * y, axis=-1)), 1.0, atol=1e-6)
