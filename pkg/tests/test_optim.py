import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmedix import ops, rng
from deepmedix.errors import ShapeError
from deepmedix.gradcheck import grad_check
from deepmedix.optim import (AdamState, adam_step, bce_grad, bce_loss, cce_grad, cce_loss, reduce_lr, sgd_step,
                             svrg_prepare, svrg_step)


class TestLosses:
    def test_bce_examples(self):
        assert bce_loss([1.0, 0.0], [1.0, 0.0]) < 2e-7
        assert math.isclose(bce_loss([1.0], [0.5]), math.log(2), rel_tol=1e-15)
        assert math.isclose(bce_loss([1.0, 0.0], [0.9, 0.2]), -(math.log(0.9) + math.log(0.8)) / 2, rel_tol=1e-14)

    def test_cce_examples(self):
        assert cce_loss(np.eye(3)[[0]], np.eye(3)[[0]]) < 2e-7
        for c in (2, 3, 7):
            assert math.isclose(cce_loss(np.eye(c)[[1]], np.full((1, c), 1 / c)), math.log(c), rel_tol=1e-14)
        y = np.eye(3)[[2, 0]]
        p = np.array([[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]])
        assert math.isclose(cce_loss(y, p), -(math.log(0.5) + math.log(0.6)) / 2, rel_tol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss([1.0, 0.0], [0.5])
        with pytest.raises(ShapeError):
            cce_loss(np.eye(3), np.eye(2))

    @given(st.integers(0, 2 ** 32), st.integers(1, 20))
    def test_bce_equals_two_column_cce(self, seed, n):
        y = (rng.uniform(seed, n) > 0.5).astype(float)
        p = 0.01 + 0.98 * rng.uniform(seed + 1, n)
        two = np.stack([1 - y, y], axis=1), np.stack([1 - p, p], axis=1)
        assert abs(bce_loss(y, p) - cce_loss(*two)) < 1e-9

    def test_loss_gradients(self):
        y = (rng.uniform(1, 6) > 0.5).astype(float)
        p = 0.05 + 0.9 * rng.uniform(2, 6)
        assert grad_check(lambda q: np.array(bce_loss(y, q)), [p], lambda g, q: g * bce_grad(y, q)).passed
        yc = np.eye(4)[[0, 3, 1]]
        pc = ops.softmax(rng.normal(3, (3, 4)))
        assert grad_check(lambda q: np.array(cce_loss(yc, q)), [pc], lambda g, q: g * cce_grad(yc, q)).passed


class TestSgd:
    def test_examples(self):
        w = {"a": np.array([1.0]), "b": rng.normal(1, 3)}
        assert sgd_step(w, {"a": np.array([0.5])}, 0.1)["a"][0] == 0.95
        same = sgd_step(w, {"a": np.zeros(1), "b": np.zeros(3)}, 0.1)
        assert all(np.array_equal(same[k], w[k]) for k in w)
        assert np.array_equal(sgd_step(w, {"b": np.ones(3)}, 0.0)["b"], w["b"])

    def test_frozen_slots_and_purity(self):
        w = {"a": np.ones(2), "frozen": np.ones(2)}
        out = sgd_step(w, {"a": np.ones(2)}, 0.5)
        assert out["frozen"] is w["frozen"] and np.array_equal(w["a"], [1, 1])
        np.testing.assert_array_equal(out["a"], [0.5, 0.5])

    def test_dtype_preserved_and_shape_checked(self):
        w = {"a": np.ones(2, dtype=np.float32)}
        assert sgd_step(w, {"a": np.ones(2)}, 0.1)["a"].dtype == np.float32
        with pytest.raises(ShapeError):
            sgd_step(w, {"a": np.ones(3)}, 0.1)
        with pytest.raises(ShapeError):
            sgd_step(w, {"zz": np.ones(2)}, 0.1)


def adam_oracle(grads, alpha=Fraction(1, 1000), b1=Fraction(9, 10), b2=Fraction(999, 1000), eps=1e-8):
    """Scalar Adam recurrence with exact moment arithmetic."""
    w, m, v = 0.0, Fraction(0), Fraction(0)
    for t, g in enumerate(grads, 1):
        g = Fraction(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat, vhat = m / (1 - b1 ** t), v / (1 - b2 ** t)
        w -= float(alpha * mhat) / (math.sqrt(vhat) + eps)
    return w


class TestAdam:
    def test_zero_gradient_from_fresh_state(self):
        w = {"a": rng.normal(1, 3)}
        st_, out = adam_step(AdamState.fresh(w), w, {"a": np.zeros(3)})
        np.testing.assert_array_equal(out["a"], w["a"])
        assert not st_.m["a"].any() and not st_.v["a"].any() and st_.t == 1

    def test_first_step_closed_form(self):
        w = {"a": np.array([0.0])}
        _, out = adam_step(AdamState.fresh(w), w, {"a": np.array([1.0])})
        assert math.isclose(out["a"][0], -0.001 / (1 + 1e-8), rel_tol=1e-15)

    def test_two_step_oracle(self):
        w = {"a": np.array([0.0])}
        st_ = AdamState.fresh(w)
        for g in (1.0, -1.0):
            st_, w = adam_step(st_, w, {"a": np.array([g])})
        assert abs(w["a"][0] - adam_oracle([1.0, -1.0])) < 1e-15

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def test_matches_recurrence(self, grads):
        w = {"a": np.array([0.0])}
        st_ = AdamState.fresh(w)
        for g in grads:
            st_, w = adam_step(st_, w, {"a": np.array([g])})
        assert abs(w["a"][0] - adam_oracle(grads)) < 1e-12

    @given(st.floats(-5, 5), st.floats(0.1, 2.0))
    def test_zero_betas_scaled_step(self, g, eps):
        w = {"a": np.array([0.0])}
        _, out = adam_step(AdamState.fresh(w, beta1=0.0, beta2=0.0, epsilon=eps), w, {"a": np.array([g])})
        assert math.isclose(out["a"][0], -0.001 * g / (abs(g) + eps), rel_tol=1e-12, abs_tol=1e-300)

    def test_frozen_slot_untouched(self):
        w = {"a": np.ones(2), "b": np.ones(2)}
        st_, out = adam_step(AdamState.fresh(w), w, {"a": np.ones(2)})
        assert out["b"] is w["b"] and not st_.m["b"].any()


class TestSvrg:
    def test_full_batch_equals_gradient_descent(self, quadratic):
        obj = quadratic([1.0, 2.0, 6.0])
        w = {"w": np.array(0.3)}
        idx = np.arange(3)
        state = svrg_prepare(obj, w, idx)
        _, g, _ = obj.loss_and_grad(w, idx)
        w_svrg, _, _ = svrg_step(state, obj, w, idx, 0.1)
        assert w_svrg["w"] == sgd_step(w, g, 0.1)["w"]

    def test_full_batch_bitwise_on_softmax_regression(self, linear_problem):
        obj, w = linear_problem
        w = {k: v + 0.1 for k, v in w.items()}
        idx = np.arange(obj.num_samples)
        state = svrg_prepare(obj, w, idx)
        w1, _, _ = svrg_step(state, obj, w, idx, 0.1)
        w2 = sgd_step(w, obj.loss_and_grad(w, idx)[1], 0.1)
        assert all(np.array_equal(w1[k], w2[k]) for k in w)

    def test_first_inner_step_uses_full_gradient(self, quadratic):
        obj = quadratic([2.0, 4.0])
        w = {"w": np.array(0.0)}
        state = svrg_prepare(obj, w, np.arange(2))
        out, _, _ = svrg_step(state, obj, w, np.array([0]), 0.1)
        assert out["w"] == 0.0 - 0.1 * -6.0

    @pytest.mark.parametrize("targets", [(2.0, 2.0), (2.0, 4.0)])
    def test_three_step_recurrence(self, quadratic, targets):
        # single-sample batches: direction = 2(w - w_snap) + g_full for either sample
        obj = quadratic(list(targets))
        w = {"w": np.array(0.0)}
        state = svrg_prepare(obj, w, np.arange(2))
        eta, ws = Fraction(1, 10), Fraction(0)
        g_full = 2 * (ws - (Fraction(targets[0]) + Fraction(targets[1])) / 2)
        expected = Fraction(0)
        for i in (0, 1, 0):
            w, _, _ = svrg_step(state, obj, w, np.array([i]), 0.1)
            expected -= eta * (2 * (expected - ws) + g_full)
            assert abs(float(w["w"]) - float(expected)) < 1e-15
        assert state.inner_steps == 3

    def test_empty_dataset(self, quadratic):
        with pytest.raises(ValueError):
            svrg_prepare(quadratic([1.0]), {"w": np.array(0.0)}, np.array([], dtype=int))


def test_reduce_lr():
    assert reduce_lr(0.1) == 0.1 / 3
    assert reduce_lr(reduce_lr(0.9)) == 0.9 / 3 / 3
    with pytest.raises(ValueError):
        reduce_lr(0.1, 1.0)
