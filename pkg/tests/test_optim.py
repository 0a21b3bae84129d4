import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brain2cap.errors import ShapeError
from brain2cap.optim import (
    Adam, AdamConfig, AdamState, SgdConfig, adam_step, clip_by_global_norm, global_norm, sgd_step,
)


def test_optimizer_defaults():
    st_ = AdamState.zeros_like(np.zeros((1, 1)))
    assert (st_.a, st_.b1, st_.b2, st_.eps) == (0.001, 0.9, 0.999, 1e-8)
    cfg = SgdConfig()
    assert (cfg.lr, cfg.clip, cfg.l2) == (0.01, 1.0, 0.005)
    acfg = AdamConfig()
    assert (acfg.clip, acfg.l2) == (1.0, 0.005)


class TestAdam:
    def test_zero_gradient_fixed_point(self):
        p = np.random.default_rng(0).standard_normal((3, 4))
        state = AdamState.zeros_like(p)
        new = p
        for _ in range(5):
            new, state = adam_step(new, np.zeros_like(p), state)
        assert new.tobytes() == p.tobytes()
        assert state.t == 5

    def test_first_step_hand_value(self):
        # m = 0.1, v = 0.001; bias-corrected both 1 -> step a / (1 + eps)
        p, state = adam_step(np.zeros((1, 1)), np.ones((1, 1)), AdamState.zeros_like(np.zeros((1, 1))))
        assert p[0, 0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)
        assert state.m[0, 0] == pytest.approx(0.1)
        assert state.v[0, 0] == pytest.approx(0.001)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros((2, 2)), np.zeros((2, 3)), AdamState.zeros_like(np.zeros((2, 2))))

    def test_second_moment_non_negative(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal((4, 4))
        state = AdamState.zeros_like(p)
        for _ in range(20):
            p, state = adam_step(p, rng.standard_normal(p.shape), state)
        assert np.all(state.v >= 0)

    def test_wrapper_state_round_trip(self):
        rng = np.random.default_rng(2)
        params = {"w": rng.standard_normal((2, 3))}
        opt = Adam()
        opt.step(params, {"w": rng.standard_normal((2, 3))})
        clone = Adam()
        clone.load_state_dict(opt.state_dict())
        g = {"w": rng.standard_normal((2, 3))}
        p1, p2 = dict(params), dict(params)
        opt.step(p1, g)
        clone.step(p2, g)
        assert p1["w"].tobytes() == p2["w"].tobytes()


class TestSgd:
    def test_zero_gradient_no_decay(self):
        p = np.array([[1.0, -2.0]])
        np.testing.assert_array_equal(sgd_step(p, np.zeros_like(p), SgdConfig(l2=0.0)), p)

    def test_hand_value(self):
        out = sgd_step(np.array([[1.0]]), np.array([[0.5]]), SgdConfig(lr=0.01, l2=0.0))
        assert out[0, 0] == pytest.approx(0.995, abs=1e-15)

    def test_decay_is_not_clipped(self):
        # gradient [3, 4] clipped to [0.6, 0.8]; decay 0.5 * p added afterwards
        p = np.array([[10.0, 10.0]])
        out = sgd_step(p, np.array([[3.0, 4.0]]), SgdConfig(lr=0.1, clip=1.0, l2=0.5))
        np.testing.assert_allclose(out, p - 0.1 * (np.array([[0.6, 0.8]]) + 5.0), atol=1e-14)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SgdConfig(lr=0.0)
        with pytest.raises(ValueError):
            SgdConfig(clip=-1.0)

    def test_descent_on_quadratic(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((5, 5))
        Q = A @ A.T + np.eye(5)
        p = rng.standard_normal((5, 1))

        def loss(x):
            return float((0.5 * x.T @ Q @ x)[0, 0])

        new = sgd_step(p, Q @ p, SgdConfig(lr=1e-3, clip=1e6, l2=0.0))
        assert loss(new) < loss(p)


class TestClip:
    def test_below_threshold_unchanged(self):
        g = [np.array([[0.3, 0.4]])]
        out = clip_by_global_norm(g, 1.0)
        assert out[0] is g[0]

    def test_hand_value(self):
        (out,) = clip_by_global_norm([np.array([[3.0, 4.0]])], 1.0)
        np.testing.assert_allclose(out, [[0.6, 0.8]], atol=1e-15)

    def test_global_across_matrices(self):
        out = clip_by_global_norm([np.array([[3.0]]), np.array([[4.0]])], 1.0)
        assert out[0][0, 0] == pytest.approx(0.6)
        assert out[1][0, 0] == pytest.approx(0.8)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(1e-3, 10.0))
    def test_norm_bounded(self, values, threshold):
        grads = [np.array(values[: len(values) // 2 + 1]).reshape(1, -1), np.array(values).reshape(-1, 1)]
        assert global_norm(clip_by_global_norm(grads, threshold)) <= threshold + 1e-12
