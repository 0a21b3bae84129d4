import numpy as np
import pytest

from brain2cap.data import SynthSpec, synth_generate
from brain2cap.errors import ShapeError
from brain2cap.mathcore import tape as T
from brain2cap.optim import SgdConfig
from brain2cap.regressors import (
    DEFAULT_AE_EPOCHS, ARCH3, ARCH5, DEFAULT_EPOCHS, RIDGE_L2, RidgeModel,
    ae_pretrain, dnn_fit, mlp_fit, predict, ridge_fit,
)

from conftest import param_gradcheck


def test_default_constants():
    assert RIDGE_L2 == 0.5
    assert ARCH3 == (65665, 8000, 4096)
    assert ARCH5 == (65665, 7500, 6500, 5500, 4096)
    assert DEFAULT_EPOCHS == 1000
    assert DEFAULT_AE_EPOCHS == 200


class TestRidge:
    def test_identity(self):
        m = ridge_fit(np.eye(3), np.eye(3), 0.0, fit_intercept=False)
        np.testing.assert_allclose(m.W, np.eye(3), atol=1e-15)

    def test_hand_solved(self):
        # (X'X + 0.5 I) = diag(1.5, 4.5), X'Y = [1, 4]
        m = ridge_fit([[1, 0], [0, 2]], [[1], [2]], 0.5, fit_intercept=False)
        np.testing.assert_allclose(m.W, [[2 / 3], [8 / 9]], atol=1e-15)

    def test_least_squares_residual(self):
        rng = np.random.default_rng(0)
        X, Y = rng.standard_normal((30, 6)), rng.standard_normal((30, 2))
        m = ridge_fit(X, Y, 0.0, fit_intercept=False)
        assert np.linalg.norm(X.T @ X @ m.W - X.T @ Y) < 1e-8

    def test_unique_minimizer(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((25, 5)), rng.standard_normal((25, 3))
        lam = 0.7
        m = ridge_fit(X, Y, lam, fit_intercept=False)

        def objective(W):
            r = X @ W - Y
            return np.sum(r * r) + lam * np.sum(W * W)

        base = objective(m.W)
        for _ in range(50):
            assert objective(m.W + 1e-3 * rng.standard_normal(m.W.shape)) > base

    def test_intercept_is_unpenalized(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((40, 3))
        Y = X @ rng.standard_normal((3, 2)) + np.array([[5.0, -3.0]])
        m = ridge_fit(X, Y, 0.0)
        np.testing.assert_allclose(m.b, [[5.0, -3.0]], atol=1e-10)
        heavy = ridge_fit(X, Y, 1e6)
        np.testing.assert_allclose(heavy.b, Y.mean(axis=0, keepdims=True), atol=1e-3)

    def test_singular_without_penalty(self):
        X = np.ones((5, 2))
        with pytest.raises(np.linalg.LinAlgError):
            ridge_fit(X, np.ones((5, 1)), 0.0, fit_intercept=False)

    def test_standardized_predictions_match(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((30, 4)) * [1, 10, 100, 0.1]
        Y = rng.standard_normal((30, 2))
        m = ridge_fit(X, Y, 0.0, standardize=True)
        plain = ridge_fit(X, Y, 0.0)
        np.testing.assert_allclose(m.predict(X), plain.predict(X), atol=1e-9)


class TestPredict:
    def test_identity_ridge(self):
        x = np.array([[0.1, -2.0, 3.0]])
        np.testing.assert_array_equal(predict(RidgeModel(np.eye(3), np.zeros((1, 3))), x), x)

    def test_training_rows_reproduce_closed_form(self):
        rng = np.random.default_rng(4)
        X, Y = rng.standard_normal((20, 5)), rng.standard_normal((20, 3))
        m = ridge_fit(X, Y, 0.5, fit_intercept=False)
        np.testing.assert_allclose(predict(m, X[3]), X[3:4] @ m.W, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            predict(RidgeModel(np.eye(3), np.zeros((1, 3))), np.ones(4))

    def test_pure(self):
        rng = np.random.default_rng(5)
        X, Y = rng.standard_normal((30, 6)), rng.standard_normal((30, 2))
        m = mlp_fit(X, Y, (6, 8, 2), epochs=3)
        a, b = predict(m, X), predict(m, X.copy())
        assert a.tobytes() == b.tobytes()


class TestMlp:
    def test_realizable_identity(self):
        X = np.random.default_rng(0).standard_normal((50, 4))
        m = mlp_fit(X, X, (4, 6, 4), SgdConfig(lr=0.05, l2=0.0), 400, 0,
                    activation="linear", standardize=False)
        assert m.mse(X, X) < 1e-3

    def test_zero_epochs_is_initialization(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((20, 5)), rng.standard_normal((20, 2))
        a = mlp_fit(X, Y, (5, 7, 2), epochs=0, seed=9)
        b = mlp_fit(X, Y, (5, 7, 2), epochs=0, seed=9)
        assert a.log == []
        assert a.mse(X, Y) == b.mse(X, Y)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_non_conforming_arch(self):
        X, Y = np.zeros((4, 3)), np.zeros((4, 2))
        with pytest.raises(ShapeError):
            mlp_fit(X, Y, (4, 5, 2), epochs=1)
        with pytest.raises(ShapeError):
            mlp_fit(X, Y, (3, 5, 3), epochs=1)

    def test_gradient_descent_reaches_ridge(self):
        rng = np.random.default_rng(2)
        n, d, k, lam = 40, 5, 3, 0.5
        X = rng.standard_normal((n, d))
        X -= X.mean(axis=0)
        Y = X @ rng.standard_normal((d, k)) + 0.1 * rng.standard_normal((n, k))
        Y -= Y.mean(axis=0)
        ridge = ridge_fit(X, Y, lam, fit_intercept=False)
        # mean-over-entries loss: decay 2*lam/(n*k) matches the summed ridge objective
        cfg = SgdConfig(lr=0.05, clip=1e9, l2=2 * lam / (n * k))
        gd = mlp_fit(X, Y, (d, k), cfg, 3000, 0, batch_size=n, standardize=False)
        assert np.max(np.abs(gd.params["W0"] - ridge.W)) < 1e-3

    def test_log_rows(self):
        rng = np.random.default_rng(3)
        X, Y = rng.standard_normal((30, 4)), rng.standard_normal((30, 2))
        m = mlp_fit(X[:20], Y[:20], (4, 5, 2), epochs=3, X_val=X[20:], Y_val=Y[20:])
        assert [(e, s) for e, s, _ in m.log] == [(0, "train"), (0, "val"), (1, "train"), (1, "val"),
                                                 (2, "train"), (2, "val")]

    def test_resume_matches_continuous(self):
        rng = np.random.default_rng(4)
        X, Y = rng.standard_normal((40, 6)), rng.standard_normal((40, 2))
        full = mlp_fit(X, Y, (6, 5, 2), epochs=6, seed=1, batch_size=8)
        half = mlp_fit(X, Y, (6, 5, 2), epochs=3, seed=1, batch_size=8)
        rest = mlp_fit(X, Y, (6, 5, 2), epochs=3, seed=1, batch_size=8, resume=half)
        assert rest.log == full.log
        assert rest.params["W0"].tobytes() == full.params["W0"].tobytes()

    @pytest.mark.parametrize("activation", ["relu", "sigmoid", "tanh"])
    def test_five_layer_gradient(self, activation):
        rng = np.random.default_rng(5)
        X, Y = rng.uniform(-1, 1, (6, 5)), rng.uniform(-1, 1, (6, 2))
        m = mlp_fit(X, Y, (5, 4, 4, 3, 2), epochs=0, activation=activation, standardize=False)

        def loss(tape, leaves):
            return T.mse(m.forward(tape, X, leaves)[0], Y)

        assert param_gradcheck(m.params, loss) < 1e-5


class TestAutoencoder:
    def test_linear_identity_reconstruction(self):
        X = np.random.default_rng(0).standard_normal((50, 4))
        s = ae_pretrain(X, (6,), 400, SgdConfig(lr=0.05, l2=0.0), 0, activation="linear",
                        standardize=False)
        assert s.losses[0][-1] < 1e-4

    def test_curves_monotone_after_warmup(self):
        ds = synth_generate(SynthSpec(seed=0, n_train=0, n_test=0, n_unlabeled=300, brain_dim=60,
                                      feature_dim=8))
        s = ae_pretrain(ds.unlabeled, (30, 20), 60, SgdConfig(), 0)
        for curve in s.losses:
            assert len(curve) == 60
            for a, b in zip(curve[10:], curve[11:]):
                assert b <= a * 1.01

    def test_greedy_layers_feed_forward(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((40, 6))
        s = ae_pretrain(X, (5, 3), 2, seed=0)
        assert s.arch == (6, 5, 3)
        assert [W.shape for W, _ in s.encoders] == [(6, 5), (5, 3)]
        assert [W.shape for W, _ in s.decoders] == [(5, 6), (3, 5)]
        assert s.encode(X).shape == (40, 3)

    def test_empty_hidden_dims(self):
        with pytest.raises(ValueError):
            ae_pretrain(np.zeros((3, 2)), (), 1)

    def test_layer_gradient(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (7, 5))
        params = {"We": rng.standard_normal((5, 3)) / 2, "be": rng.standard_normal((1, 3)) / 4,
                  "Wd": rng.standard_normal((3, 5)) / 2, "bd": np.zeros((1, 5))}

        def loss(tape, lv):
            code = T.relu(T.affine(tape.const(X), lv["We"], lv["be"]))
            return T.mse(T.affine(code, lv["Wd"], lv["bd"]), X)

        assert param_gradcheck(params, loss) < 1e-5


class TestDnn:
    def test_stack_dims_must_match(self):
        rng = np.random.default_rng(0)
        X, Y = rng.standard_normal((20, 6)), rng.standard_normal((20, 2))
        stack = ae_pretrain(X, (5, 4), 1)
        with pytest.raises(ShapeError):
            dnn_fit(X, Y, (6, 5, 3, 2), stack, epochs=1)

    def test_zero_target_zero_init_stays_zero(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((20, 6)), np.zeros((20, 2))
        arch = (6, 5, 4, 3, 2)
        zeros = {f"W{i}": np.zeros((a, b)) for i, (a, b) in enumerate(zip(arch[:-1], arch[1:]))}
        zeros.update({f"b{i}": np.zeros((1, b)) for i, b in enumerate(arch[1:])})
        m = dnn_fit(X, Y, arch, None, epochs=5, initial_params=zeros)
        assert all(v == 0.0 for _, _, v in m.log)

    def test_stack_init_lowers_first_epoch_loss(self):
        wins = 0
        for seed in range(10):
            ds = synth_generate(SynthSpec(seed=seed, n_train=100, n_test=0, n_unlabeled=300,
                                          brain_dim=120, feature_dim=12, noise_std=0.5))
            arch = (120, 40, 32, 24, 12)
            stack = ae_pretrain(ds.unlabeled, arch[1:-1], 15, SgdConfig(), seed)
            pre = dnn_fit(ds.brain, ds.features, arch, stack, epochs=1, seed=seed)
            rnd = dnn_fit(ds.brain, ds.features, arch, None, epochs=1, seed=seed)
            wins += pre.log[0][2] <= rnd.log[0][2]
        assert wins >= 5
