import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from brain2cap.errors import FormatError, NonFiniteError, ShapeError
from brain2cap.mathcore import (
    Tape, affine, finite_difference_check, matmul, mse_loss, pack_matrix, read_matrix,
    softmax, softmax_cross_entropy, unpack_matrix, write_matrix,
)
from brain2cap.mathcore import tape as T
from brain2cap.regressors import MlpModel, init_layers

from conftest import param_gradcheck


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, -2.0], [0.5, 3.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)

    def test_zero(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(matmul(np.zeros((2, 2)), a), np.zeros((2, 3)))

    def test_hand_evaluated(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17.0], [39.0]])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        a = np.ones((2, 2))
        a[1, 0] = bad
        with pytest.raises(NonFiniteError):
            matmul(a, np.eye(2))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
    def test_associative(self, m, n, k, p, seed):
        rng = np.random.default_rng(seed)
        a, b, c = rng.uniform(-1, 1, (m, n)), rng.uniform(-1, 1, (n, k)), rng.uniform(-1, 1, (k, p))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-9 * max(1.0, np.max(np.abs(left)))


class TestAffine:
    def test_zero_input_gives_bias(self):
        b = np.array([[1.0, -1.0, 2.0]])
        np.testing.assert_array_equal(affine(np.zeros((4, 2)), np.ones((2, 3)), b), np.repeat(b, 4, 0))

    def test_identity(self):
        x = np.array([[0.3, -0.7]])
        np.testing.assert_array_equal(affine(x, np.eye(2), np.zeros((1, 2))), x)

    def test_hand_evaluated(self):
        np.testing.assert_array_equal(affine([[1, 1]], [[1, 0], [0, 1]], [[2, 3]]), [[3.0, 4.0]])

    def test_bias_shape(self):
        with pytest.raises(ShapeError):
            affine(np.ones((1, 2)), np.eye(2), np.zeros((1, 3)))


class TestSoftmaxCrossEntropy:
    def test_uniform_is_log_v(self):
        loss, _ = softmax_cross_entropy(np.zeros((3, 7)), [0, 3, 6])
        assert loss == pytest.approx(math.log(7), abs=1e-15)

    def test_confident_limit(self):
        loss, _ = softmax_cross_entropy([[50.0, 0.0, 0.0]], [0])
        assert loss < 1e-20

    def test_scalar_formula(self):
        loss, _ = softmax_cross_entropy([[2.0, 0.0]], [0])
        assert loss == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-15)
        assert loss == pytest.approx(0.1269, abs=1e-4)

    def test_gradient_formula(self):
        logits = np.array([[1.0, 2.0, 0.5], [0.0, -1.0, 1.0]])
        _, grad = softmax_cross_entropy(logits, [2, 0])
        expected = softmax(logits)
        expected[0, 2] -= 1
        expected[1, 0] -= 1
        np.testing.assert_allclose(grad, expected / 2, atol=1e-15)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            softmax_cross_entropy(np.zeros((1, 3)), [3])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 5), elements=st.floats(-30, 30)), st.lists(st.integers(0, 4), min_size=4, max_size=4))
    def test_rows_sum_to_one_and_loss_non_negative(self, logits, targets):
        np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-12)
        assert softmax_cross_entropy(logits, targets)[0] >= 0.0


class TestMse:
    def test_equal_is_zero(self):
        assert mse_loss([[1.0, 2.0]], [[1.0, 2.0]])[0] == 0.0

    def test_hand(self):
        loss, grad = mse_loss([[0.0, 0.0]], [[1.0, 1.0]])
        assert loss == 1.0
        np.testing.assert_array_equal(grad, [[-1.0, -1.0]])

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((1, 2)), np.zeros((2, 1)))


class TestTape:
    def test_sum_gradient_is_one(self):
        assert finite_difference_check(T.sum_all, np.array([[0.2, -0.4, 0.9]])) < 1e-9

    def test_square_gradient(self):
        tape = Tape()
        x = tape.var([[1.0, 2.0]])
        out = T.sum_all(x * x)
        tape.backward(out)
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]], atol=1e-12)
        assert finite_difference_check(lambda v: T.sum_all(v * v), np.array([[1.0, 2.0]])) < 1e-8

    def test_each_node_visited_once(self):
        tape = Tape()
        x = tape.var([[1.5]])
        y = x * x
        z = y + y
        out = T.sum_all(z * y)
        tape.backward(out)
        # out = 2 x^4  ->  8 x^3
        assert x.grad[0, 0] == pytest.approx(8 * 1.5**3)

    @pytest.mark.parametrize("op", [
        lambda v: T.sum_all(T.sigmoid(v)),
        lambda v: T.sum_all(T.tanh(v) * v),
        lambda v: T.sum_all(T.relu(v) * v),
        lambda v: T.sum_all(T.columns(v, 1, 3) * T.columns(v, 0, 2)),
        lambda v: T.sum_all(T.concat([v, v * v]) * T.concat([v * v, v])),
        lambda v: T.sum_all(T.concat([v, T.tanh(v)], axis=0) * 0.5),
        lambda v: T.sum_all(T.take_rows(v, [0, 2, 2]) * 1.7),
        lambda v: T.sum_all(T.blend(v * v, T.tanh(v), [1, 0, 1])),
        lambda v: T.mse(v @ v.tape.const(np.ones((3, 2))), np.ones((3, 2))),
        lambda v: T.softmax_ce(v, [0, 2, 1], [1.0, 0.0, 2.0]),
        lambda v: T.sum_all(T.scale(v - v * v, -3.0)),
        lambda v: T.sum_all(T.affine(v, v.tape.const(np.eye(3)), v.tape.const(np.ones((1, 3)))) * v),
    ])
    def test_primitive_gradients(self, op):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.uniform(-1, 1, (3, 3))
            assert finite_difference_check(op, x) < 1e-5

    def test_rejects_nan_leaf(self):
        with pytest.raises(NonFiniteError):
            Tape().var([[np.nan]])

    def test_three_layer_network_gradient(self):
        rng = np.random.default_rng(3)
        arch = (6, 5, 4)
        model = MlpModel(arch, init_layers(arch, rng), "relu")
        X, Y = rng.uniform(-1, 1, (8, 6)), rng.uniform(-1, 1, (8, 4))

        def loss(tape, leaves):
            return T.mse(model.forward(tape, X, leaves)[0], Y)

        assert param_gradcheck(model.params, loss) < 1e-6


class TestMatrixFormat:
    def test_round_trip_bitwise(self, tmp_path):
        a = np.random.default_rng(1).standard_normal((3, 5))
        write_matrix(tmp_path / "a.ncmx", a)
        b = read_matrix(tmp_path / "a.ncmx")
        assert b.tobytes() == a.tobytes()

    def test_header_layout(self):
        buf = pack_matrix(np.array([[1.5, 2.0]]))
        assert buf[:4] == b"NCMX"
        assert int.from_bytes(buf[4:8], "little") == 1
        assert int.from_bytes(buf[8:16], "little") == 1
        assert int.from_bytes(buf[16:24], "little") == 2
        assert np.frombuffer(buf[24:], "<f8").tolist() == [1.5, 2.0]

    def test_truncated_names_offset(self):
        buf = pack_matrix(np.ones((2, 2)))[:-3]
        with pytest.raises(FormatError) as exc:
            unpack_matrix(buf)
        assert exc.value.offset == len(buf)
        assert "offset" in str(exc.value)

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            unpack_matrix(b"XXXX" + bytes(20))
