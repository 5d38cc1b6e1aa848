import numpy as np
import pytest

from relfuse import gradcheck as gc
from relfuse import layers as L
from relfuse.rng import Rng
from relfuse.tensor_ops import ShapeError


class TestConv1d:
    def test_edge_filter_oracle(self):
        # direct convolution by hand: [1*1+2*0+3*(-1), 2*1+3*0+4*(-1)] = [-2, -2]
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        k = np.array([1.0, 0.0, -1.0]).reshape(3, 1, 1)
        out, _ = L.conv1d_forward(x, k, np.zeros(1))
        assert np.array_equal(out, np.array([[-2.0], [-2.0]]))

    def test_delta_kernel_keeps_central_slice(self):
        x = np.random.default_rng(0).normal(size=(6, 2))
        k = np.zeros((3, 2, 2))
        k[1] = np.eye(2)
        out, _ = L.conv1d_forward(x, k, np.zeros(2))
        assert np.allclose(out, x[1:-1], atol=1e-12)

    def test_zero_input_gives_bias_rows(self):
        bias = np.array([0.5, -1.0])
        out, _ = L.conv1d_forward(np.zeros((5, 3)), np.ones((3, 3, 2)), bias)
        assert np.array_equal(out, np.tile(bias, (3, 1)))

    def test_sequence_shorter_than_kernel(self):
        with pytest.raises(ShapeError, match="shorter than kernel"):
            L.conv1d_forward(np.zeros((2, 1)), np.zeros((3, 1, 1)), np.zeros(1))

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            L.conv1d_forward(np.zeros((5, 1)), np.zeros((2, 1, 1)), np.zeros(1))

    def test_zero_upstream_gives_zero_grads(self):
        x = np.random.default_rng(1).normal(size=(5, 2))
        k = np.random.default_rng(2).normal(size=(3, 2, 4))
        _, cache = L.conv1d_forward(x, k, np.zeros(4))
        dx, dk, db = L.conv1d_backward(cache, np.zeros((3, 4)))
        assert not dx.any() and not dk.any() and not db.any()


class TestMaxPool:
    def test_enumeration_oracle(self):
        x = np.array([1.0, 3.0, 2.0, 5.0]).reshape(4, 1)
        out, idx = L.maxpool1d(x, 2)
        assert np.array_equal(out, np.array([[3.0], [5.0]]))
        assert np.array_equal(idx[:, 0], np.array([1, 3]))

    def test_pool_one_is_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        out, _ = L.maxpool1d(x, 1)
        assert np.array_equal(out, x)

    def test_tie_break_lowest_index(self):
        x = np.full((6, 2), 7.0)
        out, idx = L.maxpool1d(x, 2)
        assert np.array_equal(out, np.full((3, 2), 7.0))
        # absolute index of the first element of each window
        assert np.array_equal(idx[:, 0], np.array([0, 2, 4]))

    def test_trailing_remainder_dropped(self):
        x = np.arange(7, dtype=np.float64).reshape(7, 1)
        out, _ = L.maxpool1d(x, 2)
        assert out.shape == (3, 1)
        assert np.array_equal(out[:, 0], np.array([1.0, 3.0, 5.0]))

    def test_pool_below_one_rejected(self):
        with pytest.raises(ShapeError):
            L.maxpool1d(np.zeros((4, 1)), 0)

    def test_backward_routes_each_element_once(self):
        x = np.random.default_rng(3).normal(size=(8, 3))
        dout = np.random.default_rng(4).normal(size=(4, 3))
        _, _, cache = L.maxpool1d_forward(x, 2)
        dx = L.maxpool1d_backward(cache, dout)
        # gradient magnitude is preserved: every upstream element lands on
        # exactly one input position
        assert np.isclose(np.abs(dx).sum(), np.abs(dout).sum())
        assert np.count_nonzero(dx) == np.count_nonzero(dout)


class TestBatchNormRelu:
    def test_pre_normalized_input_passes_through(self):
        # columns already have mean 0 / var 1, gamma=1, beta=0
        x = np.array([[-1.0, 1.0], [1.0, -1.0]])
        out, _, _, _ = L.batchnorm_relu_forward(
            x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), "train")
        assert np.allclose(out, np.maximum(x, 0.0), atol=1e-3)

    def test_large_negative_beta_saturates_to_zero(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        out, _, _, _ = L.batchnorm_relu_forward(
            x, np.ones(3), np.full(3, -100.0), np.zeros(3), np.ones(3), "train")
        assert not out.any()

    def test_two_sample_hand_oracle(self):
        # mean 0, biased var 1 -> xhat = +-1/sqrt(1 + eps), negative clamped
        x = np.array([[-1.0], [1.0]])
        out, _, _, _ = L.batchnorm_relu_forward(
            x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")
        expected = 1.0 / np.sqrt(1.0 + L.BN_EPS)
        assert np.allclose(out, [[0.0], [expected]], atol=1e-12)
        assert np.allclose(out, [[0.0], [1.0]], atol=1e-3)

    def test_train_requires_two_rows(self):
        with pytest.raises(ShapeError):
            L.batchnorm_relu_forward(np.ones((1, 2)), np.ones(2), np.zeros(2),
                                     np.zeros(2), np.ones(2), "train")

    def test_infer_uses_running_stats(self):
        x = np.array([[2.0, 4.0]])
        rm = np.array([2.0, 4.0])
        rv = np.array([1.0, 1.0])
        out, _, rm2, rv2 = L.batchnorm_relu_forward(
            x, np.ones(2), np.zeros(2), rm, rv, "infer")
        assert np.allclose(out, 0.0, atol=1e-6)
        assert np.array_equal(rm2, rm) and np.array_equal(rv2, rv)

    def test_running_stats_momentum(self):
        x = np.array([[0.0], [2.0]])  # batch mean 1, biased var 1
        _, _, rm, rv = L.batchnorm_relu_forward(
            x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "train")
        assert np.isclose(rm[0], 0.99 * 0.0 + 0.01 * 1.0)
        assert np.isclose(rv[0], 0.99 * 1.0 + 0.01 * 1.0)


class TestDropout:
    def test_infer_is_bitwise_identity(self):
        x = np.random.default_rng(0).normal(size=(20, 5)).astype(np.float32)
        out, cache = L.dropout_forward(x, 0.25, None, "infer")
        assert out is x and cache is None

    def test_rate_zero_is_identity_in_train(self):
        x = np.random.default_rng(1).normal(size=(4, 4))
        out, _ = L.dropout_forward(x, 0.0, Rng(0), "train")
        assert np.array_equal(out, x)

    def test_monte_carlo_mean_preserved(self):
        # inverted dropout keeps the expectation; 1e5 draws pin it within 2%
        x = Rng(5).uniform(1.0, 2.0, size=(100000,))
        out, _ = L.dropout_forward(x, 0.25, Rng(6), "train")
        assert abs(out.mean() - x.mean()) / x.mean() < 0.02

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            L.dropout_forward(np.zeros(3), 1.0, Rng(0), "train")
        with pytest.raises(ValueError):
            L.dropout_forward(np.zeros(3), -0.1, Rng(0), "train")

    def test_backward_applies_same_mask(self):
        x = np.random.default_rng(2).normal(size=(50,))
        out, cache = L.dropout_forward(x, 0.5, Rng(7), "train")
        dx = L.dropout_backward(cache, np.ones_like(x))
        # zeroed positions stay zeroed, survivors carry the 1/(1-rate) scale
        assert np.array_equal(dx == 0.0, out == 0.0) or np.array_equal(dx == 0.0, x * cache == 0.0)
        assert set(np.unique(dx)) <= {0.0, 2.0}


class TestDense:
    def test_identity_weights(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        out, cache = L.dense_forward(x, np.eye(4), np.zeros(4), "none")
        assert np.array_equal(out, x)
        dx, _, _ = L.dense_backward(cache, np.ones_like(x))
        assert np.array_equal(dx, np.ones_like(x))

    def test_affine_oracle(self):
        # 1*1 + 2*1 + 0.5 = 3.5
        out, _ = L.dense_forward(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]),
                                 np.array([0.5]), "none")
        assert out[0, 0] == 3.5

    def test_relu_clamps_all_negative(self):
        x = np.ones((2, 2))
        out, _ = L.dense_forward(x, -np.eye(2), np.zeros(2), "relu")
        assert not out.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            L.dense_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_zero_upstream_zero_grads(self):
        x = np.random.default_rng(1).normal(size=(3, 4))
        W = np.random.default_rng(2).normal(size=(4, 2))
        _, cache = L.dense_forward(x, W, np.zeros(2), "relu")
        dx, dW, db = L.dense_backward(cache, np.zeros((3, 2)))
        assert not dx.any() and not dW.any() and not db.any()


class TestLstm:
    def test_zero_params_give_zero_states(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        hs, _ = L.lstm_forward(x, np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        assert not hs.any()

    def test_initial_cell_state_blocks_forget_gate(self):
        # with c0 = 0 the forget path contributes nothing at t=1 no matter
        # what its parameters are
        H = 2
        x = np.ones((1, 3))
        Wx = np.zeros((3, 4 * H))
        b = np.zeros(4 * H)
        for forget_bias in (-5.0, 0.0, 5.0):
            b2 = b.copy()
            b2[H:2 * H] = forget_bias
            hs, _ = L.lstm_forward(x, Wx, np.zeros((H, 4 * H)), b2)
            assert not hs.any()

    def test_shapes_and_all_steps_returned(self):
        rng = Rng(1)
        Wx, Wh, b = L.lstm_init(rng, 4, 6, dtype=np.float64)
        x = rng.child("x").normal(size=(5, 4))
        hs, _ = L.lstm_forward(x, Wx, Wh, b)
        assert hs.shape == (5, 6)

    def test_forget_bias_initialized_to_one(self):
        _, _, b = L.lstm_init(Rng(0), 3, 4)
        assert np.array_equal(b[4:8], np.ones(4, dtype=np.float32))
        assert not b[:4].any() and not b[8:].any()


class TestSoftmaxXent:
    def test_uniform_logits(self):
        loss, probs = L.softmax_xent(np.zeros((3, 5)), np.array([0, 2, 4]))
        assert np.allclose(probs, 0.2)
        assert np.isclose(loss, np.log(5.0))

    def test_saturated_true_class(self):
        logits = np.array([[0.0, 1000.0]])
        loss, _ = L.softmax_xent(logits, np.array([1]))
        assert loss < 1e-8

    def test_closed_form_oracle(self):
        # probs = [1, 3] / 4, loss = -ln(0.75)
        loss, probs = L.softmax_xent(np.array([[0.0, np.log(3.0)]]), np.array([1]))
        assert np.allclose(probs, [[0.25, 0.75]], atol=1e-12)
        assert np.isclose(loss, -np.log(0.75))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="index 1"):
            L.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))

    def test_rows_sum_to_one_and_open_interval(self):
        logits = Rng(3).normal(scale=3.0, size=(50, 7))
        probs = L.softmax(logits)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0.0) and np.all(probs < 1.0)

    def test_gradient_formula(self):
        logits = Rng(4).normal(size=(4, 3))
        labels = np.array([0, 1, 2, 1])
        _, probs = L.softmax_xent(logits, labels)
        d = L.softmax_xent_backward(probs, labels)
        onehot = np.eye(3)[labels]
        assert np.allclose(d, (probs - onehot) / 4)


class TestBackwardFiniteDifferences:
    """Analytic gradients vs central differences, float64, small shapes."""

    @pytest.mark.parametrize("name", sorted(gc.LAYER_CHECKS))
    def test_layer(self, name):
        worst = max(gc.LAYER_CHECKS[name](seed) for seed in range(2))
        assert worst < gc.LAYER_TOL, f"{name}: worst rel err {worst:.3e}"
