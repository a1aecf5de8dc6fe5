import math

import numpy as np
import pytest

import copyalign.autograd as ag
from copyalign.autograd import Parameter, Tensor, grad_check, sgd_step
from copyalign.errors import DimensionError, OptimizerError


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        a = Tensor([[2.0, -1.0], [0.5, 3.0]])
        out = ag.matmul(eye, a)
        assert np.allclose(out.data, a.data)

    def test_hand_product(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        out = ag.matmul(a, b)
        assert np.allclose(out.data, [[3.0], [7.0]])

    def test_backward_of_sum(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((4, 3)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.standard_normal((3, 5)), requires_grad=True, dtype=np.float64)
        ag.tsum(ag.matmul(a, b)).backward()
        # d(sum(ab))/da = ones @ b^T
        assert np.allclose(a.grad, np.ones((4, 5)) @ b.data.T)
        assert grad_check(ag.matmul, [a, b]) < 1e-4

    def test_shape_mismatch_names_both_shapes(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((4, 2)))
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            ag.matmul(a, b)


class TestConv2d:
    def test_zero_input_zero_bias(self):
        x = Tensor(np.zeros((1, 4, 4)))
        w = Tensor(np.random.default_rng(0).standard_normal((2, 1, 3, 3)))
        b = Tensor(np.zeros(2))
        out = ag.conv2d(x, w, b, padding=1)
        assert out.shape == (2, 4, 4)
        assert np.all(out.data == 0)

    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 4, 4)))
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = ag.conv2d(x, Tensor(w), Tensor(np.zeros(1)), padding=1)
        assert np.allclose(out.data, x.data, atol=1e-6)

    def test_shapes_and_gradients_2x2(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.standard_normal((2, 5, 5)), requires_grad=True, dtype=np.float64)
        w = Tensor(rng.standard_normal((3, 2, 2, 2)), requires_grad=True, dtype=np.float64)
        b = Tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
        out = ag.conv2d(x, w, b, padding=0)
        assert out.shape == (3, 4, 4)
        err = grad_check(lambda *t: ag.conv2d(*t, padding=0), [x, w, b])
        assert err < 1e-4

    def test_padding_preserves_size(self):
        x = Tensor(np.random.default_rng(3).standard_normal((1, 7, 9)))
        w = Tensor(np.random.default_rng(4).standard_normal((4, 1, 3, 3)))
        out = ag.conv2d(x, w, Tensor(np.zeros(4)), padding=1)
        assert out.shape == (4, 7, 9)

    def test_kernel_larger_than_input(self):
        x = Tensor(np.zeros((1, 1, 1)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        with pytest.raises(DimensionError, match="larger than"):
            ag.conv2d(x, w, Tensor(np.zeros(1)), padding=0)


class TestActivations:
    def test_relu_negative_is_zero(self):
        x = Tensor([-3.0, -0.5, 0.0, 2.0])
        out = ag.relu(x)
        assert np.allclose(out.data, [0.0, 0.0, 0.0, 2.0])

    def test_softmax_equal_logits(self):
        x = Tensor(np.zeros((3, 2, 2)))
        out = ag.softmax(x, axis=0)
        assert np.allclose(out.data, 1.0 / 3.0)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((3, 6, 6)) * 10)
        out = ag.softmax(x, axis=0)
        assert np.allclose(out.data.sum(axis=0), 1.0, atol=1e-6)
        assert np.all(out.data > 0)

    def test_softmax_empty_axis(self):
        with pytest.raises(DimensionError):
            ag.softmax(Tensor(np.zeros((0, 4))), axis=0)

    def test_softmax_stable_on_large_logits(self):
        x = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
        out = ag.softmax(x, axis=-1)
        assert np.all(np.isfinite(out.data))

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((5, 16)) * 4 + 2)
        out = ag.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(out.data.var(axis=-1), 1.0, atol=1e-3)


class TestAttention:
    def test_identical_keys_yield_mean_of_values(self):
        rng = np.random.default_rng(7)
        q = Tensor(rng.standard_normal((1, 4, 8)))
        k = Tensor(np.tile(rng.standard_normal((1, 1, 8)), (1, 4, 1)))
        v = Tensor(rng.standard_normal((1, 4, 8)))
        out = ag.scaled_dot_attention(q, k, v, heads=1)
        assert np.allclose(out.data, v.data.mean(axis=1, keepdims=True), atol=1e-6)

    def test_single_position_passes_values_through(self):
        rng = np.random.default_rng(8)
        q = Tensor(rng.standard_normal((1, 1, 8)))
        k = Tensor(rng.standard_normal((1, 1, 8)))
        v = Tensor(rng.standard_normal((1, 1, 8)))
        out = ag.scaled_dot_attention(q, k, v, heads=2)
        assert np.allclose(out.data, v.data, atol=1e-6)

    def test_head_mismatch(self):
        x = Tensor(np.zeros((1, 4, 9)))
        with pytest.raises(DimensionError):
            ag.scaled_dot_attention(x, x, x, heads=2)


class TestGradCheckProperties:
    """Reverse-mode gradients match central differences on random inputs."""

    @pytest.mark.parametrize("seed", range(3))
    def test_randomized_ops(self, seed):
        rng = np.random.default_rng(seed)
        side = int(rng.integers(2, 9))
        x = Tensor(rng.standard_normal((side, side)), requires_grad=True,
                   dtype=np.float64)
        assert grad_check(lambda t: ag.softmax(t, axis=-1), [x], rng=rng) < 1e-4
        assert grad_check(ag.l2_normalize_rows, [x], rng=rng) < 1e-4
        y = Tensor(rng.standard_normal((side, side)), requires_grad=True,
                   dtype=np.float64)
        assert grad_check(ag.mul, [x, y], rng=rng) < 1e-4

    def test_attention_gradients(self):
        rng = np.random.default_rng(11)
        tensors = [Tensor(rng.standard_normal((1, 5, 8)), requires_grad=True,
                          dtype=np.float64) for _ in range(3)]
        err = grad_check(lambda q, k, v: ag.scaled_dot_attention(q, k, v, heads=2),
                         tensors, rng=rng)
        assert err < 1e-4

    def test_layer_norm_gradients(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.standard_normal((3, 8)), requires_grad=True, dtype=np.float64)
        g = Tensor(1 + 0.2 * rng.standard_normal(8), requires_grad=True, dtype=np.float64)
        b = Tensor(0.2 * rng.standard_normal(8), requires_grad=True, dtype=np.float64)
        assert grad_check(ag.layer_norm, [x, g, b], rng=rng) < 1e-4


class TestSGD:
    def test_no_grad_no_motion(self):
        p = Parameter("w", [1.0, 2.0])
        p.zero_grad()
        sgd_step([p], lr=0.1, momentum=0.0, weight_decay=0.0)
        assert np.allclose(p.data, [1.0, 2.0])

    def test_single_scalar_update(self):
        p = Parameter("w", [1.0])
        p.tensor.grad = np.array([1.0], dtype=np.float32)
        sgd_step([p], lr=0.1, momentum=0.0, weight_decay=0.0)
        assert np.allclose(p.data, [0.9])

    def test_two_momentum_steps(self):
        p = Parameter("w", [0.0])
        for _ in range(2):
            p.tensor.grad = np.array([1.0], dtype=np.float32)
            sgd_step([p], lr=0.1, momentum=0.9, weight_decay=0.0)
        assert np.allclose(p.data, [-0.29], atol=1e-7)

    def test_missing_gradient_names_parameter(self):
        p = Parameter("conv1_weight", np.zeros(3))
        with pytest.raises(OptimizerError, match="conv1_weight"):
            sgd_step([p], lr=0.1)

    def test_weight_decay(self):
        p = Parameter("w", [2.0])
        p.tensor.grad = np.array([0.0], dtype=np.float32)
        sgd_step([p], lr=0.1, momentum=0.0, weight_decay=0.5)
        # buffer = 0 + 0.5*2 = 1; w = 2 - 0.1
        assert np.allclose(p.data, [1.9])


class TestTensorBasics:
    def test_zero_grad_zeroes_everything(self):
        t = Tensor(np.ones((3, 3)), requires_grad=True)
        t.grad = np.full((3, 3), 7.0)
        t.zero_grad()
        assert np.all(t.grad == 0)
        assert t.grad.shape == t.data.shape

    def test_grad_accumulates_across_uses(self):
        x = Tensor([2.0], requires_grad=True)
        out = ag.add(ag.mul(x, x), x)  # x^2 + x
        out.backward(np.array([1.0]))
        assert np.allclose(x.grad, [5.0])

    def test_backward_needs_scalar(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(DimensionError):
            ag.mul(x, x).backward()

    def test_clamp_min_blocks_gradient_below_floor(self):
        x = Tensor([0.5, 1e-9], requires_grad=True, dtype=np.float64)
        ag.tsum(ag.log(ag.clamp_min(x, 1e-7))).backward()
        assert x.grad[0] == pytest.approx(2.0)
        assert x.grad[1] == 0.0
