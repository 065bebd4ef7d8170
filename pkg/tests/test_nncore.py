import math

import numpy as np
import pytest

from coughscreen import nncore as nn
from coughscreen.errors import GraphNotBuilt, LengthMismatch, ShapeMismatch

from oracles import conv2d_loops, max_rel_error, maxpool_loops, numeric_grad


def T(a, grad=True):
    return nn.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def grad_check(make_output, tensors, rng, h=1e-4, max_entries=40):
    """Compare backward() with central differences of sum(out * R)."""
    out = make_output()
    weights = rng.standard_normal(out.shape)

    def scalar():
        return float(np.sum(make_output().data * weights))

    for t in tensors:
        t.grad = None
    out = make_output()
    out.backward(weights)
    worst = 0.0
    for t in tensors:
        size = t.data.size
        idx = range(size) if size <= max_entries else rng.choice(size, max_entries, replace=False)
        num = numeric_grad(scalar, t.data, h, [int(i) for i in idx])
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_rel_error(analytic, num))
    return worst


class TestConv:
    def test_sum_of_ones(self):
        out = nn.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1) and out.data.item() == 9.0

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 3, 5, 4))
        out = nn.conv2d(T(x), T(np.eye(3).reshape(3, 3, 1, 1)))
        np.testing.assert_array_equal(out.data, x)

    def test_against_loops(self, rng):
        x, w = rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3))
        np.testing.assert_allclose(nn.conv2d(T(x), T(w), 2, 1).data, conv2d_loops(x, w, 2, 1),
                                   rtol=1e-10, atol=1e-12)

    def test_random_configs_against_loops(self, rng):
        for _ in range(100):
            k = int(rng.integers(1, 4))
            stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, 3))
            h, wd = int(rng.integers(k, 8)), int(rng.integers(k, 8))
            c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            x, w = rng.standard_normal((1, c, h, wd)), rng.standard_normal((o, c, k, k))
            out = nn.conv2d(T(x, False), T(w, False), stride, pad).data
            assert out.shape[2] == (h + 2 * pad - k) // stride + 1
            np.testing.assert_allclose(out, conv2d_loops(x, w, stride, pad), rtol=1e-10, atol=1e-12)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            nn.conv2d(T(np.ones((1, 2, 3, 3))), T(np.ones((1, 1, 3, 3))))
        with pytest.raises(ShapeMismatch):
            nn.conv2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 3, 3))))
        with pytest.raises(ValueError):
            nn.conv2d(T(np.ones((1, 1, 3, 3))), T(np.ones((1, 1, 1, 1))), stride=0)


class TestBatchNorm:
    def test_train_mode_standardises(self, rng):
        # output variance is var / (var + eps), within 1e-6 of 1 once var > 10
        x = rng.standard_normal((4, 3, 5, 5)) * 5 + 2
        st = nn.BatchNormState.fresh(3, np.float64)
        out = nn.batchnorm2d(T(x), T(np.ones(3)), T(np.zeros(3)), st).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-6)
        var = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), var / (var + 1e-5), rtol=1e-12)

    def test_zero_gamma_gives_beta(self, rng):
        st = nn.BatchNormState.fresh(2, np.float64)
        out = nn.batchnorm2d(T(rng.standard_normal((2, 2, 3, 3))), T(np.zeros(2)),
                             T([0.5, -1.0]), st).data
        np.testing.assert_array_equal(out[:, 0], 0.5)
        np.testing.assert_array_equal(out[:, 1], -1.0)

    def test_formula_and_running_stats(self, rng):
        x = rng.standard_normal((3, 2, 4, 4))
        g, b = rng.uniform(0.5, 2, 2), rng.standard_normal(2)
        st = nn.BatchNormState.fresh(2, np.float64)
        out = nn.batchnorm2d(T(x), T(g), T(b), st).data
        for c in range(2):
            v = x[:, c].ravel()
            mu = sum(v) / len(v)
            var = sum((e - mu) ** 2 for e in v) / len(v)
            ref = (x[:, c] - mu) / math.sqrt(var + 1e-5) * g[c] + b[c]
            np.testing.assert_allclose(out[:, c], ref, rtol=1e-12, atol=1e-12)
            unbiased = var * len(v) / (len(v) - 1)
            assert st.running_mean[c] == pytest.approx(0.1 * mu, rel=1e-12)
            assert st.running_var[c] == pytest.approx(0.9 + 0.1 * unbiased, rel=1e-12)

    def test_eval_uses_running_stats(self, rng):
        st = nn.BatchNormState(np.array([1.0]), np.array([4.0]))
        x = rng.standard_normal((2, 1, 3, 3))
        out = nn.batchnorm2d(T(x), T([2.0]), T([0.5]), st, train=False).data
        np.testing.assert_allclose(out, (x - 1) / math.sqrt(4 + 1e-5) * 2 + 0.5, rtol=1e-12)
        assert st.running_mean[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.batchnorm2d(T(np.ones((1, 3, 2, 2))), T(np.ones(2)), T(np.zeros(2)),
                           nn.BatchNormState.fresh(2))


class TestPoolingAndHead:
    def test_relu(self):
        np.testing.assert_array_equal(nn.relu(T([-2.0, 0.0, 3.0])).data, [0.0, 0.0, 3.0])

    def test_maxpool_single_peak(self):
        x = np.zeros((1, 1, 7, 7))
        x[0, 0, 3, 4] = 9.0
        out = nn.maxpool2d(T(x)).data
        ref = maxpool_loops(x, 3, 2, 1)
        np.testing.assert_array_equal(out, ref)
        covering = [(i, j) for i in range(4) for j in range(4)
                    if abs(2 * i - 3) <= 1 and abs(2 * j - 4) <= 1]
        assert covering and all(out[0, 0, i, j] == 9.0 for i, j in covering)

    def test_pools_against_loops(self, rng):
        for _ in range(100):
            k = int(rng.integers(1, 4))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
            x = rng.standard_normal((2, 2, int(rng.integers(k, 9)), int(rng.integers(k, 9))))
            np.testing.assert_array_equal(nn.maxpool2d(T(x, False), k, stride, pad).data,
                                          maxpool_loops(x, k, stride, pad))
            gap = nn.global_avg_pool(T(x, False)).data
            ref = np.array([[sum(x[b, c].ravel()) / x[b, c].size for c in range(2)] for b in range(2)])
            np.testing.assert_allclose(gap, ref, rtol=1e-12)

    def test_dense(self, rng):
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
        out = nn.dense(T(x), T(w), T(b)).data
        for i in range(3):
            for o in range(2):
                assert out[i, o] == pytest.approx(sum(x[i] * w[o]) + b[o], rel=1e-12)
        with pytest.raises(ShapeMismatch):
            nn.dense(T(x), T(w.T), T(b))

    def test_softmax(self, rng):
        np.testing.assert_array_equal(nn.softmax(T([[0.0, 0.0]])).data, [[0.5, 0.5]])
        big = rng.uniform(-1e4, 1e4, (50, 2))
        p = nn.softmax(T(big)).data
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            nn.add(T(np.ones(2)), T(np.ones(3)))


class TestCrossEntropy:
    def test_values(self):
        assert nn.cross_entropy(T([[0.0, 1.0]]), [1]).data == 0.0
        assert float(nn.cross_entropy(T([[0.5, 0.5]]), [0]).data) == pytest.approx(math.log(2), rel=1e-15)
        assert float(nn.cross_entropy(T([[1.0, 0.0]]), [1]).data) == pytest.approx(-math.log(1e-12))

    def test_against_scalar_loop(self, rng):
        p = rng.uniform(0.01, 1, (6, 2))
        p /= p.sum(axis=1, keepdims=True)
        y = rng.integers(0, 2, 6)
        ref = sum(-math.log(p[i, y[i]]) for i in range(6)) / 6
        assert float(nn.cross_entropy(T(p), y).data) == pytest.approx(ref, rel=1e-13)

    def test_class_weights(self):
        p = np.array([[0.5, 0.5], [0.25, 0.75]])
        loss = float(nn.cross_entropy(T(p), [0, 1], class_weights=[2.0, 1.0]).data)
        assert loss == pytest.approx((2 * math.log(2) - math.log(0.75)) / 2, rel=1e-13)

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            nn.cross_entropy(T([[0.5, 0.5]]), [0, 1])
        with pytest.raises(ValueError):
            nn.cross_entropy(T([[0.5, 0.5]]), [2])

    def test_softmax_ce_gradient_closed_form(self, rng):
        z = T(rng.standard_normal((5, 2)))
        y = rng.integers(0, 2, 5)
        nn.cross_entropy(nn.softmax(z), y).backward()
        p = np.exp(z.data) / np.exp(z.data).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(z.grad, (p - np.eye(2)[y]) / 5, rtol=1e-10, atol=1e-14)


class TestGradients:
    def test_conv(self, rng):
        x, w = T(rng.standard_normal((2, 2, 6, 5))), T(rng.standard_normal((3, 2, 3, 3)))
        assert grad_check(lambda: nn.conv2d(x, w, 2, 1), [x, w], rng) < 1e-3

    @pytest.mark.parametrize("train", [True, False])
    def test_batchnorm(self, rng, train):
        x = T(rng.standard_normal((3, 2, 3, 3)))
        g, b = T(rng.uniform(0.5, 1.5, 2)), T(rng.standard_normal(2))
        st = nn.BatchNormState(np.array([0.1, -0.2]), np.array([1.5, 0.7]))
        assert grad_check(lambda: nn.batchnorm2d(x, g, b, st, train), [x, g, b], rng) < 1e-3

    def test_relu(self, rng):
        v = rng.standard_normal(30)
        x = T(np.where(np.abs(v) < 0.05, 0.5, v))   # keep clear of the kink
        assert grad_check(lambda: nn.relu(x), [x], rng) < 1e-3

    def test_maxpool(self, rng):
        x = T(rng.permutation(2 * 2 * 7 * 6).reshape(2, 2, 7, 6) * 0.01)   # distinct values
        assert grad_check(lambda: nn.maxpool2d(x), [x], rng) < 1e-3

    def test_global_avg_pool(self, rng):
        x = T(rng.standard_normal((2, 3, 4, 5)))
        assert grad_check(lambda: nn.global_avg_pool(x), [x], rng) < 1e-3

    def test_dense(self, rng):
        x, w, b = T(rng.standard_normal((4, 5))), T(rng.standard_normal((2, 5))), T(rng.standard_normal(2))
        assert grad_check(lambda: nn.dense(x, w, b), [x, w, b], rng) < 1e-3

    def test_softmax_and_loss(self, rng):
        z = T(rng.standard_normal((4, 2)))
        y = [0, 1, 1, 0]
        assert grad_check(lambda: nn.softmax(z), [z], rng) < 1e-3
        assert grad_check(lambda: nn.cross_entropy(nn.softmax(z), y, [1.5, 0.5]), [z], rng) < 1e-3

    def test_add(self, rng):
        a, b = T(rng.standard_normal(6)), T(rng.standard_normal(6))
        assert grad_check(lambda: nn.add(nn.relu(a), b), [a, b], rng) < 1e-3

    def test_constant_branch_has_zero_gradient(self, rng):
        w = T(rng.standard_normal((1, 1, 2, 2)))
        x = T(np.zeros((1, 1, 3, 3)), grad=False)
        out = nn.global_avg_pool(nn.conv2d(x, w))
        out.backward(np.ones(out.shape))
        np.testing.assert_array_equal(w.grad, 0)

    def test_backward_without_graph(self):
        with pytest.raises(GraphNotBuilt):
            T([1.0]).backward()

    def test_fanout_accumulates(self):
        a = T([2.0])
        nn.add(a, a).backward(np.ones(1))
        assert a.grad[0] == 2.0


class TestAdam:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        st = nn.AdamState.for_params(p)
        nn.adam_step(p, [np.zeros(2)], st)
        np.testing.assert_array_equal(p[0], [1.0, -2.0])
        assert st.step == 1
        nn.adam_step(p, [None], st)
        assert st.step == 2

    def test_first_step_is_lr_sign(self):
        p = [np.array([0.0, 0.0, 0.0])]
        st = nn.AdamState.for_params(p, lr=1e-4)
        nn.adam_step(p, [np.array([3.0, -0.02, 50.0])], st)
        # m_hat = g, v_hat = g^2 so the step is lr * g / (|g| + eps)
        g = np.array([3.0, -0.02, 50.0])
        np.testing.assert_allclose(p[0], -1e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_hand_computed_second_step(self):
        p = [np.array([1.0])]
        st = nn.AdamState.for_params(p, lr=0.1)
        nn.adam_step(p, [np.array([1.0])], st)
        nn.adam_step(p, [np.array([0.5])], st)
        m = 0.9 * 0.1 * 1.0 + 0.1 * 0.5
        v = 0.999 * 0.001 * 1.0 + 0.001 * 0.25
        step2 = 0.1 * (m / (1 - 0.81)) / (math.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        assert p[0][0] == pytest.approx(1.0 - 0.1 * 1 / (1 + 1e-8) - step2, rel=1e-12)

    def test_quadratic_descent(self):
        p = [np.array([1.0])]
        st = nn.AdamState.for_params(p, lr=0.1)
        for _ in range(200):
            nn.adam_step(p, [2 * p[0]], st)
        assert abs(p[0][0]) < 0.05

    def test_length_mismatch(self):
        p = [np.zeros(2)]
        with pytest.raises(LengthMismatch):
            nn.adam_step(p, [], nn.AdamState.for_params(p))
        with pytest.raises(LengthMismatch):
            nn.adam_step(p, [np.zeros(3)], nn.AdamState.for_params(p))

    def test_optimizer_reads_grads(self):
        w = T([1.0, 2.0])
        opt = nn.Adam([w], lr=0.5)
        nn.cross_entropy(nn.softmax(nn.Tensor(w.data[None, :], requires_grad=False)), [0])
        w.grad = np.array([1.0, -1.0])
        opt.step()
        np.testing.assert_allclose(w.data, [0.5, 2.5], rtol=1e-7)
        assert np.all(opt.state.v[0] >= 0)
        opt.zero_grad()
        assert w.grad is None

    def test_keeps_float32(self):
        p = [np.ones(3, dtype=np.float32)]
        nn.adam_step(p, [np.ones(3, dtype=np.float32)], nn.AdamState.for_params(p))
        assert p[0].dtype == np.float32
