import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bacerul import nn
from bacerul.errors import ConfigError, NumericError, ShapeError, UsageError
from bacerul.nn import LayerSpec, MlpParams, MlpSpec


def small_spec(dropout=0.0):
    return MlpSpec((LayerSpec(3, 4, "relu"), LayerSpec(4, 1, "sigmoid")), dropout)


def linear_identity(dim=2):
    spec = MlpSpec((LayerSpec(dim, dim, "linear"),))
    return MlpParams(spec, [np.eye(dim)], [np.zeros(dim)])


class TestInit:
    def test_shapes_and_bounds(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(3))
        assert [w.shape for w in p.weights] == [(4, 3), (1, 4)]
        assert [b.shape for b in p.biases] == [(4,), (1,)]
        assert np.all(np.abs(p.weights[0]) <= np.sqrt(6 / 7))
        assert np.all(np.abs(p.weights[1]) <= np.sqrt(6 / 5))
        assert all(np.all(b == 0) for b in p.biases)

    def test_same_seed_identical(self):
        a = nn.init_mlp(small_spec(), nn.make_rng(11))
        b = nn.init_mlp(small_spec(), nn.make_rng(11))
        assert a.equals(b)

    def test_different_seed_differs(self):
        a = nn.init_mlp(small_spec(), nn.make_rng(1))
        b = nn.init_mlp(small_spec(), nn.make_rng(2))
        assert not a.equals(b)

    def test_incompatible_layers(self):
        with pytest.raises(ConfigError):
            MlpSpec((LayerSpec(3, 4), LayerSpec(5, 1)))

    def test_bad_dropout(self):
        with pytest.raises(ConfigError):
            MlpSpec((LayerSpec(1, 1),), dropout_rate=1.0)


class TestForward:
    def test_identity_linear(self):
        out, _ = nn.forward(linear_identity(), np.array([1.5, -2.0]))
        np.testing.assert_array_equal(out, [1.5, -2.0])

    def test_zero_sigmoid(self):
        spec = MlpSpec((LayerSpec(3, 2, "sigmoid"),))
        p = MlpParams(spec, [np.zeros((2, 3))], [np.zeros(2)])
        out, _ = nn.forward(p, np.array([4.0, -1.0, 9.0]))
        np.testing.assert_array_equal(out, [0.5, 0.5])

    def test_eval_ignores_dropout(self):
        p = nn.init_mlp(small_spec(dropout=0.2), nn.make_rng(0))
        x = np.array([0.3, -0.2, 1.0])
        a, _ = nn.forward(p, x, "eval")
        b, _ = nn.forward(p, x, "eval")
        np.testing.assert_array_equal(a, b)

    def test_width_mismatch(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(0))
        with pytest.raises(ShapeError):
            nn.forward(p, np.ones(4))

    def test_batch_matches_rows(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(0))
        xs = nn.make_rng(1).normal(size=(5, 3))
        batch, _ = nn.forward(p, xs)
        rows = np.stack([nn.forward(p, x)[0] for x in xs])
        np.testing.assert_allclose(batch, rows, rtol=0, atol=1e-15)

    def test_sigmoid_extremes_stay_finite(self):
        spec = MlpSpec((LayerSpec(1, 1, "sigmoid"),))
        p = MlpParams(spec, [np.array([[1.0]])], [np.zeros(1)])
        out, _ = nn.forward(p, np.array([[1e4], [-1e4]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == 1.0 and out[1, 0] == 0.0

    def test_inverted_dropout_mean_matches_eval(self):
        # exact in expectation only when a linear map follows the dropped layer
        spec = MlpSpec((LayerSpec(3, 6, "relu"), LayerSpec(6, 2, "linear")), 0.2)
        p = nn.init_mlp(spec, nn.make_rng(5))
        p.biases[0][:] = 0.3
        x = np.array([0.5, -1.0, 2.0])
        ref, _ = nn.forward(p, x, "eval")
        # 1e5 independent mask draws in one batched call
        tiled = np.tile(x, (100_000, 1))
        out, _ = nn.forward(p, tiled, "train", nn.make_rng(9))
        rel = np.abs(out.mean(axis=0) - ref) / np.abs(ref)
        assert np.all(rel < 0.02)


class TestBackward:
    def test_linear_gradients(self):
        spec = MlpSpec((LayerSpec(3, 2, "linear"),))
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        p = MlpParams(spec, [w], [np.zeros(2)])
        x = np.array([0.5, -1.0, 2.0])
        _, cache = nn.forward(p, x)
        grads, gin = nn.backward(p, cache, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(grads[0][0], x)
        np.testing.assert_array_equal(grads[0][1], 0.0)
        np.testing.assert_array_equal(gin, w[0])

    def test_zero_upstream(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(0))
        _, cache = nn.forward(p, np.ones(3))
        grads, gin = nn.backward(p, cache, np.zeros(1))
        assert all(np.all(g == 0) for g in grads)
        assert np.all(gin == 0)

    def test_stale_cache_rejected(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(0))
        _, cache = nn.forward(p, np.ones(3))
        nn.adam_step(nn.AdamState.for_params(p), p, p.zeros_like())
        with pytest.raises(UsageError):
            nn.backward(p, cache, np.ones(1))

    def test_foreign_cache_rejected(self):
        p = nn.init_mlp(small_spec(), nn.make_rng(0))
        q = p.copy()
        _, cache = nn.forward(p, np.ones(3))
        with pytest.raises(UsageError):
            nn.backward(q, cache, np.ones(1))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        rng = nn.make_rng(seed)
        dims = rng.integers(1, 6, size=3)
        spec = MlpSpec.build(int(dims[0]), (int(dims[1]),), int(dims[2]), "sigmoid")
        p = nn.init_mlp(spec, rng)
        p.biases[0][:] = rng.uniform(0.1, 0.5, p.biases[0].shape)
        x = rng.normal(size=(4, int(dims[0])))
        upstream = rng.normal(size=(4, int(dims[2])))

        def loss():
            out, cache = nn.forward(p, x)
            return float(np.sum(out * upstream)), nn.backward(p, cache, upstream)[0]

        assert nn.grad_check(loss, p.arrays(), 1e-5) < 1e-4

    def test_input_gradient(self):
        rng = nn.make_rng(4)
        p = nn.init_mlp(MlpSpec.build(4, (5,), 2, "linear"), rng)
        p.biases[0][:] = 0.2
        x = rng.normal(size=(3, 4))
        up = rng.normal(size=(3, 2))

        def loss():
            out, cache = nn.forward(p, x)
            return float(np.sum(out * up)), [nn.backward(p, cache, up)[1]]

        assert nn.grad_check(loss, [x], 1e-5) < 1e-4


class TestAdam:
    def scalar(self, w0):
        spec = MlpSpec((LayerSpec(1, 1, "linear"),))
        return MlpParams(spec, [np.array([[w0]])], [np.zeros(1)])

    def test_first_step_magnitude(self):
        p = self.scalar(0.0)
        state = nn.AdamState.for_params(p, 0.001)
        nn.adam_step(state, p, [np.array([[2.0]]), np.zeros(1)])
        # m_hat = g and v_hat = g^2 after bias correction
        expected = -0.001 * 2.0 / (2.0 + 1e-8)
        assert p.weights[0][0, 0] == pytest.approx(expected, rel=1e-12)
        assert state.step_count == 1

    def test_zero_grad_no_change(self):
        p = self.scalar(0.7)
        nn.adam_step(nn.AdamState.for_params(p), p, p.zeros_like())
        assert p.weights[0][0, 0] == 0.7

    def test_quadratic_descent(self):
        p = self.scalar(1.0)
        state = nn.AdamState.for_params(p, 0.01)
        # independent scalar recursion of the same update rule
        w, m, v = 1.0, 0.0, 0.0
        for t in range(1, 101):
            nn.adam_step(state, p, [np.array([[2 * p.weights[0][0, 0]]]), np.zeros(1)])
            g = 2 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert abs(p.weights[0][0, 0]) < 1.0
        assert p.weights[0][0, 0] == pytest.approx(w, rel=1e-12)
        assert state.step_count == 100

    def test_shape_mismatch(self):
        p = self.scalar(0.0)
        with pytest.raises(ShapeError):
            nn.adam_step(nn.AdamState.for_params(p), p, [np.zeros((2, 1)), np.zeros(1)])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
    def test_finite(self, g):
        p = self.scalar(0.5)
        state = nn.AdamState.for_params(p)
        for _ in range(3):
            nn.adam_step(state, p, [np.array([[g[0]]]), np.array([g[1]])])
        assert all(np.all(np.isfinite(a)) for a in p.arrays())
        assert all(np.all(v >= 0) for v in state.v)


class TestSampling:
    def test_range(self):
        v = nn.sample_uniform(nn.make_rng(0), 4, -1.0, 1.0)
        assert v.shape == (4,)
        assert np.all((v >= -1.0) & (v < 1.0))

    def test_reproducible(self):
        a = nn.sample_uniform(nn.make_rng(7), 6)
        b = nn.sample_uniform(nn.make_rng(7), 6)
        np.testing.assert_array_equal(a, b)

    def test_mean(self):
        v = nn.sample_uniform(nn.make_rng(1), 100_000, -1.0, 1.0)
        assert abs(v.mean()) < 0.02

    def test_bad_bounds(self):
        with pytest.raises(ConfigError):
            nn.sample_uniform(nn.make_rng(0), 3, 1.0, 1.0)


class TestGradCheck:
    def test_sum_loss(self):
        arrs = [nn.make_rng(0).normal(size=(3, 2)), np.ones(4)]
        err = nn.grad_check(lambda: (float(sum(a.sum() for a in arrs)), [np.ones_like(a) for a in arrs]), arrs)
        assert err < 1e-10

    def test_constant_loss(self):
        arrs = [np.ones(3)]
        assert nn.grad_check(lambda: (0.0, [np.zeros(3)]), arrs) == 0.0

    def test_wrong_gradient_detected(self):
        arrs = [np.ones(3)]
        assert nn.grad_check(lambda: (float(arrs[0].sum()), [np.zeros(3)]), arrs) > 0.5

    def test_restores_params(self):
        a = nn.make_rng(0).normal(size=5)
        before = a.copy()
        nn.grad_check(lambda: (float((a ** 2).sum()), [2 * a]), [a])
        np.testing.assert_array_equal(a, before)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            nn.grad_check(lambda: (float("nan"), [np.zeros(1)]), [np.zeros(1)])
