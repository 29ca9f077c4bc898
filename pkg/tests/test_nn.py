import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import central_diff, rel_err
from ifedrec.exceptions import DimensionError, DomainError, TrainingError
from ifedrec.nn import (
    Layer,
    MlpParams,
    bce_loss_and_grad,
    bce_with_logits,
    init_mlp,
    laplace_sample,
    mlp_backward,
    mlp_forward,
    mse_loss_and_grad,
    sgd_step,
    sigmoid,
)


def straight_line_forward(params, x):
    """Element-by-element re-evaluation, deliberately loop based."""
    rows = []
    for row in x:
        h = [float(v) for v in row]
        for layer in params.layers:
            out = []
            for j in range(layer.out_dim):
                z = float(layer.bias[j])
                for i in range(layer.in_dim):
                    z += h[i] * float(layer.weight[i, j])
                if layer.activation == "relu":
                    z = z if z > 0 else 0.0
                elif layer.activation == "sigmoid":
                    z = 1.0 / (1.0 + math.exp(-z))
                out.append(z)
            h = out
        rows.append(h)
    return np.array(rows)


class TestForward:
    def test_identity_net(self):
        net = MlpParams((Layer(np.eye(2), np.zeros(2), "identity"),))
        np.testing.assert_array_equal(mlp_forward(net, [[1.0, 2.0]]), [[1.0, 2.0]])

    def test_constant_sigmoid(self):
        net = MlpParams((Layer(np.zeros((3, 1)), [0.5], "sigmoid"),))
        out = mlp_forward(net, np.random.default_rng(0).normal(size=(4, 3)))
        np.testing.assert_allclose(out, 0.62246, atol=1e-5)
        np.testing.assert_allclose(out, 1 / (1 + math.exp(-0.5)), atol=1e-9)

    def test_matches_straight_line(self, rng):
        net = init_mlp([3, 4, 1], rng, output_activation="sigmoid")
        # non-zero biases so the bias path is exercised
        net = net.with_parameters({"layers.0.bias": rng.normal(size=4), "layers.1.bias": rng.normal(size=1)})
        x = rng.uniform(-1, 1, size=(6, 3))
        np.testing.assert_allclose(mlp_forward(net, x), straight_line_forward(net, x), atol=1e-12, rtol=0)

    def test_deterministic(self, rng):
        net = init_mlp([5, 3, 2], rng)
        x = rng.normal(size=(7, 5))
        a, b = mlp_forward(net, x), mlp_forward(net, x)
        assert a.tobytes() == b.tobytes()

    def test_shape_error_names_both_shapes(self, rng):
        net = init_mlp([3, 2], rng)
        with pytest.raises(DimensionError, match=r"\(2, 4\).*\(3, 2\)"):
            mlp_forward(net, np.zeros((2, 4)))

    def test_layer_chain_checked(self):
        with pytest.raises(DimensionError):
            MlpParams((Layer(np.zeros((2, 3)), np.zeros(3)), Layer(np.zeros((4, 1)), np.zeros(1))))
        with pytest.raises(DimensionError):
            Layer(np.zeros((2, 3)), np.zeros(2))


class TestBackward:
    def test_zero_upstream(self, rng):
        net = init_mlp([4, 5, 3], rng)
        x = rng.normal(size=(3, 4))
        grads, gx = mlp_backward(net, x, np.zeros((3, 3)))
        assert all(not np.any(g) for g in grads.values())
        assert not np.any(gx)

    def test_linear_input_grad(self, rng):
        W = rng.normal(size=(3, 2))
        net = MlpParams((Layer(W, np.zeros(2)),))
        up = rng.normal(size=(5, 2))
        _, gx = mlp_backward(net, rng.normal(size=(5, 3)), up)
        np.testing.assert_array_equal(gx, up @ W.T)

    @pytest.mark.parametrize("out_act", ["identity", "sigmoid"])
    def test_finite_differences(self, rng, out_act):
        net = init_mlp([3, 4, 2], rng, output_activation=out_act)
        net = net.with_parameters({"layers.0.bias": rng.uniform(-1, 1, 4)})
        x = rng.uniform(-1, 1, size=(5, 3))
        c = rng.uniform(-1, 1, size=(5, 2))
        params = {k: v.copy() for k, v in net.parameters().items()}

        def loss():
            return float(np.sum(c * mlp_forward(net.with_parameters(params), x)))

        grads, gx = mlp_backward(net, x, c)
        for name, value in params.items():
            assert rel_err(grads[name], central_diff(loss, value)) < 1e-4, name
        assert rel_err(gx, central_diff(lambda: float(np.sum(c * mlp_forward(net, x))), x)) < 1e-4

    def test_upstream_shape_checked(self, rng):
        net = init_mlp([3, 2], rng)
        with pytest.raises(DimensionError):
            mlp_backward(net, np.zeros((4, 3)), np.zeros((4, 3)))


class TestBCE:
    def test_symmetric_point(self):
        loss, g = bce_loss_and_grad([0.5], [1])
        assert loss == pytest.approx(0.693147, abs=1e-6)
        np.testing.assert_allclose(g, [-0.5])

    def test_closed_form(self):
        loss, _ = bce_loss_and_grad([0.9, 0.1], [1, 0])
        assert loss == pytest.approx(0.210721, abs=1e-6)

    @pytest.mark.parametrize("bad", [0.0, 1.0, 1.2, -0.1, float("nan")])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            bce_loss_and_grad([0.3, bad], [1, 0])

    def test_batch_finite_differences(self, rng):
        z = rng.uniform(-3, 3, size=64)
        y = (rng.random(64) < 0.3).astype(float)
        loss, g = bce_loss_and_grad(sigmoid(z), y)
        fd = central_diff(lambda: bce_loss_and_grad(sigmoid(z), y)[0], z)
        assert rel_err(g, fd) < 1e-4
        assert bce_with_logits(z, y)[0] == pytest.approx(loss, rel=1e-12)
        np.testing.assert_allclose(bce_with_logits(z, y)[1], g, atol=1e-15)

    def test_logit_form_is_stable(self):
        loss, g = bce_with_logits([800.0, -800.0], [0, 1])
        assert loss == pytest.approx(1600.0)
        np.testing.assert_allclose(g, [1.0, -1.0])


class TestMSE:
    def test_identity(self, rng):
        a = rng.normal(size=(4, 3))
        loss, g = mse_loss_and_grad(a, a.copy())
        assert loss == 0.0 and not np.any(g)

    def test_closed_form(self):
        loss, g = mse_loss_and_grad([[1.0, 1.0]], [[0.0, 0.0]])
        assert loss == 2.0
        np.testing.assert_array_equal(g, [[2.0, 2.0]])

    def test_straight_line(self, rng):
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        total = 0.0
        for i in range(5):
            for j in range(3):
                total += (a[i, j] - b[i, j]) ** 2
        loss, g = mse_loss_and_grad(a, b)
        assert abs(loss - total / 5) < 1e-12
        np.testing.assert_allclose(g, 2 * (a - b) / 5, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss_and_grad(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSGD:
    def test_zero_lr_identity(self, rng):
        net = init_mlp([3, 2], rng)
        grads = {k: rng.normal(size=v.shape) for k, v in net.parameters().items()}
        out = sgd_step(net, grads, 0.0)
        for k, v in net.parameters().items():
            np.testing.assert_array_equal(out.parameters()[k], v)

    def test_closed_form(self):
        out = sgd_step({"theta": np.array([1.0])}, {"theta": np.array([0.5])}, 0.1)
        np.testing.assert_allclose(out["theta"], [0.95])

    def test_non_finite_gradient_named(self):
        with pytest.raises(TrainingError, match="theta"):
            sgd_step({"theta": np.ones(2)}, {"theta": np.array([1.0, np.inf])}, 0.1)

    def test_quadratic_descent(self):
        # one-input linear unit fitted to a single target: convex quadratic
        net = MlpParams((Layer([[0.3]], [0.0]),))
        x, target = np.array([[1.0]]), np.array([[2.0]])
        losses = []
        for _ in range(100):
            loss, g = mse_loss_and_grad(mlp_forward(net, x), target)
            losses.append(loss)
            grads, _ = mlp_backward(net, x, g)
            net = sgd_step(net, grads, 0.1)
        losses.append(mse_loss_and_grad(mlp_forward(net, x), target)[0])
        assert all(b <= a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-6


class TestLaplace:
    def test_zero_scale(self, rng):
        np.testing.assert_array_equal(laplace_sample(rng, 0.0, (3, 2)), np.zeros((3, 2)))

    def test_reproducible(self):
        a = laplace_sample(np.random.default_rng(5), 0.2, (10, 10))
        b = laplace_sample(np.random.default_rng(5), 0.2, (10, 10))
        assert a.tobytes() == b.tobytes()

    def test_negative_scale(self, rng):
        with pytest.raises(DomainError):
            laplace_sample(rng, -0.1, (2,))

    def test_moments(self):
        x = laplace_sample(np.random.default_rng(11), 0.3, (10**6,))
        assert abs(x.mean()) < 0.005
        assert abs(x.var() / 0.18 - 1) < 0.05

    def test_inverse_cdf_at_edges(self):
        class Fixed:
            def integers(self, low, high, size):
                return np.array([0, 2**51, high - 1])

        x = laplace_sample(Fixed(), 1.0, (3,))
        assert np.all(np.isfinite(x))
        assert abs(x[1]) < 1e-15
        assert x[0] < -30 and x[2] > 30


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradients_match_finite_differences_randomized(seed):
    rng = np.random.default_rng(seed)
    sizes = [int(rng.integers(1, 4)) for _ in range(3)]
    net = init_mlp(sizes, rng)
    net = net.with_parameters({f"layers.{i}.bias": rng.uniform(-1, 1, n) for i, n in enumerate(sizes[1:])})
    x = rng.uniform(-1, 1, size=(3, sizes[0]))
    c = rng.uniform(-1, 1, size=(3, sizes[-1]))
    params = {k: v.copy() for k, v in net.parameters().items()}
    grads, _ = mlp_backward(net, x, c)
    for name, value in params.items():
        fd = central_diff(lambda: float(np.sum(c * mlp_forward(net.with_parameters(params), x))), value)
        assert rel_err(grads[name], fd) < 1e-4
