"""Finite-difference and structural checks for the model families."""

import numpy as np
import pytest

from tov.data import DenseData, DenseExample, RngStream, TokenData, TokenExample
from tov.errors import DimensionCapError, DimensionError, EmptySetError
from tov.models import FeatureMap, FeaturizedLinearModel, LogisticModel, ToyTokenModel, model_from_name

GRAD_TOL = 1e-5
HESS_TOL = 1e-4
N_DRAWS = 100


def fd_grad(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def fd_hess_vec(grad, theta, v, h=1e-5):
    return (grad(theta + h * v) - grad(theta - h * v)) / (2 * h)


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def logistic_draw(gen, p=6):
    model = LogisticModel(p, ridge=float(gen.uniform(0, 0.5)))
    ex = DenseExample(gen.standard_normal(p), float(gen.integers(0, 2)))
    return model, ex, gen.standard_normal(p)


_FMAP = FeatureMap(3, 12, seed=7)


def linear_draw(gen):
    model = FeaturizedLinearModel(_FMAP)
    ex = DenseExample(gen.standard_normal(3), float(gen.standard_normal()))
    return model, ex, gen.standard_normal(12)


def token_draw(gen, V=4):
    model = ToyTokenModel(V)
    T = int(gen.integers(1, 6))
    ex = TokenExample(tuple(gen.integers(0, V, int(gen.integers(1, 5))).tolist()),
                      tuple(gen.integers(0, V, T).tolist()))
    return model, ex, gen.standard_normal(model.p)


DRAWS = {"logistic": logistic_draw, "linear": linear_draw, "token": token_draw}


@pytest.mark.parametrize("family", sorted(DRAWS))
class TestFiniteDifferences:
    def test_gradient(self, family):
        gen = RngStream(11, f"fd-grad/{family}").generator()
        for _ in range(N_DRAWS):
            model, ex, theta = DRAWS[family](gen)
            fd = fd_grad(lambda t: model.loss(t, ex), theta)
            assert rel_err(model.grad(theta, ex), fd) < GRAD_TOL

    def test_hessian_on_gradient(self, family):
        gen = RngStream(12, f"fd-hess/{family}").generator()
        for _ in range(N_DRAWS):
            model, ex, theta = DRAWS[family](gen)
            v = gen.standard_normal(theta.size)
            fd = fd_hess_vec(lambda t: model.grad(t, ex), theta, v)
            assert rel_err(model.hessian(theta, ex) @ v, fd) < HESS_TOL

    def test_hessian_symmetric(self, family):
        gen = RngStream(13, f"sym/{family}").generator()
        model, ex, theta = DRAWS[family](gen)
        H = model.hessian(theta, ex)
        np.testing.assert_allclose(H, H.T, atol=1e-14)


class TestVectorised:
    def test_logistic_batch_matches_loop(self):
        gen = np.random.default_rng(0)
        data = DenseData(gen.standard_normal((30, 4)), gen.integers(0, 2, 30).astype(float))
        model = LogisticModel(4, ridge=0.2)
        theta = gen.standard_normal(4)
        loop_l = [model.loss(theta, data.example(i)) for i in range(30)]
        loop_g = np.vstack([model.grad(theta, data.example(i)) for i in range(30)])
        np.testing.assert_allclose(model.losses(theta, data), loop_l, rtol=1e-13)
        np.testing.assert_allclose(model.grads(theta, data), loop_g, rtol=1e-12, atol=1e-15)
        H = sum(model.hessian(theta, data.example(i)) for i in range(30)) / 30
        np.testing.assert_allclose(model.risk_hessian(theta, data), H, rtol=1e-12, atol=1e-15)

    def test_risk_is_order_invariant(self):
        gen = np.random.default_rng(1)
        data = DenseData(gen.standard_normal((200, 5)), gen.integers(0, 2, 200).astype(float))
        model = LogisticModel(5)
        theta = gen.standard_normal(5)
        perm = gen.permutation(200)
        assert model.risk(theta, data) == model.risk(theta, data.subset(perm))
        assert np.array_equal(model.risk_grad(theta, data), model.risk_grad(theta, data.subset(perm)))

    def test_linear_model_feature_cache(self):
        model = FeaturizedLinearModel(_FMAP)
        gen = np.random.default_rng(2)
        a = DenseData(gen.standard_normal((5, 3)), gen.standard_normal(5))
        b = DenseData(gen.standard_normal((5, 3)), gen.standard_normal(5))
        theta = gen.standard_normal(12)
        la = model.losses(theta, a)
        model.losses(theta, b)
        np.testing.assert_array_equal(model.losses(theta, a), la)


class TestLogistic:
    def test_extreme_margin_is_finite(self):
        model = LogisticModel(1)
        ex = DenseExample(np.array([1.0]), 0.0)
        assert np.isfinite(model.loss(np.array([1000.0]), ex))
        assert model.loss(np.array([1000.0]), ex) == pytest.approx(1000.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            LogisticModel(3).loss(np.zeros(2), DenseExample(np.zeros(3), 1.0))

    def test_empty_risk(self):
        with pytest.raises(EmptySetError):
            LogisticModel(2).risk(np.zeros(2), DenseData(np.zeros((0, 2)), np.zeros(0)))


class TestToyToken:
    def test_softmax_normalised(self):
        gen = np.random.default_rng(3)
        model = ToyTokenModel(6)
        for _ in range(50):
            _, ex, theta = token_draw(gen, V=6)
            theta = 10 * theta
            P = model.predictive(theta, ex)
            np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_loss_is_mean_negative_logprob(self):
        gen = np.random.default_rng(4)
        _, ex, theta = token_draw(gen)
        model = ToyTokenModel(4)
        lp = model.token_logprobs(theta, ex)
        assert abs(model.loss(theta, ex) + lp.mean()) < 1e-12

    def test_bos_row_used_at_first_position(self):
        model = ToyTokenModel(3)
        theta = np.zeros(model.p)
        theta_bos = theta.copy()
        theta_bos[:9].reshape(3, 3)[0, 2] = 5.0
        ex = TokenExample((1,), (2,))
        assert model.token_logprobs(theta_bos, ex)[0] > model.token_logprobs(theta, ex)[0]

    def test_out_of_vocab(self):
        with pytest.raises(DimensionError):
            ToyTokenModel(3).loss(np.zeros(18), TokenExample((0,), (3,)))

    def test_hessian_cap(self):
        model = ToyTokenModel(17)  # p = 578 > 512
        ex = TokenExample((0,), (1,))
        with pytest.raises(DimensionCapError):
            model.hessian(np.zeros(model.p), ex)

    def test_true_token_probs(self):
        gen = np.random.default_rng(5)
        model = ToyTokenModel(4)
        _, ex, theta = token_draw(gen)
        probs = model.true_token_probs(theta, TokenData([ex]))[0]
        np.testing.assert_allclose(np.log(probs), model.token_logprobs(theta, ex))


def test_model_from_name():
    assert model_from_name("logistic", p=3).p == 3
    assert model_from_name("token", V=3).p == 18
    assert model_from_name("linear", d=2, p_out=7).p == 7
    with pytest.raises(ValueError):
        model_from_name("mlp")
