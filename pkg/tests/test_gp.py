import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import approx_fprime

from cfmobo.errors import InvalidData, NumericalError
from cfmobo.gp import (
    NOISE_FLOOR,
    GpModel,
    InputNormalizer,
    KernelParams,
    fit,
    jittered_cholesky,
    matern52,
    neg_lml_and_grad,
    posterior,
    sample_initial_params,
    sample_joint,
)
from oracles import dense_gp_posterior, dense_matern52


def toy(n=12, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    y = np.sin(4 * X[:, 0]) + 0.5 * X[:, 1] ** 2
    return X, y


def test_kernel_matches_dense():
    rng = np.random.default_rng(0)
    A, B = rng.uniform(size=(5, 3)), rng.uniform(size=(4, 3))
    ls = np.array([0.2, 0.5, 1.3])
    np.testing.assert_allclose(matern52(A, B, ls, 1.7), dense_matern52(A, B, ls, 1.7), rtol=1e-12)


class TestPosterior:
    def test_three_point_dense_oracle(self):
        X = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.4]])
        y = np.array([0.3, -1.2, 0.7])
        ls, s2, noise = np.array([0.3, 0.6]), 1.4, 1e-3
        m = GpModel(X, y, KernelParams(ls, s2, noise), standardize=False)
        Xq = np.array([[0.2, 0.2], [0.9, 0.1], [0.5, 0.5]])
        mu_ref, cov_ref = dense_gp_posterior(X, y, Xq, ls, s2, noise)
        mu, cov = m.predict_cov(Xq)
        np.testing.assert_allclose(mu, mu_ref, atol=1e-10)
        np.testing.assert_allclose(cov, cov_ref, atol=1e-10)
        mu2, var2 = m.predict(Xq)
        np.testing.assert_allclose(var2, np.diag(cov_ref), atol=1e-10)
        np.testing.assert_allclose(m.cross_cov(Xq[:2], Xq), cov_ref[:2], atol=1e-10)

    def test_interpolates_at_noise_floor(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, NOISE_FLOOR))
        mu, _ = m.predict(X)
        np.testing.assert_allclose(mu, y, atol=1e-6)

    def test_variance_at_training_points_bounded_by_noise(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, 1e-3))
        _, var = m.predict(X)
        assert np.all(var <= m.noise_variance + 1e-8)

    def test_prior_reversion(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.02, 0.02]), 1.0, 1e-4))
        mean, var = posterior(m, [X[:, 0].max() + 0.3, X[:, 1].max() + 0.3])
        assert mean == pytest.approx(y.mean(), abs=0.01 * y.std())
        assert var == pytest.approx(m.prior_variance, rel=0.01)

    def test_extra_observation_never_raises_variance(self):
        X, y = toy()
        params = KernelParams(np.array([0.3, 0.3]), 1.0, NOISE_FLOOR)
        x_new = np.array([[0.33, 0.77]])
        before = GpModel(X, y, params, standardize=False).predict(x_new)[1][0]
        after = GpModel(np.vstack([X, x_new]), np.append(y, 0.1), params, standardize=False).predict(x_new)[1][0]
        assert after <= before + 1e-15

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 1000), ls=st.floats(0.05, 3.0))
    def test_variance_nonnegative(self, seed, ls):
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=(8, 2))
        X = np.vstack([X, X[:2]])  # duplicates
        m = GpModel(X, rng.normal(size=10), KernelParams(np.array([ls, ls]), 1.0, NOISE_FLOOR))
        _, var = m.predict(rng.uniform(size=(50, 2)))
        assert np.all(var >= 0)


class TestFit:
    def test_gradient(self):
        X, y = toy(10, 3)
        ys = (y - y.mean()) / y.std()
        theta = np.array([np.log(0.4), np.log(0.7), np.log(1.5), np.log(1.2), np.log(1e-2)])
        _, g = neg_lml_and_grad(theta, X, ys)
        num = approx_fprime(theta, lambda t: neg_lml_and_grad(t, X, ys)[0], 1e-6)
        np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-5)

    def test_likelihood_beats_every_start(self):
        X, y = toy(15, 2, seed=3)
        m = fit(X, y, np.random.default_rng(5), n_restarts=4)
        ys = (y - y.mean()) / y.std()
        rng = np.random.default_rng(5)
        best = neg_lml_and_grad(m.params.to_vector(), X, ys)[0]
        for _ in range(4):
            start = sample_initial_params(2, rng)
            assert best <= neg_lml_and_grad(start, X, ys)[0] + 1e-9

    def test_constant_targets(self):
        X = np.random.default_rng(0).uniform(size=(8, 2))
        m = fit(X, np.full(8, 3.0), np.random.default_rng(0))
        assert m.params.signal_variance <= 1e-3
        mu, _ = m.predict(np.random.default_rng(1).uniform(size=(20, 2)))
        np.testing.assert_allclose(mu, 3.0, atol=1e-6)

    def test_held_out_error_below_prior_variance(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(20, 1))
        f = lambda x: np.sin(6 * x[:, 0])
        y = f(X) + 0.05 * rng.normal(size=20)
        m = fit(X, y, rng)
        Xt = rng.uniform(size=(200, 1))
        mse = np.mean((m.predict(Xt)[0] - f(Xt)) ** 2)
        assert mse < m.prior_variance
        assert mse < 0.05

    def test_warm_start_used(self):
        X, y = toy(12, 2)
        first = fit(X, y, np.random.default_rng(0))
        again = fit(X, y, np.random.default_rng(1), n_restarts=1, init_params=first.params)
        assert again.log_marginal_likelihood() >= first.log_marginal_likelihood() - 1e-6

    @pytest.mark.parametrize(
        "X,y",
        [
            (np.zeros((1, 2)), np.zeros(1)),
            (np.zeros((3, 2)), np.array([0.0, np.nan, 1.0])),
            (np.zeros((3, 2)), np.array([0.0, np.inf, 1.0])),
        ],
    )
    def test_invalid_data(self, X, y):
        with pytest.raises(InvalidData):
            fit(X, y)

    def test_duplicates_allowed(self):
        X, y = toy(6, 2)
        m = fit(np.vstack([X, X]), np.concatenate([y, y]), np.random.default_rng(0))
        assert np.all(np.isfinite(m.predict(X)[0]))


class TestJitter:
    def test_singular_gets_jitter(self):
        K = np.ones((3, 3))
        L, jitter = jittered_cholesky(K)
        assert jitter > 0
        np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(3), atol=1e-12)

    def test_indefinite_fails(self):
        with pytest.raises(NumericalError):
            jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestSampling:
    def test_moments(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, 1e-3))
        x = np.array([[0.45, 0.61]])
        draws = sample_joint(m, x, 10_000, np.random.default_rng(0))[:, 0]
        mean, var = posterior(m, x[0])
        se_mean = np.sqrt(var / draws.size)
        se_var = var * np.sqrt(2.0 / (draws.size - 1))
        assert abs(draws.mean() - mean) <= 3 * se_mean
        assert abs(draws.var(ddof=1) - var) <= 3 * se_var

    def test_duplicate_points(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, 1e-3))
        draws = sample_joint(m, np.array([[0.2, 0.9], [0.2, 0.9]]), 200, np.random.default_rng(1))
        assert np.max(np.abs(draws[:, 0] - draws[:, 1])) <= 1e-4

    def test_deterministic(self):
        X, y = toy()
        m = GpModel(X, y, KernelParams(np.array([0.3, 0.3]), 1.0, 1e-3))
        P = np.random.default_rng(2).uniform(size=(5, 2))
        a = sample_joint(m, P, 50, np.random.default_rng(9))
        b = sample_joint(m, P, 50, np.random.default_rng(9))
        assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(
    lo=st.floats(-100, 100),
    width=st.floats(1e-3, 1e3),
    u=st.floats(0.0, 1.0),
)
def test_normalizer_round_trip(lo, width, u):
    norm = InputNormalizer([lo], [lo + width])
    x = norm.decode([u])
    assert norm.encode(x)[0] == pytest.approx(u, abs=1e-12 * max(1.0, abs(lo) / width))
    assert norm.decode(norm.encode(x))[0] == pytest.approx(x[0], abs=1e-12 * max(1.0, abs(lo), width))


def test_normalizer_rejects_empty_box():
    with pytest.raises(InvalidData):
        InputNormalizer([0.0], [0.0])
