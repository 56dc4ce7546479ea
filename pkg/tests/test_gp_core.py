import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from atlasgp.errors import NumericalError, OptimizationError
from atlasgp.gp_core import (RbfParams, cholesky, fit_scaled_kernel, gp_predict, log_marginal_likelihood,
                             optimize, rbf_matrix, scaled_lml)


def naive_lml(K, y, noise):
    A = K + noise * np.eye(len(y))
    return -0.5 * y @ np.linalg.inv(A) @ y - 0.5 * np.log(np.linalg.det(A)) - 0.5 * len(y) * math.log(2 * math.pi)


def test_rbf_examples():
    K = rbf_matrix([[0.0], [1.0]], [[0.0], [1.0]], RbfParams(1.0, 1.0))
    assert np.allclose(K, [[1, math.exp(-1)], [math.exp(-1), 1]], atol=1e-15)
    assert rbf_matrix([[0.3, 2.0]], [[0.3, 2.0]], RbfParams(2.5, 3.0))[0, 0] == 2.5
    assert rbf_matrix([[0.0, 0.0]], [[1.0, 1.0]], RbfParams(1.0, 0.5))[0, 0] == pytest.approx(math.exp(-1), abs=1e-15)


def test_rbf_params_validated():
    with pytest.raises(ValueError):
        RbfParams(0.0, 1.0)
    assert RbfParams(1.0, 4.0).lengthscale == 0.5


@given(arrays(float, (8, 2), elements=st.floats(-5, 5)).filter(
    lambda X: len(np.unique(np.round(X, 6), axis=0)) == 8))
def test_rbf_symmetric_psd(X):
    K = rbf_matrix(X, X, RbfParams(1.7, 0.8))
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * 1.7


def test_lml_examples():
    assert log_marginal_likelihood([[1.0]], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert log_marginal_likelihood([[1.0]], [1.0]) == pytest.approx(-1.4189385332046727, abs=1e-14)
    y = np.array([1.0, 1.0])
    assert log_marginal_likelihood(np.eye(2), y, 1.0) == pytest.approx(naive_lml(np.eye(2), y, 1.0), abs=1e-12)


@given(st.integers(2, 30), st.integers(0, 10**6))
def test_lml_matches_dense_inverse(n, seed):
    r = np.random.default_rng(seed)
    X = np.sort(r.uniform(0, 10, n))[:, None] + np.arange(n)[:, None] * 1e-3
    K = rbf_matrix(X, X, RbfParams(1.3, 0.7))
    y = r.standard_normal(n)
    a, b = log_marginal_likelihood(K, y, 0.1), naive_lml(K, y, 0.1)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


def test_lml_two_columns_add():
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    Y = np.array([[1.0, -0.3], [0.2, 0.8]])
    assert log_marginal_likelihood(K, Y) == pytest.approx(
        log_marginal_likelihood(K, Y[:, 0]) + log_marginal_likelihood(K, Y[:, 1]), abs=1e-12)


def test_cholesky_jitter_ladder():
    A = np.ones((3, 3))
    L, jitter = cholesky(A)
    assert jitter > 0 and jitter <= 1e-4
    assert np.allclose(L @ L.T, A + jitter * np.eye(3))
    with pytest.raises(NumericalError) as exc:
        cholesky(-np.eye(2) + 0.5)
    assert exc.value.jitter is not None


def test_predict_examples():
    X = np.array([[0.0], [0.7], [2.0]])
    p = RbfParams(1.0, 1.0)
    K = rbf_matrix(X, X, p)
    y = np.array([0.5, -1.0, 2.0])
    mean, cov = gp_predict(K, K[1:2], K[1:2, 1:2], y)
    assert mean[0] == pytest.approx(-1.0, abs=1e-8)
    assert cov[0, 0] <= 1e-10
    mean, cov = gp_predict(K, np.zeros((2, 3)), np.eye(2) * 3, y, 0.1)
    assert np.array_equal(mean, [0, 0]) and np.array_equal(cov, np.eye(2) * 3)


def test_predict_matches_dense_inverse():
    X = np.array([[0.0], [0.5], [1.7]])
    Xs = np.array([[0.2], [1.0], [3.0]])
    p = RbfParams(1.4, 0.9)
    K, Ks, Kss = rbf_matrix(X, X, p), rbf_matrix(Xs, X, p), rbf_matrix(Xs, Xs, p)
    y = np.array([1.0, -0.5, 0.3])
    A = np.linalg.inv(K + 0.05 * np.eye(3))
    mean, cov = gp_predict(K, Ks, Kss, y, 0.05)
    assert np.allclose(mean, Ks @ A @ y, atol=1e-10)
    assert np.allclose(cov, Kss - Ks @ A @ Ks.T, atol=1e-10)
    _, var = gp_predict(K, Ks, np.diag(Kss), y, 0.05)
    assert np.allclose(var, np.diag(cov), atol=1e-12)


@given(arrays(float, (5, 1), elements=st.floats(-3, 3)), st.floats(-5, 5))
def test_posterior_variance_below_prior(X, xs):
    p = RbfParams(2.0, 1.1)
    K = rbf_matrix(X, X, p)
    _, var = gp_predict(K, rbf_matrix([[xs]], X, p), np.array([2.0]), np.zeros(5), 1e-3)
    assert var[0] <= 2.0 + 1e-10


def test_optimize_quadratic():
    opt = optimize(lambda v: -(v[0] - 2.0) ** 2, [(0.0, 10.0)], log=[False])
    assert abs(opt.x[0] - 2.0) < 1e-3


def test_optimize_constant_returns_lowest_corner():
    opt = optimize(lambda v: 1.0, [(1e-2, 1e2), (0.5, 3.0)], log=[True, False])
    assert np.allclose(opt.x, [1e-2, 0.5])


def test_optimize_all_nonfinite():
    with pytest.raises(OptimizationError):
        optimize(lambda v: math.nan, [(1.0, 2.0)])


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_optimize_stays_in_box(a, b):
    lo, hi = sorted((a, b))
    hi += 1e-3
    opt = optimize(lambda v: v[0], [(lo, hi)], log=[False], budget=60)
    assert lo <= opt.x[0] <= hi


def test_optimize_deterministic():
    f = lambda v: -np.sum(np.sin(3 * v) + (v - 0.3) ** 2)
    a = optimize(f, [(-2, 2), (-2, 2)], log=[False, False])
    b = optimize(f, [(-2, 2), (-2, 2)], log=[False, False])
    assert np.array_equal(a.x, b.x) and a.value == b.value


def test_lengthscale_recovered():
    # simulate from a known length-scale, then fit it back
    r = np.random.default_rng(7)
    X = np.linspace(0, 10, 80)[:, None]
    true = RbfParams(1.0, 1.0 / 0.8**2)
    y = np.linalg.cholesky(rbf_matrix(X, X, true) + 1e-8 * np.eye(80)) @ r.standard_normal(80)
    D2 = (X - X.T) ** 2
    fit = fit_scaled_kernel(lambda th: np.exp(-th[0] * D2), y + 0.01 * r.standard_normal(80), [(1e-2, 1e2)])
    ell = 1 / math.sqrt(fit.theta[0])
    assert 0.4 < ell < 1.6


def test_scaled_lml_profiles_scale():
    C = np.array([[1.0, 0.3], [0.3, 1.0]])
    y = np.array([0.8, -1.1])
    lml, scale = scaled_lml(C, y, 0.1)
    grid = [log_marginal_likelihood(s * C, y, 0.1 * s) for s in np.linspace(0.5 * scale, 1.5 * scale, 101)]
    assert lml >= max(grid) - 1e-12
    assert lml == pytest.approx(log_marginal_likelihood(scale * C, y, 0.1 * scale), abs=1e-12)


def test_fixed_noise_fit():
    C = np.eye(3)
    fit = fit_scaled_kernel(lambda th: C, np.array([1.0, -1.0, 2.0]), [(1.0, 1.0)], fixed_noise=0.5)
    assert fit.noise_var == 0.5
    # optimum scale = mean(y^2) - noise = 2 - 0.5
    assert fit.scale == pytest.approx(1.5, rel=1e-3)
