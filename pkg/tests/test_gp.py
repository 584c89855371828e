import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from binoculars.gp import (
    BoxDomain,
    Dataset,
    GPHyperparams,
    GPModel,
    NumericalError,
    condition,
    default_bounds,
    fit_hyperparams,
    jittered_cholesky,
    kernel_eval,
    kernel_matrix,
    nll_and_grad,
    posterior,
    posterior_mean_var,
    posterior_vjp,
)
from oracles import dense_nll, dense_posterior, matern

KINDS = ["matern52", "matern32"]


def random_instance(rng, n, d, noise=1e-6):
    hyper = GPHyperparams(
        rng.normal(), rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.0, d), noise
    )
    X = rng.random((n, d))
    y = rng.normal(size=n)
    return hyper, Dataset(X, y)


# ---------------------------------------------------------------- kernels


def test_kernel_at_zero_distance_is_signal_variance():
    h = GPHyperparams(0.0, 2.5, [0.3, 0.7])
    for kind in KINDS:
        assert kernel_eval(kind, h, [0.1, 0.2], [0.1, 0.2]) == pytest.approx(2.5, abs=1e-15)


def test_matern52_unit_distance_matches_high_precision_value():
    # (1 + sqrt5 + 5/3) exp(-sqrt5), evaluated at 30 digits
    h = GPHyperparams(0.0, 1.0, [1.0])
    assert kernel_eval("matern52", h, [0.0], [1.0]) == pytest.approx(0.52399410883182031059, rel=1e-14)


def test_matern32_vanishes_far_away():
    h = GPHyperparams(0.0, 1.0, [1.0])
    assert kernel_eval("matern32", h, [0.0], [1e3]) < 1e-300 + 1e-12


def test_kernel_dimension_mismatch_raises():
    h = GPHyperparams(0.0, 1.0, [1.0, 1.0])
    with pytest.raises(ValueError):
        kernel_eval("matern52", h, [0.0], [1.0])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
    st.floats(0.05, 5.0),
    st.sampled_from(KINDS),
)
def test_kernel_symmetric_and_bounded(x, x2, sf2, kind):
    h = GPHyperparams(0.0, sf2, [0.4, 1.3])
    a, b = kernel_eval(kind, h, x, x2), kernel_eval(kind, h, x2, x)
    assert a == pytest.approx(b, rel=1e-14, abs=1e-300)
    assert abs(a) <= sf2 * (1 + 1e-14)


def test_kernel_matrix_matches_closed_form():
    rng = np.random.default_rng(0)
    A, B = rng.random((5, 3)), rng.random((4, 3))
    h = GPHyperparams(0.0, 1.7, [0.3, 0.5, 0.9])
    for kind in KINDS:
        np.testing.assert_allclose(
            kernel_matrix(kind, h, A, B), matern(kind, 1.7, h.lengthscales, A, B), rtol=1e-13
        )


# ---------------------------------------------------------------- posterior


def test_posterior_matches_dense_solve():
    rng = np.random.default_rng(1)
    for trial in range(40):
        kind = KINDS[trial % 2]
        n, d = rng.integers(1, 30), rng.integers(1, 5)
        hyper, data = random_instance(rng, n, d, noise=rng.choice([1e-6, 1e-4]))
        Q = rng.random((3, d))
        post = posterior(GPModel.build(kind, hyper, data), Q)
        mu, cov = dense_posterior(kind, hyper.mean_const, hyper.signal_variance, hyper.lengthscales,
                                  hyper.noise_variance, data.points, data.values, Q)
        np.testing.assert_allclose(post.mean, mu, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(post.cov, cov, rtol=1e-6, atol=1e-9)


def test_two_training_three_query_relative_error():
    rng = np.random.default_rng(2)
    hyper, data = random_instance(rng, 2, 2, noise=0.0)
    Q = rng.random((3, 2))
    post = posterior(GPModel.build("matern52", hyper, data), Q)
    mu, cov = dense_posterior("matern52", hyper.mean_const, hyper.signal_variance, hyper.lengthscales,
                              0.0, data.points, data.values, Q)
    assert np.max(np.abs(post.mean - mu) / np.abs(mu)) <= 1e-8
    assert np.linalg.norm(post.cov - cov) / np.linalg.norm(cov) <= 1e-8


def test_empty_training_set_is_prior():
    h = GPHyperparams(0.7, 1.3, [0.5])
    Q = np.array([[0.1], [0.5], [0.9]])
    post = posterior(GPModel.build("matern32", h, Dataset.empty(1)), Q)
    np.testing.assert_array_equal(post.mean, np.full(3, 0.7))
    np.testing.assert_allclose(post.cov, kernel_matrix("matern32", h, Q))


def test_noiseless_interpolation():
    rng = np.random.default_rng(3)
    hyper, data = random_instance(rng, 6, 2, noise=0.0)
    model = GPModel.build("matern52", hyper, data)
    post = posterior(model, data.points)
    np.testing.assert_allclose(post.mean, data.values, atol=1e-9)
    assert np.all(post.var <= 1e-8 * hyper.signal_variance)


def test_model_factor_and_weights_invariants():
    rng = np.random.default_rng(4)
    hyper, data = random_instance(rng, 20, 3, noise=1e-3)
    model = GPModel.build("matern32", hyper, data)
    K = kernel_matrix("matern32", hyper, data.points) + hyper.noise_variance * np.eye(20)
    assert np.linalg.norm(model.chol @ model.chol.T - K) / np.linalg.norm(K) <= 1e-8
    np.testing.assert_allclose(K @ model.alpha, data.values - hyper.mean_const, atol=1e-8)


def test_predictive_covariance_symmetric_psd():
    rng = np.random.default_rng(5)
    hyper, data = random_instance(rng, 15, 2)
    post = posterior(GPModel.build("matern52", hyper, data), rng.random((10, 2)))
    assert np.max(np.abs(post.cov - post.cov.T)) <= 1e-10
    assert np.linalg.eigvalsh(post.cov).min() >= -1e-8 * np.trace(post.cov)


def test_marginalization_consistency():
    rng = np.random.default_rng(6)
    hyper, data = random_instance(rng, 10, 2)
    model = GPModel.build("matern52", hyper, data)
    Q = rng.random((8, 2))
    full = posterior(model, Q)
    idx = [1, 4, 6]
    sub = posterior(model, Q[idx])
    np.testing.assert_allclose(full.mean[idx], sub.mean, atol=1e-10)
    np.testing.assert_allclose(full.cov[np.ix_(idx, idx)], sub.cov, atol=1e-10)
    mean, var = posterior_mean_var(model, Q)
    np.testing.assert_allclose(mean, full.mean, atol=1e-12)
    np.testing.assert_allclose(var, full.var, atol=1e-12)


def test_posterior_vjp_matches_finite_differences():
    rng = np.random.default_rng(7)
    for kind in KINDS:
        hyper, data = random_instance(rng, 7, 2)
        model = GPModel.build(kind, hyper, data)
        Q = rng.random((3, 2))
        gm, gc = rng.normal(size=3), rng.normal(size=(3, 3))

        def f(Z):
            p = posterior(model, Z.reshape(3, 2))
            return gm @ p.mean + np.sum(gc * p.cov)

        g = posterior_vjp(model, Q, gm, gc).ravel()
        h = 1e-6
        fd = np.array([(f(Q.ravel() + h * e) - f(Q.ravel() - h * e)) / (2 * h) for e in np.eye(6)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


# ---------------------------------------------------------------- conditioning


def test_condition_equals_rebuild():
    rng = np.random.default_rng(8)
    hyper, data = random_instance(rng, 8, 2, noise=0.0)
    model = GPModel.build("matern52", hyper, data)
    x, y = rng.random(2), 0.3
    cond = condition(model, x, y)
    rebuilt = GPModel.build("matern52", hyper, data.append(x, y))
    Q = rng.random((5, 2))
    a, b = posterior(cond, Q), posterior(rebuilt, Q)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-8)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-8)
    assert cond.hyper is model.hyper
    assert posterior(cond, x[None, :]).mean[0] == pytest.approx(y, abs=1e-9)


def test_condition_on_noiseless_duplicate_raises():
    rng = np.random.default_rng(9)
    hyper, data = random_instance(rng, 4, 1, noise=0.0)
    model = GPModel.build("matern52", hyper, data)
    with pytest.raises(NumericalError):
        condition(model, data.points[2], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_condition_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    hyper, data = random_instance(rng, int(rng.integers(0, 8)), 2, noise=0.0)
    model = GPModel.build("matern32", hyper, data)
    x = rng.random(2)
    if len(data) and np.min(np.linalg.norm(data.points - x, axis=1)) < 1e-3:
        return
    Q = rng.random((6, 2))
    before = posterior_mean_var(model, Q)[1]
    after = posterior_mean_var(condition(model, x, rng.normal()), Q)[1]
    assert np.all(after <= before + 1e-8)


# ---------------------------------------------------------------- likelihood


def test_nll_single_point_at_mean():
    h = GPHyperparams(0.4, 1.0, [1.0], 0.0)
    value, _ = nll_and_grad(Dataset([[0.5]], [0.4]), "matern52", h)
    assert value == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-14)


def test_nll_matches_dense_formula():
    rng = np.random.default_rng(10)
    for kind in KINDS:
        hyper, data = random_instance(rng, 12, 3, noise=1e-3)
        value, _ = nll_and_grad(data, kind, hyper)
        ref = dense_nll(kind, hyper.mean_const, hyper.signal_variance, hyper.lengthscales,
                        hyper.noise_variance, data.points, data.values)
        assert value == pytest.approx(ref, rel=1e-10)


def _fd_grad(data, kind, theta, h=1e-5):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        fp = nll_and_grad(data, kind, GPHyperparams.from_vector(theta + e))[0]
        fm = nll_and_grad(data, kind, GPHyperparams.from_vector(theta - e))[0]
        out[i] = (fp - fm) / (2 * h)
    return out


def test_nll_gradient_matches_central_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(100):
        kind = KINDS[trial % 2]
        n, d = int(rng.integers(5, 15)), int(rng.integers(1, 4))
        hyper, data = random_instance(rng, n, d, noise=10 ** rng.uniform(-4, -1))
        theta = hyper.to_vector()
        g = nll_and_grad(data, kind, hyper)[1]
        fd = _fd_grad(data, kind, theta)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    assert worst <= 1e-4


def test_nll_duplicate_rows_noiseless_raises():
    data = Dataset([[0.2], [0.2], [0.7]], [0.0, 0.1, 1.0])
    with pytest.raises(NumericalError):
        nll_and_grad(data, "matern52", GPHyperparams(0.0, 1.0, [0.3], 0.0))
    with pytest.raises(NumericalError):
        GPModel.build("matern52", GPHyperparams(0.0, 1.0, [0.3], 0.0), data)


def test_jittered_cholesky_escalates_then_fails():
    A = np.ones((3, 3))  # rank one
    L, jitter = jittered_cholesky(A, 1.0)
    assert jitter >= 1e-8
    np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)
    with pytest.raises(NumericalError):
        jittered_cholesky(-np.eye(2), 1.0)


# ---------------------------------------------------------------- fitting


def test_fit_recovers_lengthscale():
    rng = np.random.default_rng(12)
    truth = 0.2
    X = np.sort(rng.random(30))[:, None]
    K = matern("matern52", 1.0, [truth], X, X) + 1e-6 * np.eye(30)
    y = np.linalg.cholesky(K) @ rng.normal(size=30)
    data = Dataset(X, y)
    fit = fit_hyperparams(data, "matern52", default_bounds(data, input_range=1.0), restarts=10, seed=0)
    assert truth / 2 <= fit.lengthscales[0] <= truth * 2


def test_fit_never_worse_than_its_start():
    rng = np.random.default_rng(13)
    hyper, data = random_instance(rng, 15, 2, noise=1e-4)
    bounds = default_bounds(data, input_range=1.0)
    theta = np.clip(hyper.to_vector(), bounds.lower, bounds.upper)
    start = GPHyperparams.from_vector(theta)
    fit = fit_hyperparams(data, "matern52", bounds, restarts=1, seed=0, init=start)
    assert nll_and_grad(data, "matern52", fit)[0] <= nll_and_grad(data, "matern52", start)[0] + 1e-6


def test_fit_deterministic_and_within_bounds():
    rng = np.random.default_rng(14)
    hyper, data = random_instance(rng, 12, 2)
    bounds = default_bounds(data)
    a = fit_hyperparams(data, "matern32", bounds, restarts=4, seed=5)
    b = fit_hyperparams(data, "matern32", bounds, restarts=4, seed=5)
    np.testing.assert_array_equal(a.to_vector(), b.to_vector())
    theta = a.to_vector()
    assert np.all(theta >= bounds.lower) and np.all(theta <= bounds.upper)


def test_fit_requires_two_points():
    with pytest.raises(ValueError):
        fit_hyperparams(Dataset([[0.5]], [1.0]), "matern52")


def test_box_domain_validation_and_maps():
    with pytest.raises(ValueError):
        BoxDomain([1.0], [0.0])
    dom = BoxDomain([-2.0, 0.0], [2.0, 10.0])
    x = np.array([1.0, 2.5])
    np.testing.assert_allclose(dom.from_unit(dom.to_unit(x)), x)
    assert dom.contains(dom.center)
