from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import FAMILY_NAMES, random_dataset, random_theta

from gridge.errors import InvalidArgumentError
from gridge.families import (
    Dataset,
    get_family,
    hessian_sum,
    loglik,
    predict,
    prediction_gradient,
    score_outer_mean,
    score_sum,
    slope_mask,
)


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f, x, h=1e-6):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


# ---------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------


def test_dataset_rejects_row_mismatch():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.ones(3), np.ones((4, 2)))


def test_dataset_rejects_non_finite():
    X = np.ones((3, 2))
    X[1, 1] = np.nan
    with pytest.raises(InvalidArgumentError):
        Dataset(np.ones(3), X)


def test_dataset_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros(0), np.zeros((0, 2)))


def test_multinomial_outcome_range_checked():
    data = Dataset(np.array([1, 2, 4]), np.zeros((3, 1)), 3)
    with pytest.raises(InvalidArgumentError):
        loglik("multinomial-logit", data, np.zeros(4))


def test_theta_length_checked(rng):
    data = random_dataset("linear-gaussian", rng)
    with pytest.raises(InvalidArgumentError):
        loglik("linear-gaussian", data, np.zeros(data.k + 1))


def test_unknown_family():
    with pytest.raises(InvalidArgumentError):
        get_family("probit")


# ---------------------------------------------------------------------
# loglik
# ---------------------------------------------------------------------


def test_multinomial_zero_theta_is_uniform(rng):
    data = random_dataset("multinomial-logit", rng, n=25, k=2, J=3)
    assert loglik("multinomial-logit", data, np.zeros(6)) == pytest.approx(math.log(1 / 3), abs=1e-14)


def test_gaussian_loglik_at_ols():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0], [1.0, 4.0]])
    y = np.array([0.1, 1.2, 1.9, 3.2, 3.9])
    theta = np.linalg.solve(X.T @ X, X.T @ y)
    res = y - X @ theta
    expected = -np.sum(res**2) / (2 * 5) - 0.5 * math.log(2 * math.pi)
    assert loglik("linear-gaussian", Dataset(y, X), theta) == pytest.approx(expected, abs=1e-14)


def test_binary_single_observation():
    data = Dataset(np.array([1.0]), np.array([[1.0]]))
    assert loglik("binary-logit", data, np.zeros(1)) == pytest.approx(math.log(0.5))
    assert hessian_sum("binary-logit", data, np.zeros(1))[0, 0] == pytest.approx(-0.25)


def test_loglik_permutation_invariant(family_name, rng):
    data = random_dataset(family_name, rng)
    theta = random_theta(family_name, data, rng)
    perm = rng.permutation(data.n)
    shuffled = Dataset(data.outcomes[perm], data.covariates[perm], data.category_count)
    assert loglik(family_name, shuffled, theta) == pytest.approx(loglik(family_name, data, theta), rel=1e-13)


# ---------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_score_matches_finite_differences(name):
    rng = np.random.default_rng(7)
    for _ in range(5):
        data = random_dataset(name, rng, n=40)
        theta = random_theta(name, data, rng)
        fd = fd_gradient(lambda t: loglik(name, data, t), theta)
        assert rel_err(score_sum(name, data, theta), fd) <= 1e-5


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_hessian_matches_finite_differences(name):
    rng = np.random.default_rng(8)
    for _ in range(5):
        data = random_dataset(name, rng, n=40)
        theta = random_theta(name, data, rng)
        fd = fd_jacobian(lambda t: score_sum(name, data, t), theta)
        assert rel_err(hessian_sum(name, data, theta), fd) <= 1e-4


def test_multinomial_three_observation_score():
    data = Dataset(np.array([1, 2, 3]), np.array([[0.5, -1.0], [1.5, 0.2], [-0.3, 0.7]]), 3)
    theta = np.array([0.1, -0.2, 0.3, 0.0, 0.4, -0.1])
    fd = fd_gradient(lambda t: loglik("multinomial-logit", data, t), theta)
    assert rel_err(score_sum("multinomial-logit", data, theta), fd) <= 1e-5


def test_multinomial_hessian_at_zero(rng):
    data = random_dataset("multinomial-logit", rng, n=30, k=2)
    theta = np.zeros(6)
    fd = fd_jacobian(lambda t: score_sum("multinomial-logit", data, t), theta)
    assert rel_err(hessian_sum("multinomial-logit", data, theta), fd) <= 1e-4


def test_gaussian_score_and_hessian_closed_form(rng):
    data = random_dataset("linear-gaussian", rng)
    theta = random_theta("linear-gaussian", data, rng)
    X, y = data.covariates, data.outcomes
    np.testing.assert_allclose(score_sum("linear-gaussian", data, theta), X.T @ (y - X @ theta) / data.n, atol=1e-13)
    np.testing.assert_array_equal(hessian_sum("linear-gaussian", data, theta), -(X.T @ X) / data.n)


def test_hessian_symmetric_and_nsd(family_name, rng):
    data = random_dataset(family_name, rng)
    for _ in range(5):
        theta = random_theta(family_name, data, rng, scale=1.0)
        H = hessian_sum(family_name, data, theta)
        assert np.max(np.abs(H - H.T)) <= 1e-10
        assert np.linalg.eigvalsh(0.5 * (H + H.T)).max() <= 1e-10


def test_score_outer_mean_is_psd(family_name, rng):
    data = random_dataset(family_name, rng)
    M = score_outer_mean(family_name, data, random_theta(family_name, data, rng))
    assert np.linalg.eigvalsh(M).min() >= -1e-12


# ---------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------


def test_multinomial_predict_uniform_at_zero():
    np.testing.assert_allclose(predict("multinomial-logit", np.zeros(6), [0.3, -2.0], J=3), np.full(3, 1 / 3))


def test_multinomial_large_intercept_no_overflow():
    theta = np.array([0.0, 0.0, 50.0, 0.0])
    p = predict("multinomial-logit", theta, [1.0], J=3)
    assert np.all(np.isfinite(p))
    assert p[1] >= 1 - 1e-20
    assert abs(p.sum() - 1) <= 1e-12


def test_multinomial_extreme_linear_predictor_loglik_finite():
    data = Dataset(np.array([1, 3]), np.array([[1.0], [-1.0]]), 3)
    theta = np.array([0.0, 700.0, 0.0, -700.0])
    v = loglik("multinomial-logit", data, theta)
    assert np.isfinite(v)
    assert np.all(np.isfinite(score_sum("multinomial-logit", data, theta)))


def test_binary_predict_half_at_zero():
    p = predict("binary-logit", np.array([0.5, -0.5]), [1.0, 1.0])
    np.testing.assert_allclose(p, [0.5, 0.5])


def test_binary_prediction_gradient_at_zero():
    z = np.array([1.0, 2.0, -1.0])
    g = prediction_gradient("binary-logit", np.zeros(3), z)
    np.testing.assert_allclose(g[1], 0.25 * z)


def test_gaussian_prediction_gradient_is_z():
    z = np.array([0.3, -1.2])
    np.testing.assert_array_equal(prediction_gradient("linear-gaussian", np.array([1.0, 2.0]), z)[0], z)


def test_poisson_mean_positive():
    assert predict("poisson-log-link", np.array([-3.0]), [5.0])[0] > 0


@pytest.mark.parametrize("name", FAMILY_NAMES)
def test_prediction_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(11)
    J = 3 if name == "multinomial-logit" else None
    for _ in range(5):
        data = random_dataset(name, rng)
        theta = random_theta(name, data, rng)
        z = rng.normal(size=data.k)
        fd = fd_jacobian(lambda t: predict(name, t, z, J), theta)
        assert rel_err(prediction_gradient(name, theta, z, J), fd) <= 1e-5


def test_probabilities_sum_to_one(rng):
    for _ in range(20):
        theta = rng.normal(scale=5, size=8)
        p = predict("multinomial-logit", theta, rng.normal(size=3), J=3)
        assert abs(p.sum() - 1) <= 1e-12
        assert np.all((p >= 0) & (p <= 1))


def test_predict_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        predict("linear-gaussian", np.zeros(3), [1.0, 2.0])


def test_slope_mask_layout():
    m = slope_mask(get_family("multinomial-logit"), 2, 3)
    np.testing.assert_array_equal(m, [False, True, True, False, True, True])
    assert slope_mask(get_family("binary-logit"), 3).all()
