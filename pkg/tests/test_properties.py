from __future__ import annotations

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from gridge.causal import CausalDataset, PropensityConfig, PropensityFit, ipw_mean, ipw_quantile
from gridge.dataio import log10_histogram
from gridge.estimator import PenaltySpec, fit
from gridge.families import Dataset, predict
from gridge.tuner import build_grid

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(1e-3, 50.0))
def test_gaussian_ridge_matches_normal_equations(seed, lam):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    y = rng.normal(size=25)
    res = fit("linear-gaussian", Dataset(y, X), PenaltySpec.ridge(lam, 3))
    expected = np.linalg.solve(X.T @ X / 25 + 2 * lam * np.eye(3), X.T @ y / 25)
    np.testing.assert_allclose(res.theta_hat, expected, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(seeds, st.floats(0.1, 30.0))
def test_multinomial_probabilities_valid(seed, scale):
    rng = np.random.default_rng(seed)
    p = predict("multinomial-logit", rng.normal(scale=scale, size=8), rng.normal(size=3), J=3)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-6, 1e6), st.integers(2, 60))
def test_grid_shape(lmax, size):
    g = build_grid(lmax, size)
    assert g.size == size + 1 and g[0] == 0.0
    assert np.all(np.diff(g) > 0)
    assert np.isclose(g[-1], lmax) and np.isclose(g[1], 1e-4 * lmax)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.05, 0.95))
def test_ipw_estimates_on_group_support(seed, tau):
    rng = np.random.default_rng(seed)
    n = 30
    t = np.concatenate([[1, 2], rng.integers(1, 3, size=n - 2)])
    data = CausalDataset(t, rng.normal(size=n), np.zeros((n, 0)))
    P = rng.uniform(0.02, 0.98, size=n)
    P = np.column_stack([P, 1 - P])
    pfit = PropensityFit(None, P, P, 1e-8, np.zeros(2, dtype=int), PropensityConfig())
    y = data.outcome[t == 1]
    assert y.min() - 1e-12 <= ipw_mean(pfit, data, 1).estimate <= y.max() + 1e-12
    assert ipw_quantile(pfit, data, 1, tau).estimate in set(y)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
def test_histogram_counts_everything(probs):
    hist = log10_histogram(probs)
    assert sum(c for *_, c in hist) == len(probs)
    assert hist[-1][:2] == (0, 1)
    assert all(b[0] == a[1] for a, b in zip(hist, hist[1:]))
