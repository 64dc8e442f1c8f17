from __future__ import annotations

import numpy as np
import pytest

from gridge.families import Dataset, get_family


def random_dataset(name: str, rng: np.random.Generator, n: int = 60, k: int = 3, J: int = 3) -> Dataset:
    """Well-conditioned synthetic data for any family."""
    X = rng.normal(size=(n, k))
    if name == "multinomial-logit":
        y = np.concatenate([np.arange(1, J + 1), rng.integers(1, J + 1, size=n - J)])
        return Dataset(y, X, J)
    if name == "binary-logit":
        eta = X @ rng.normal(scale=0.5, size=k)
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        y[:2] = [0.0, 1.0]
        return Dataset(y, X)
    if name == "poisson-log-link":
        y = rng.poisson(np.exp(0.3 + 0.2 * X[:, 0]))
        return Dataset(y, X)
    y = 1.0 + X @ rng.normal(size=k) + rng.normal(size=n)
    return Dataset(y, X)


def random_theta(name: str, data: Dataset, rng: np.random.Generator, scale: float = 0.3) -> np.ndarray:
    p = get_family(name).n_params(data.k, data.category_count)
    return rng.normal(scale=scale, size=p)


FAMILY_NAMES = ("multinomial-logit", "binary-logit", "poisson-log-link", "linear-gaussian")


@pytest.fixture(params=FAMILY_NAMES)
def family_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
