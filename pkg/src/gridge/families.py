"""Likelihood families and the dataset container they consume.

Every family exposes per-observation log densities and scores, the
sample-average Hessian, and a prediction function with its gradient.
All derivatives are analytic.  Probabilities are formed in log space
with max-subtraction so linear predictors of several hundred in
magnitude never overflow.

Parameter layout
----------------
``multinomial-logit`` uses category ``J`` as the base and adds an
intercept per equation, so ``theta`` has ``(J - 1) * (k + 1)`` entries
arranged block by block: ``[a_1, b_1, a_2, b_2, ...]`` with ``a_j`` the
intercept and ``b_j`` the ``k`` slopes of category ``j``.  The other
families use the covariate columns as given (``p = k``); include a
constant column in the data if an intercept is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import gammaln

from .errors import InvalidArgumentError

__all__ = [
    "Dataset",
    "ModelFamily",
    "MultinomialLogit",
    "BinaryLogit",
    "PoissonLog",
    "LinearGaussian",
    "FAMILIES",
    "get_family",
    "loglik",
    "score_sum",
    "hessian_sum",
    "score_outer_mean",
    "predict",
    "prediction_gradient",
    "slope_mask",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Dataset:
    """Outcome vector plus covariate matrix for one estimation problem.

    ``category_count`` is ``J`` for discrete-choice families and 1
    otherwise.  Multinomial outcomes are coded ``1..J``; binary outcomes
    are coded ``0/1``.
    """

    outcomes: np.ndarray
    covariates: np.ndarray
    category_count: int = 1
    covariate_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        y = np.asarray(self.outcomes, dtype=float)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if y.ndim != 1:
            raise InvalidArgumentError("outcomes must be a vector")
        if X.ndim != 2:
            raise InvalidArgumentError("covariates must be a matrix")
        if y.shape[0] < 1:
            raise InvalidArgumentError("dataset needs at least one observation")
        if X.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"covariate matrix has {X.shape[0]} rows but there are {y.shape[0]} outcomes"
            )
        if not np.all(np.isfinite(X)):
            raise InvalidArgumentError("covariates contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("outcomes contain non-finite values")
        if int(self.category_count) < 1:
            raise InvalidArgumentError("category_count must be >= 1")
        self.outcomes = y
        self.covariates = X
        self.category_count = int(self.category_count)

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    @cached_property
    def design(self) -> np.ndarray:
        """Covariates with a leading column of ones."""
        return np.hstack([np.ones((self.n, 1)), self.covariates])

    @cached_property
    def codes(self) -> np.ndarray:
        """Zero-based integer category codes (discrete families only)."""
        return self.outcomes.astype(np.int64) - 1

    def subset(self, index: np.ndarray) -> Dataset:
        return Dataset(
            self.outcomes[index],
            self.covariates[index],
            self.category_count,
            self.covariate_names,
        )


def _check_theta(theta: np.ndarray, p: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (p,):
        raise InvalidArgumentError(f"theta must have length {p}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError("theta contains non-finite values")
    return theta


class ModelFamily:
    """Behaviour contract shared by the shipped likelihood families.

    Subclasses implement the ``_``-prefixed kernels on validated arrays;
    the public wrappers do the shape checking.
    """

    name: str = ""
    discrete: bool = False

    def n_params(self, k: int, J: int = 1) -> int:
        return k

    def validate(self, data: Dataset) -> None:
        pass

    def check(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        self.validate(data)
        return _check_theta(theta, self.n_params(data.k, data.category_count))

    # per-observation quantities
    def loglik_obs(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def score_obs(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def hessian_mean(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def evaluate(
        self, theta: np.ndarray, data: Dataset
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Mean log-likelihood, mean score and mean Hessian in one pass."""
        return (
            float(np.mean(self.loglik_obs(theta, data))),
            self.score_obs(theta, data).mean(axis=0),
            self.hessian_mean(theta, data),
        )

    def loglik_mean(self, theta: np.ndarray, data: Dataset) -> float:
        return float(np.mean(self.loglik_obs(theta, data)))

    def predict(self, theta: np.ndarray, z: np.ndarray, J: int = 1) -> np.ndarray:
        raise NotImplementedError

    def prediction_gradient(self, theta: np.ndarray, z: np.ndarray, J: int = 1) -> np.ndarray:
        raise NotImplementedError

    def predict_rows(self, theta: np.ndarray, X: np.ndarray, J: int = 1) -> np.ndarray:
        """Predictions for each row of ``X`` (N x components)."""
        return np.vstack([self.predict(theta, x, J) for x in np.atleast_2d(X)])

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


def _log_softmax_with_base(eta: np.ndarray) -> np.ndarray:
    """Log probabilities for linear predictors ``eta`` (N x (J-1)) plus a zero base column."""
    full = np.concatenate([eta, np.zeros((eta.shape[0], 1))], axis=1)
    m = full.max(axis=1, keepdims=True)
    shifted = full - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class MultinomialLogit(ModelFamily):
    name = "multinomial-logit"
    discrete = True

    def n_params(self, k: int, J: int = 1) -> int:
        return (J - 1) * (k + 1)

    def validate(self, data: Dataset) -> None:
        J = data.category_count
        if J < 2:
            raise InvalidArgumentError("multinomial logit needs category_count >= 2")
        y = data.outcomes
        if np.any(y != np.round(y)) or y.min() < 1 or y.max() > J:
            raise InvalidArgumentError(f"multinomial outcomes must lie in 1..{J}")

    def _coef(self, theta: np.ndarray, k: int, J: int) -> np.ndarray:
        return theta.reshape(J - 1, k + 1)

    def log_probs(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        B = self._coef(theta, data.k, data.category_count)
        return _log_softmax_with_base(data.design @ B.T)

    def loglik_obs(self, theta, data):
        logp = self.log_probs(theta, data)
        return logp[np.arange(data.n), data.codes]

    def _residual(self, probs: np.ndarray, data: Dataset) -> np.ndarray:
        J = data.category_count
        onehot = np.zeros((data.n, J - 1))
        rows = np.flatnonzero(data.codes < J - 1)
        onehot[rows, data.codes[rows]] = 1.0
        return onehot - probs[:, : J - 1]

    def score_obs(self, theta, data):
        probs = np.exp(self.log_probs(theta, data))
        resid = self._residual(probs, data)
        Z = data.design
        return (resid[:, :, None] * Z[:, None, :]).reshape(data.n, -1)

    def _hessian_from_probs(self, probs: np.ndarray, data: Dataset) -> np.ndarray:
        J = data.category_count
        Z = data.design
        q = Z.shape[1]
        pm = probs[:, : J - 1]
        H = np.empty((J - 1, q, J - 1, q))
        for a in range(J - 1):
            for b in range(a, J - 1):
                w = pm[:, a] * ((a == b) - pm[:, b])
                blk = -(Z.T * w) @ Z / data.n
                H[a, :, b, :] = blk
                if b != a:
                    H[b, :, a, :] = blk.T
        H = H.reshape((J - 1) * q, (J - 1) * q)
        return 0.5 * (H + H.T)

    def hessian_mean(self, theta, data):
        probs = np.exp(self.log_probs(theta, data))
        return self._hessian_from_probs(probs, data)

    def hessian_obs(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        J = data.category_count
        probs = np.exp(self.log_probs(theta, data))[:, : J - 1]
        W = -(np.einsum("ia,ab->iab", probs, np.eye(J - 1)) - probs[:, :, None] * probs[:, None, :])
        Z = data.design
        H = np.einsum("iab,ic,id->iacbd", W, Z, Z)
        p = (J - 1) * Z.shape[1]
        return H.reshape(data.n, p, p)

    def evaluate(self, theta, data):
        logp = self.log_probs(theta, data)
        probs = np.exp(logp)
        ll = float(np.mean(logp[np.arange(data.n), data.codes]))
        resid = self._residual(probs, data)
        grad = (resid.T @ data.design).ravel() / data.n
        return ll, grad, self._hessian_from_probs(probs, data)

    def loglik_mean(self, theta, data):
        return float(np.mean(self.loglik_obs(theta, data)))

    def predict(self, theta, z, J=1):
        z = np.asarray(z, dtype=float).ravel()
        k = z.shape[0]
        B = theta.reshape(J - 1, k + 1)
        eta = B[:, 0] + B[:, 1:] @ z
        return np.exp(_log_softmax_with_base(eta[None, :]))[0]

    def predict_rows(self, theta, X, J=1):
        X = np.atleast_2d(X)
        B = theta.reshape(J - 1, X.shape[1] + 1)
        eta = B[:, 0] + X @ B[:, 1:].T
        return np.exp(_log_softmax_with_base(eta))

    def prediction_gradient(self, theta, z, J=1):
        z = np.asarray(z, dtype=float).ravel()
        P = self.predict(theta, z, J)
        zz = np.concatenate([[1.0], z])
        # d P_c / d theta_(a, .) = P_c (1{c=a} - P_a) zz
        jac = P[:, None] * (np.eye(J)[:, : J - 1] - P[None, : J - 1])
        return (jac[:, :, None] * zz[None, None, :]).reshape(J, -1)


class BinaryLogit(ModelFamily):
    name = "binary-logit"
    discrete = True

    def validate(self, data: Dataset) -> None:
        if not np.all((data.outcomes == 0) | (data.outcomes == 1)):
            raise InvalidArgumentError("binary logit outcomes must be 0 or 1")

    def loglik_obs(self, theta, data):
        eta = data.covariates @ theta
        return data.outcomes * eta - np.logaddexp(0.0, eta)

    def _prob(self, eta: np.ndarray) -> np.ndarray:
        return np.exp(-np.logaddexp(0.0, -eta))

    def score_obs(self, theta, data):
        mu = self._prob(data.covariates @ theta)
        return (data.outcomes - mu)[:, None] * data.covariates

    def hessian_mean(self, theta, data):
        mu = self._prob(data.covariates @ theta)
        X = data.covariates
        return -(X.T * (mu * (1.0 - mu))) @ X / data.n

    def predict(self, theta, z, J=2):
        s = float(self._prob(np.atleast_1d(np.dot(np.asarray(z, dtype=float), theta)))[0])
        return np.array([1.0 - s, s])

    def prediction_gradient(self, theta, z, J=2):
        z = np.asarray(z, dtype=float).ravel()
        s = self.predict(theta, z)[1]
        g = s * (1.0 - s) * z
        return np.vstack([-g, g])


class PoissonLog(ModelFamily):
    name = "poisson-log-link"

    def validate(self, data: Dataset) -> None:
        y = data.outcomes
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise InvalidArgumentError("poisson outcomes must be non-negative integers")

    def loglik_obs(self, theta, data):
        eta = data.covariates @ theta
        y = data.outcomes
        return y * eta - np.exp(eta) - gammaln(y + 1.0)

    def score_obs(self, theta, data):
        mu = np.exp(data.covariates @ theta)
        return (data.outcomes - mu)[:, None] * data.covariates

    def hessian_mean(self, theta, data):
        mu = np.exp(data.covariates @ theta)
        X = data.covariates
        return -(X.T * mu) @ X / data.n

    def predict(self, theta, z, J=1):
        return np.array([math.exp(float(np.dot(z, theta)))])

    def prediction_gradient(self, theta, z, J=1):
        z = np.asarray(z, dtype=float).ravel()
        return (math.exp(float(z @ theta)) * z)[None, :]


class LinearGaussian(ModelFamily):
    """Linear regression with the error variance fixed at one."""

    name = "linear-gaussian"

    def loglik_obs(self, theta, data):
        r = data.outcomes - data.covariates @ theta
        return -0.5 * r * r - 0.5 * _LOG_2PI

    def score_obs(self, theta, data):
        r = data.outcomes - data.covariates @ theta
        return r[:, None] * data.covariates

    def hessian_mean(self, theta, data):
        X = data.covariates
        return -(X.T @ X) / data.n

    def predict(self, theta, z, J=1):
        return np.array([float(np.dot(z, theta))])

    def prediction_gradient(self, theta, z, J=1):
        return np.asarray(z, dtype=float).ravel()[None, :].copy()


FAMILIES: dict[str, ModelFamily] = {
    f.name: f for f in (MultinomialLogit(), BinaryLogit(), PoissonLog(), LinearGaussian())
}


def get_family(name: str | ModelFamily) -> ModelFamily:
    if isinstance(name, ModelFamily):
        return name
    try:
        return FAMILIES[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown family {name!r}; choose from {sorted(FAMILIES)}"
        ) from None


def slope_mask(family: ModelFamily, k: int, J: int = 1) -> np.ndarray:
    """Boolean mask selecting slope coefficients.

    For the multinomial logit the per-equation intercepts are excluded;
    for the other families every coordinate counts as a slope.
    """
    family = get_family(family)
    if isinstance(family, MultinomialLogit):
        m = np.ones((J - 1, k + 1), dtype=bool)
        m[:, 0] = False
        return m.ravel()
    return np.ones(family.n_params(k, J), dtype=bool)


# ---------------------------------------------------------------------
# Checked module-level entry points
# ---------------------------------------------------------------------


def loglik(family, data: Dataset, theta) -> float:
    """Sample-average log-likelihood."""
    family = get_family(family)
    theta = family.check(data, theta)
    return family.loglik_mean(theta, data)


def score_sum(family, data: Dataset, theta) -> np.ndarray:
    """Sample-average score (the gradient of :func:`loglik`)."""
    family = get_family(family)
    theta = family.check(data, theta)
    return family.score_obs(theta, data).mean(axis=0)


def hessian_sum(family, data: Dataset, theta) -> np.ndarray:
    """Sample-average Hessian of the per-observation log density."""
    family = get_family(family)
    theta = family.check(data, theta)
    return family.hessian_mean(theta, data)


def score_outer_mean(family, data: Dataset, theta) -> np.ndarray:
    """Sample average of ``S_i S_i'``."""
    family = get_family(family)
    theta = family.check(data, theta)
    S = family.score_obs(theta, data)
    return S.T @ S / data.n


def _check_z(z, k: int) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != k:
        raise InvalidArgumentError(f"covariate row must have {k} entries, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("covariate row contains non-finite values")
    return z


def _infer_k(family: ModelFamily, p: int, J: int) -> int:
    if isinstance(family, MultinomialLogit):
        if p % (J - 1):
            raise InvalidArgumentError(f"theta length {p} incompatible with J={J}")
        return p // (J - 1) - 1
    return p


def predict(family, theta, z, J: int | None = None) -> np.ndarray:
    """Prediction vector at covariate row ``z``.

    Choice models return a probability vector, Poisson a one-element mean
    and the Gaussian model a one-element regression mean.
    """
    family = get_family(family)
    theta = np.asarray(theta, dtype=float)
    J = _default_J(family, J)
    z = _check_z(z, _infer_k(family, theta.shape[0], J))
    return family.predict(_check_theta(theta, theta.shape[0]), z, J)


def prediction_gradient(family, theta, z, J: int | None = None) -> np.ndarray:
    """Gradient of each prediction component (components x p)."""
    family = get_family(family)
    theta = np.asarray(theta, dtype=float)
    J = _default_J(family, J)
    z = _check_z(z, _infer_k(family, theta.shape[0], J))
    return family.prediction_gradient(_check_theta(theta, theta.shape[0]), z, J)


def _default_J(family: ModelFamily, J: int | None) -> int:
    if J is not None:
        return int(J)
    if isinstance(family, MultinomialLogit):
        raise InvalidArgumentError("J is required for the multinomial logit")
    return 2 if isinstance(family, BinaryLogit) else 1
