"""Penalty selection for generalized ridge fits.

Two selectors share one grid:

* ``sure`` minimizes the plug-in Stein risk estimate of the quadratic
  shrinkage approximation ``delta(lam) = target + A(lam) (theta_mle - target)``
  with ``A(lam) = (J + 2 lam G)^{-1} J``, ``J`` the observed information at
  the MLE and ``G = W'W``;
* ``cv`` maximizes the held-out average log-likelihood over stratified folds.

The grid is geometric on ``[1e-4, 1] * lambda_max`` plus zero, where
``lambda_max = 1 / (N * min_eig(G) * r^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateFoldError,
    InvalidArgumentError,
    InvalidWeightingError,
    SingularMomentError,
    SolverFailure,
)
from .estimator import FitResult, PenaltySpec, fit, fit_mle
from .families import Dataset, ModelFamily, MultinomialLogit, get_family, slope_mask
from .risk import sqrtm_psd

__all__ = [
    "SureInputs",
    "RiskCurve",
    "TuneResult",
    "identity_weight",
    "hessian_weight",
    "covariate_weight",
    "make_weight",
    "lambda_max",
    "build_grid",
    "sure_inputs",
    "shrink_affine",
    "sure_value",
    "select_sure",
    "select_cv",
    "stratified_folds",
    "fit_path",
    "fit_gridge",
    "WEIGHTINGS",
    "SELECTORS",
]

WEIGHTINGS = ("identity", "hessian", "covariate")
SELECTORS = ("mle", "sure", "cv", "fixed")
DEFAULT_R = 0.1
DEFAULT_GRID_SIZE = 50
DEFAULT_FOLDS = 5


# ---------------------------------------------------------------------
# weighting matrices
# ---------------------------------------------------------------------


def _embed(block: np.ndarray, mask: np.ndarray) -> np.ndarray:
    p = mask.shape[0]
    W = np.zeros((p, p))
    W[np.ix_(mask, mask)] = block
    return W


def identity_weight(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return np.diag(mask.astype(float))


def hessian_weight(J_hat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Square root of the observed information restricted to the masked block."""
    mask = np.asarray(mask, dtype=bool)
    return _embed(sqrtm_psd(J_hat[np.ix_(mask, mask)]), mask)


def covariate_weight(family, data: Dataset, mask: np.ndarray) -> np.ndarray:
    """Square root of the covariate second-moment matrix.

    For the multinomial logit the ``k x k`` root is repeated on the slope
    block of every equation.
    """
    family = get_family(family)
    mask = np.asarray(mask, dtype=bool)
    X = data.covariates
    root = sqrtm_psd(X.T @ X / data.n)
    if isinstance(family, MultinomialLogit):
        J, k = data.category_count, data.k
        q = k + 1
        W = np.zeros(((J - 1) * q, (J - 1) * q))
        for a in range(J - 1):
            W[a * q + 1 : (a + 1) * q, a * q + 1 : (a + 1) * q] = root
        W[~mask, :] = 0.0
        W[:, ~mask] = 0.0
        return W
    return _embed(root[np.ix_(mask, mask)], mask)


def make_weight(kind: str, family, data: Dataset, mask: np.ndarray, J_hat=None) -> np.ndarray:
    if kind == "identity":
        return identity_weight(mask)
    if kind == "hessian":
        if J_hat is None:
            raise InvalidArgumentError("hessian weighting needs the observed information")
        return hessian_weight(J_hat, mask)
    if kind == "covariate":
        return covariate_weight(family, data, mask)
    raise InvalidArgumentError(f"unknown weighting {kind!r}; choose from {WEIGHTINGS}")


# ---------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------


def lambda_max(N: int, weight: np.ndarray, r: float = DEFAULT_R, mask=None) -> float:
    """``1 / (N * min_eig(W'W) * r^2)`` with the eigenvalue taken over the masked block."""
    if not r > 0:
        raise InvalidArgumentError("r must be positive")
    weight = np.atleast_2d(np.asarray(weight, dtype=float))
    m = np.ones(weight.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    G = (weight.T @ weight)[np.ix_(m, m)]
    if G.size == 0:
        raise InvalidWeightingError("empty penalization mask")
    emin = float(np.linalg.eigvalsh(G).min())
    if not emin > 1e-300:
        raise InvalidWeightingError("weight'weight is singular on the masked block")
    return 1.0 / (N * emin * r * r)


def build_grid(lam_max: float, size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Zero followed by ``size`` geometric points from ``1e-4 * lam_max`` to ``lam_max``."""
    if size < 2:
        raise InvalidArgumentError("grid size must be at least 2")
    if not (np.isfinite(lam_max) and lam_max > 0):
        raise InvalidArgumentError("lambda_max must be positive and finite")
    pts = lam_max * np.logspace(-4.0, 0.0, size)
    pts[-1] = lam_max
    return np.concatenate([[0.0], pts])


# ---------------------------------------------------------------------
# SURE
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SureInputs:
    theta_mle: np.ndarray
    J_hat: np.ndarray
    V_hat: np.ndarray
    N: int
    weight: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    v_from_j: bool = False

    @property
    def gram(self) -> np.ndarray:
        return self.weight.T @ self.weight


def sure_inputs(theta_mle, J_hat, N: int, weight, target, mask) -> SureInputs:
    """Bundle the plug-in quantities; ``V_hat = J_hat^{-1} / N``.

    An exactly singular ``J_hat`` falls back to the pseudo-inverse; the
    ``lam > 0`` grid points stay well defined through the penalty.
    """
    J_hat = np.asarray(J_hat, dtype=float)
    J_hat = 0.5 * (J_hat + J_hat.T)
    try:
        V = np.linalg.inv(J_hat) / N
    except np.linalg.LinAlgError:
        V = np.linalg.pinv(J_hat) / N
    return SureInputs(
        np.asarray(theta_mle, dtype=float),
        J_hat,
        V,
        int(N),
        np.asarray(weight, dtype=float),
        np.asarray(target, dtype=float),
        np.asarray(mask, dtype=bool),
        v_from_j=True,
    )


def _system(inputs: SureInputs, lam: float) -> np.ndarray:
    return inputs.J_hat + 2.0 * lam * inputs.gram


def shrink_affine(inputs: SureInputs, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic-approximation shrinkage ``(delta, A)`` at penalty ``lam``."""
    M = _system(inputs, lam)
    try:
        A = np.linalg.solve(M, inputs.J_hat)
    except np.linalg.LinAlgError:
        raise SingularMomentError(f"J + 2 lam W'W is singular at lam={lam}") from None
    delta = inputs.target + A @ (inputs.theta_mle - inputs.target)
    return delta, A


def _sure_terms(inputs: SureInputs, lam: float) -> tuple[float, float]:
    """Fit term ``||delta - theta||^2`` and ``trace(V A)``.

    ``delta - theta`` is formed as ``-(J + 2 lam G)^{-1} 2 lam G (theta - target)``.
    When ``V = J^{-1} / N``, ``trace(V A)`` equals ``trace((J + 2 lam G)^{-1}) / N``,
    which stays accurate when ``J`` is nearly singular.
    """
    if lam == 0.0:
        return 0.0, float(np.trace(inputs.V_hat))
    M = _system(inputs, lam)
    p = M.shape[0]
    shift_rhs = 2.0 * lam * inputs.gram @ (inputs.theta_mle - inputs.target)
    other = np.eye(p) if inputs.v_from_j else inputs.J_hat
    try:
        sol = np.linalg.solve(M, np.column_stack([shift_rhs, other]))
    except np.linalg.LinAlgError:
        raise SingularMomentError(f"J + 2 lam W'W is singular at lam={lam}") from None
    shift = sol[:, 0]
    if inputs.v_from_j:
        tr_va = float(np.trace(sol[:, 1:])) / inputs.N
    else:
        tr_va = float(np.sum(inputs.V_hat * sol[:, 1:].T))
    return float(shift @ shift), tr_va


def sure_value(inputs: SureInputs, lam: float) -> float:
    """``||delta - theta||^2 + 2 trace(V A) - trace(V)``."""
    fit_term, tr_va = _sure_terms(inputs, lam)
    return fit_term + 2.0 * tr_va - float(np.trace(inputs.V_hat))


@dataclass
class RiskCurve:
    grid: np.ndarray
    r_hat: np.ndarray
    lambda_hat: float
    selector: str
    metadata: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        return int(np.flatnonzero(self.grid == self.lambda_hat)[0])


def _argmin_first(values: np.ndarray) -> int:
    v = np.where(np.isnan(values), np.inf, values)
    return int(np.argmin(v))


def select_sure(inputs: SureInputs, grid) -> RiskCurve:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidArgumentError("empty grid")
    trace_v = float(np.trace(inputs.V_hat))
    r = np.empty(grid.size)
    for i, lam in enumerate(grid):
        try:
            fit_term, tr_va = _sure_terms(inputs, float(lam))
            r[i] = fit_term + 2.0 * tr_va - trace_v
        except SingularMomentError:
            r[i] = np.inf
    j = _argmin_first(r)
    return RiskCurve(grid, r, float(grid[j]), "sure")


# ---------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------


def stratified_folds(family, data: Dataset, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold label per observation, stratified by category for discrete families."""
    family = get_family(family)
    labels = np.empty(data.n, dtype=np.int64)
    if family.discrete:
        groups = [np.flatnonzero(data.outcomes == c) for c in np.unique(data.outcomes)]
    else:
        groups = [np.arange(data.n)]
    offset = 0
    for idx in groups:
        idx = rng.permutation(idx)
        labels[idx] = (offset + np.arange(idx.size)) % folds
        offset += idx.size
    return labels


def fit_path(family, data: Dataset, template: PenaltySpec, grid, init=None) -> list[FitResult | None]:
    """Fit every grid point, largest penalty first, warm-starting downwards.

    Entries are ``None`` where the Newton system failed.
    """
    family = get_family(family)
    grid = np.asarray(grid, dtype=float)
    out: list[FitResult | None] = [None] * grid.size
    start = template.target.copy() if init is None else np.asarray(init, dtype=float)
    for i in np.argsort(-grid, kind="stable"):
        try:
            res = fit(family, data, template.with_lambda(float(grid[i])), start)
        except SolverFailure:
            continue
        out[i] = res
        start = res.theta_hat
    return out


def select_cv(
    family,
    data: Dataset,
    template: PenaltySpec,
    grid,
    folds: int = DEFAULT_FOLDS,
    rng_seed: int = 0,
    labels=None,
) -> RiskCurve:
    """Maximize mean held-out log-likelihood; ``r_hat`` stores its negative.

    ``labels`` (fold index per observation) overrides the stratified split.
    """
    family = get_family(family)
    grid = np.asarray(grid, dtype=float)
    if folds < 2:
        raise InvalidArgumentError("need at least 2 folds")
    if grid.size == 0:
        raise InvalidArgumentError("empty grid")
    if labels is None:
        labels = stratified_folds(family, data, folds, np.random.default_rng(rng_seed))
    else:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (data.n,) or labels.min() < 0 or labels.max() >= folds:
            raise InvalidArgumentError("fold labels must be integers in [0, folds) for every observation")
    cats = np.unique(data.outcomes) if family.discrete else None
    total = np.zeros(grid.size)
    for f in range(folds):
        train = data.subset(labels != f)
        test = data.subset(labels == f)
        if test.n == 0:
            continue
        if cats is not None and np.unique(train.outcomes).size != cats.size:
            raise DegenerateFoldError(f"training fold {f} is missing an outcome category")
        path = fit_path(family, train, template, grid)
        for i, res in enumerate(path):
            if res is None:
                total[i] = -np.inf
            else:
                total[i] += float(np.sum(family.loglik_obs(res.theta_hat, test)))
    score = -total / data.n
    j = _argmin_first(score)
    return RiskCurve(grid, score, float(grid[j]), "cv", {"folds": folds, "rng_seed": rng_seed})


# ---------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------


@dataclass
class TuneResult:
    fit: FitResult
    mle: FitResult
    penalty: PenaltySpec
    curve: RiskCurve | None
    lambda_max: float | None = None


def fit_gridge(
    family: ModelFamily | str,
    data: Dataset,
    *,
    weighting: str = "hessian",
    selector: str = "sure",
    target=None,
    mask=None,
    lam: float | None = None,
    r: float = DEFAULT_R,
    grid_size: int = DEFAULT_GRID_SIZE,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    mle: FitResult | None = None,
    grid=None,
) -> TuneResult:
    """Fit the MLE, build the weighting, select the penalty and refit.

    ``selector='mle'`` returns the MLE unchanged; ``'fixed'`` uses ``lam``.
    The penalized refit is warm-started from the MLE.  An explicit
    ``grid`` replaces the default one built from ``r`` and ``grid_size``.
    """
    family = get_family(family)
    if selector not in SELECTORS:
        raise InvalidArgumentError(f"unknown selector {selector!r}; choose from {SELECTORS}")
    p = family.n_params(data.k, data.category_count)
    mask = slope_mask(family, data.k, data.category_count) if mask is None else np.asarray(mask, dtype=bool)
    target = np.zeros(p) if target is None else np.asarray(target, dtype=float)
    if mle is None:
        mle = fit_mle(family, data)
    if selector == "mle":
        return TuneResult(mle, mle, PenaltySpec.none(p), None)

    J_hat = -mle.observed_hessian
    W = make_weight(weighting, family, data, mask, J_hat)
    template = PenaltySpec(0.0, W, target, mask)

    curve = None
    lmax = None
    if selector == "fixed":
        if lam is None:
            raise InvalidArgumentError("fixed selector needs lam")
        lam_hat = float(lam)
    else:
        lmax = lambda_max(data.n, W, r, mask)
        if grid is None:
            grid = build_grid(lmax, grid_size)
        else:
            grid = np.asarray(grid, dtype=float)
            if grid.ndim != 1 or grid.size == 0 or np.any(~np.isfinite(grid)) or np.any(grid < 0):
                raise InvalidArgumentError("grid must be a non-empty vector of non-negative penalties")
        if selector == "sure":
            curve = select_sure(sure_inputs(mle.theta_hat, J_hat, data.n, W, target, mask), grid)
        else:
            curve = select_cv(family, data, template, grid, folds, seed)
        curve.metadata["suspect_separation"] = bool(mle.suspect_separation)
        lam_hat = curve.lambda_hat

    penalty = template.with_lambda(lam_hat)
    if lam_hat == 0.0:
        return TuneResult(mle, mle, penalty, curve, lmax)
    final = fit(family, data, penalty, mle.theta_hat)
    return TuneResult(final, mle, penalty, curve, lmax)
