"""Inverse probability weighting with a multinomial-logit propensity model.

Group means use the self-normalized (Hajek) form.  Group quantiles
minimize the absolute weighted estimating function over the observed
outcomes of the group.  Standard errors are sandwich forms that treat
the fitted propensities as known; the quantile Jacobian is a weighted
Gaussian-kernel density at the estimate with Silverman's bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError
from .families import Dataset, MultinomialLogit
from .tuner import DEFAULT_FOLDS, DEFAULT_GRID_SIZE, DEFAULT_R, TuneResult, fit_gridge

__all__ = [
    "CausalDataset",
    "PropensityConfig",
    "PropensityFit",
    "EffectEstimate",
    "fit_propensity",
    "hajek_weights",
    "ipw_mean",
    "ipw_quantile",
    "diagnostics",
    "effects_table",
    "cigarette_group",
    "CIGARETTE_LABELS",
    "validate_cigarette_coding",
    "PROPENSITY_FLOOR",
    "load_causal_csv",
]

PROPENSITY_FLOOR = 1e-8
CIGARETTE_LABELS = ("0", "1-5", "6-10", "11-15", "16-20", "21+")
_FAMILY = MultinomialLogit()


@dataclass
class CausalDataset:
    """Treatment groups coded ``1..G``, real outcomes and covariates."""

    treatment: np.ndarray
    outcome: np.ndarray
    covariates: np.ndarray
    groups: int | None = None
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.treatment, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = np.zeros((t.shape[0], 0)) if X.size == 0 else X.reshape(-1, 1)
        if not (t.shape[0] == y.shape[0] == X.shape[0]):
            raise DataError("treatment, outcome and covariates must have the same number of rows")
        if np.any(t != np.round(t)) or t.min() < 1:
            raise DataError("treatment must be coded as integers 1..G")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("outcome and covariates must be finite")
        G = int(t.max()) if self.groups is None else int(self.groups)
        if t.max() > G:
            raise DataError(f"treatment codes exceed G={G}")
        counts = np.bincount(t.astype(int), minlength=G + 1)[1:]
        if np.any(counts == 0):
            empty = [g + 1 for g in np.flatnonzero(counts == 0)]
            raise DataError(f"treatment groups {empty} are empty")
        self.treatment = t.astype(np.int64)
        self.outcome = y
        self.covariates = X
        self.groups = G

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    def as_choice_data(self) -> Dataset:
        return Dataset(self.treatment, self.covariates, self.groups, self.covariate_names)


@dataclass(frozen=True)
class PropensityConfig:
    selector: str = "mle"
    weighting: str = "hessian"
    lam: float | None = None
    r: float = DEFAULT_R
    grid_size: int = DEFAULT_GRID_SIZE
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    floor: float = PROPENSITY_FLOOR
    target: tuple[float, ...] | None = None


@dataclass
class PropensityFit:
    tune: TuneResult
    raw_probs: np.ndarray
    probs: np.ndarray
    floor: float
    floored_count: np.ndarray
    config: PropensityConfig = field(default_factory=PropensityConfig)

    @property
    def fit(self):
        return self.tune.fit

    @property
    def selected_lambda(self) -> float | None:
        if self.config.selector == "mle":
            return None
        return self.tune.penalty.lam


def fit_propensity(data: CausalDataset, config: PropensityConfig = PropensityConfig()) -> PropensityFit:
    """Fit generalized propensity scores; probabilities below ``floor`` are raised to it."""
    choice = data.as_choice_data()
    tune = fit_gridge(
        _FAMILY,
        choice,
        weighting=config.weighting,
        selector=config.selector,
        target=None if config.target is None else np.asarray(config.target),
        lam=config.lam,
        r=config.r,
        grid_size=config.grid_size,
        folds=config.folds,
        seed=config.seed,
    )
    raw = _FAMILY.predict_rows(tune.fit.theta_hat, data.covariates, data.groups)
    floored = np.maximum(raw, config.floor)
    counts = (raw < config.floor).sum(axis=0)
    return PropensityFit(tune, raw, floored, config.floor, counts, config)


def _group_weights(pfit: PropensityFit, data: CausalDataset, t: int) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= t <= data.groups:
        raise InvalidArgumentError(f"group {t} outside 1..{data.groups}")
    idx = np.flatnonzero(data.treatment == t)
    if idx.size == 0:
        raise InvalidArgumentError(f"group {t} is empty")
    return idx, 1.0 / pfit.probs[idx, t - 1]


def hajek_weights(pfit: PropensityFit, data: CausalDataset, t: int) -> np.ndarray:
    """Normalized inverse-propensity weights of the group-``t`` observations."""
    _, w = _group_weights(pfit, data, t)
    return w / w.sum()


@dataclass
class EffectEstimate:
    group: int
    statistic: str
    estimate: float
    standard_error: float
    tau: float | None = None
    jacobian: float | None = None

    @property
    def computable(self) -> bool:
        return math.isfinite(self.standard_error)


def ipw_mean(pfit: PropensityFit, data: CausalDataset, t: int) -> EffectEstimate:
    idx, w = _group_weights(pfit, data, t)
    y = data.outcome[idx]
    mu = float(np.sum(w * y) / np.sum(w))
    n = data.n
    jac = w.sum() / n
    meat = np.sum((w * (y - mu)) ** 2) / n
    se = math.sqrt(meat / n) / jac
    return EffectEstimate(t, "mean", mu, se, jacobian=float(jac))


def _silverman(y: np.ndarray) -> float:
    if y.size < 2:
        return 0.0
    sd = float(np.std(y, ddof=1))
    q75, q25 = np.percentile(y, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * y.size ** (-0.2)


def ipw_quantile(pfit: PropensityFit, data: CausalDataset, t: int, tau: float) -> EffectEstimate:
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError("tau must lie in (0, 1)")
    idx, w = _group_weights(pfit, data, t)
    y = data.outcome[idx]
    order = np.argsort(y, kind="stable")
    ys, ws = y[order], w[order]
    uniq = np.unique(ys)
    # cumulative weight at each distinct value (inclusive)
    ends = np.searchsorted(ys, uniq, side="right") - 1
    cum = np.cumsum(ws)[ends]
    n = data.n
    crit = np.abs(cum - tau * ws.sum()) / n
    # a tie can only straddle the crossing; take the upper point, where the
    # estimating function turns non-negative (gives the usual median)
    ties = np.flatnonzero(crit <= crit.min() * (1.0 + 1e-12) + 1e-15)
    q = float(uniq[ties[-1]])

    h = _silverman(y)
    psi = w * ((y <= q) - tau)
    meat = float(np.sum(psi**2) / n)
    if h > 0:
        u = (y - q) / h
        dens = float(np.sum(w * np.exp(-0.5 * u * u)) / (n * h * math.sqrt(2.0 * math.pi)))
    else:
        dens = float("nan")
    se = math.sqrt(meat / n) / dens if dens > 0 else float("inf")
    return EffectEstimate(t, "quantile", q, se, tau=tau, jacobian=dens)


def diagnostics(pfit: PropensityFit, data: CausalDataset, tau: float = 0.1) -> dict:
    """Instability summary of a propensity fit."""
    jac = []
    for g in range(1, data.groups + 1):
        d = ipw_quantile(pfit, data, g, tau).jacobian
        jac.append(d if d is not None and math.isfinite(d) else float("nan"))
    jac_arr = np.asarray(jac)
    finite = jac_arr[np.isfinite(jac_arr)]
    predicted = np.argmax(pfit.raw_probs, axis=1) + 1
    return {
        "max_abs_coefficient": float(np.max(np.abs(pfit.fit.theta_hat))),
        "floored_count": int(pfit.floored_count.sum()),
        "floored_count_by_group": [int(c) for c in pfit.floored_count],
        "min_jacobian_diagonal": float(finite.min()) if finite.size else None,
        "jacobian_diagonal": [None if not math.isfinite(v) else float(v) for v in jac],
        "selected_lambda": pfit.selected_lambda,
        "prediction_error": float(np.mean(predicted != data.treatment)),
        "converged": bool(pfit.fit.converged),
        "suspect_separation": bool(pfit.tune.mle.suspect_separation),
        "tau": tau,
    }


def effects_table(pfit: PropensityFit, data: CausalDataset, tau: float = 0.1, groups=None) -> list[dict]:
    """One row per group: mean, its SE, the tau-quantile and its SE."""
    groups = range(1, data.groups + 1) if groups is None else groups
    rows = []
    for g in groups:
        m = ipw_mean(pfit, data, g)
        q = ipw_quantile(pfit, data, g, tau)
        rows.append(
            {
                "group": int(g),
                "mean": m.estimate,
                "mean_se": m.standard_error,
                "quantile": q.estimate,
                "quantile_se": q.standard_error,
                "tau": tau,
            }
        )
    return rows


# ---------------------------------------------------------------------
# smoking-intensity coding
# ---------------------------------------------------------------------


def cigarette_group(cigs_per_day) -> np.ndarray:
    """Map cigarettes per day to groups 1..6: 0, 1-5, 6-10, 11-15, 16-20, 21+."""
    c = np.asarray(cigs_per_day, dtype=float)
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise DataError("cigarettes per day must be finite and non-negative")
    edges = np.array([0.0, 5.0, 10.0, 15.0, 20.0])
    return (np.searchsorted(edges, c, side="left") + 1).astype(np.int64)


def validate_cigarette_coding(data: CausalDataset) -> None:
    if data.groups != len(CIGARETTE_LABELS):
        raise DataError(f"expected {len(CIGARETTE_LABELS)} smoking groups, found {data.groups}")


def load_causal_csv(path, outcome: str = "y", treatment: str = "t") -> CausalDataset:
    """Read a CSV with outcome, treatment and numeric covariate columns."""
    from .dataio import read_numeric_csv

    header, values = read_numeric_csv(path)
    for col in (outcome, treatment):
        if col not in header:
            raise DataError(f"{Path(path).name}: missing column {col!r}")
    yi, ti = header.index(outcome), header.index(treatment)
    cov = [j for j in range(len(header)) if j not in (yi, ti)]
    return CausalDataset(
        values[:, ti],
        values[:, yi],
        values[:, cov] if cov else np.zeros((values.shape[0], 0)),
        covariate_names=tuple(header[j] for j in cov),
    )

