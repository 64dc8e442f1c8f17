"""Monte Carlo laboratory for the rare-category multinomial logit design.

Three alternatives, eight Gaussian covariates with heterogeneous
variances, and marginal choice probabilities ``(16/N, (N-16)/2N,
(N-16)/2N)`` so that the first category stays rare at every sample
size.  Category 3 is the base.

The covariate scales, slopes and target offset direction below are a
reconstruction (drawn once from fixed seeds and frozen here); only the
intercepts are calibrated, numerically, to hit the marginal
probabilities.

Replication ``i`` draws from ``default_rng([base_seed, i])`` so serial and
parallel runs agree bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .dataio import SCHEMA_VERSION, write_csv, write_json
from .errors import InvalidArgumentError, InvalidSpecError, SolverFailure
from .estimator import PenaltySpec, fit, fit_mle
from .families import Dataset, MultinomialLogit, slope_mask
from .tuner import (
    DEFAULT_FOLDS,
    DEFAULT_GRID_SIZE,
    DEFAULT_R,
    build_grid,
    fit_gridge,
    fit_path,
    identity_weight,
    lambda_max,
    select_sure,
    sure_inputs,
)

__all__ = [
    "DgpSpec",
    "EstimatorConfig",
    "ReplicationRecord",
    "DEFAULT_ESTIMATORS",
    "calibrate_intercepts",
    "generate",
    "true_theta",
    "target_theta",
    "population_information",
    "run_replication",
    "run_study",
    "coefficient_risk",
    "extreme_count",
    "prediction_mse",
    "tail_prediction_loss",
    "metrics_report",
    "write_records_csv",
    "write_report_json",
    "fixed_lambda_mse",
    "oracle_ratio_study",
    "SCHEMA_VERSION",
]

FAMILY = MultinomialLogit()

COVARIATE_SD = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25)
SLOPES = (
    (-0.2112, -0.5177, 0.1496, -1.7899, 0.2845, -0.3217, -0.7261, 0.0985),
    (-1.9515, -0.1584, -0.7313, 0.4097, 0.4424, -0.9279, -0.9332, -1.4700),
)
# target offset direction over the 16 slope coordinates (normalized on use)
OFFSET_DIRECTION = (
    -0.08612, 0.116317, 0.475348, -0.219585, -0.232917, 0.292184, 0.292841, -0.185595,
    0.038912, -0.196191, 0.020869, 0.526941, -0.177907, 0.070812, -0.167636, 0.249364,
)
MISSPECIFICATION = {"correct": 0.0, "moderate": 0.5, "severe": 2.0}
RARE_COUNT = 16
CALIBRATION_DRAWS = 1_000_000
CALIBRATION_SEED = 20240613


@dataclass(frozen=True)
class DgpSpec:
    n: int
    misspecification: str = "moderate"
    rare_count: float = RARE_COUNT
    covariate_sd: tuple[float, ...] = COVARIATE_SD
    slopes: tuple[tuple[float, ...], ...] = SLOPES
    calibration_draws: int = CALIBRATION_DRAWS
    target_offset: float | None = None

    def __post_init__(self) -> None:
        if self.n <= self.rare_count:
            raise InvalidSpecError(f"need N > {self.rare_count}, got {self.n}")
        if self.misspecification not in MISSPECIFICATION:
            raise InvalidSpecError(f"misspecification must be one of {sorted(MISSPECIFICATION)}")
        if len(self.slopes) != 2 or any(len(b) != len(self.covariate_sd) for b in self.slopes):
            raise InvalidSpecError("slopes must be 2 x k with k = len(covariate_sd)")

    @property
    def k(self) -> int:
        return len(self.covariate_sd)

    @property
    def offset(self) -> float:
        """Distance between the shrinkage target and the truth on the slopes."""
        if self.target_offset is not None:
            return float(self.target_offset)
        return MISSPECIFICATION[self.misspecification]

    @property
    def J(self) -> int:
        return 3

    @property
    def target_probs(self) -> np.ndarray:
        p1 = self.rare_count / self.n
        return np.array([p1, (1 - p1) / 2, (1 - p1) / 2])


@lru_cache(maxsize=64)
def _calibrate(slopes, sd, probs, draws, seed) -> tuple[float, ...]:
    B = np.asarray(slopes)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((draws, len(sd))) * np.asarray(sd)
    lin = X @ B.T
    target = np.asarray(probs)
    a = np.log(target[:2] / target[2])
    for _ in range(100):
        eta = lin + a
        m = np.maximum(eta.max(axis=1, keepdims=True), 0.0)
        e = np.exp(eta - m)
        P = e / (e.sum(axis=1, keepdims=True) + np.exp(-m))
        resid = P.mean(axis=0) - target[:2]
        if np.max(np.abs(resid / target[:2])) < 1e-12:
            break
        jac = np.diag(P.mean(axis=0)) - P.T @ P / draws
        a = a - np.linalg.solve(jac, resid)
    else:
        raise InvalidSpecError("intercept calibration did not converge")
    return tuple(float(v) for v in a)


def calibrate_intercepts(dgp: DgpSpec, seed: int = CALIBRATION_SEED) -> np.ndarray:
    """Intercepts matching the target marginals on ``dgp.calibration_draws`` simulated covariates."""
    probs = tuple(float(v) for v in dgp.target_probs)
    if min(probs) <= 0:
        raise InvalidSpecError("target probabilities must be positive")
    return np.array(_calibrate(dgp.slopes, dgp.covariate_sd, probs, dgp.calibration_draws, seed))


def true_theta(dgp: DgpSpec) -> np.ndarray:
    a = calibrate_intercepts(dgp)
    B = np.asarray(dgp.slopes)
    return np.column_stack([a, B]).ravel()


def target_theta(dgp: DgpSpec, theta0: np.ndarray | None = None) -> np.ndarray:
    """Shrinkage target: the truth shifted by a fixed unit direction on the slopes."""
    theta0 = true_theta(dgp) if theta0 is None else theta0
    mask = slope_mask(FAMILY, dgp.k, dgp.J)
    u = np.asarray(OFFSET_DIRECTION)
    if u.size != mask.sum():
        raise InvalidSpecError("offset direction does not match the slope block")
    out = theta0.copy()
    out[mask] += dgp.offset * u / np.linalg.norm(u)
    return out


def _draw(dgp: DgpSpec, theta0: np.ndarray, rng: np.random.Generator, n: int) -> Dataset:
    X = rng.standard_normal((n, dgp.k)) * np.asarray(dgp.covariate_sd)
    P = FAMILY.predict_rows(theta0, X, dgp.J)
    u = rng.random(n)
    y = 1 + (u[:, None] > np.cumsum(P, axis=1)[:, :-1]).sum(axis=1)
    return Dataset(y, X, dgp.J)


def generate(dgp: DgpSpec, rng: np.random.Generator) -> tuple[Dataset, np.ndarray]:
    theta0 = true_theta(dgp)
    return _draw(dgp, theta0, rng, dgp.n), theta0


def population_information(dgp: DgpSpec, draws: int = 400_000, seed: int = 7) -> np.ndarray:
    """``-E(H1)`` at the true parameter, by simulation over covariates.

    The multinomial logit Hessian does not involve the outcome, and
    ``E(SS') = -E(H1)`` holds exactly in this model.
    """
    theta0 = true_theta(dgp)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((draws, dgp.k)) * np.asarray(dgp.covariate_sd)
    dummy = Dataset(np.full(draws, dgp.J), X, dgp.J)
    return -FAMILY.hessian_mean(theta0, dummy)


# ---------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    name: str
    selector: str = "mle"
    weighting: str = "hessian"
    lam: float | None = None


DEFAULT_ESTIMATORS = (
    EstimatorConfig("MLE", "mle"),
    EstimatorConfig("CV_GRIDGE_H", "cv", "hessian"),
    EstimatorConfig("CV_GRIDGE_X", "cv", "covariate"),
    EstimatorConfig("MSE_GRIDGE_H", "sure", "hessian"),
    EstimatorConfig("MSE_GRIDGE_X", "sure", "covariate"),
)


@dataclass
class ReplicationRecord:
    replication: int
    estimator: str
    lambda_hat: float
    converged: bool
    failed: bool
    suspect_separation: bool
    max_abs_slope: float
    max_abs_slope_error: float
    slope_sq_error: float
    coef_sq_error: float
    pred_loss: float
    mle_hessian_condition: float
    mle_pred_loss: float
    mle_max_abs_slope: float
    theta_hat: tuple[float, ...] = field(default=())


@dataclass(frozen=True)
class StudySettings:
    r: float = DEFAULT_R
    grid_size: int = DEFAULT_GRID_SIZE
    folds: int = DEFAULT_FOLDS


def _pred_loss(theta_hat, theta0, X, J) -> float:
    d = FAMILY.predict_rows(theta_hat, X, J) - FAMILY.predict_rows(theta0, X, J)
    return float(np.sum(d * d) / X.shape[0])


def run_replication(
    dgp: DgpSpec,
    configs,
    base_seed: int,
    index: int,
    settings: StudySettings = StudySettings(),
) -> list[ReplicationRecord]:
    rng = np.random.default_rng([base_seed, index])
    theta0 = true_theta(dgp)
    data = _draw(dgp, theta0, rng, dgp.n)
    fresh = _draw(dgp, theta0, rng, dgp.n)
    cv_seed = int(rng.integers(2**31))
    target = target_theta(dgp, theta0)
    mask = slope_mask(FAMILY, dgp.k, dgp.J)

    mle = fit_mle(FAMILY, data)
    mle_loss = _pred_loss(mle.theta_hat, theta0, fresh.covariates, dgp.J)
    mle_slope = float(np.max(np.abs(mle.theta_hat[mask])))

    out = []
    for cfg in configs:
        failed = False
        try:
            res = fit_gridge(
                FAMILY,
                data,
                weighting=cfg.weighting,
                selector=cfg.selector,
                target=target,
                mask=mask,
                lam=cfg.lam,
                r=settings.r,
                grid_size=settings.grid_size,
                folds=settings.folds,
                seed=cv_seed,
                mle=mle,
            )
            est, lam_hat = res.fit, res.penalty.lam
            theta = est.theta_hat
        except SolverFailure:
            failed, est, lam_hat = True, None, float("nan")
            theta = np.full(theta0.shape, np.nan)
        err = theta - theta0
        out.append(
            ReplicationRecord(
                replication=index,
                estimator=cfg.name,
                lambda_hat=float("nan") if cfg.selector == "mle" else float(lam_hat),
                converged=bool(est.converged) if est else False,
                failed=failed,
                suspect_separation=bool(est.suspect_separation) if est else False,
                max_abs_slope=float(np.max(np.abs(theta[mask]))),
                max_abs_slope_error=float(np.max(np.abs(err[mask]))),
                slope_sq_error=float(err[mask] @ err[mask]),
                coef_sq_error=float(err @ err),
                pred_loss=float("nan") if failed else _pred_loss(theta, theta0, fresh.covariates, dgp.J),
                mle_hessian_condition=float(mle.hessian_condition),
                mle_pred_loss=mle_loss,
                mle_max_abs_slope=mle_slope,
                theta_hat=tuple(float(v) for v in theta),
            )
        )
    return out


def _rep_worker(args):
    return run_replication(*args)


def _parallel_map(func, tasks, threads: int):
    if threads <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * threads))))


def run_study(
    dgp: DgpSpec,
    configs=DEFAULT_ESTIMATORS,
    replications: int = 100,
    base_seed: int = 0,
    settings: StudySettings = StudySettings(),
    threads: int = 1,
) -> list[ReplicationRecord]:
    """All records, ordered by replication then estimator."""
    configs = tuple(configs)
    if not configs:
        raise InvalidArgumentError("need at least one estimator config")
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise InvalidArgumentError("estimator names must be unique")
    true_theta(dgp)  # calibrate once before forking
    tasks = [(dgp, configs, base_seed, i, settings) for i in range(replications)]
    chunks = _parallel_map(_rep_worker, tasks, threads)
    return [rec for chunk in chunks for rec in chunk]


# ---------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------


def _select(records, estimator: str) -> list[ReplicationRecord]:
    rows = [r for r in records if r.estimator == estimator]
    if not rows:
        raise InvalidArgumentError(f"no records for estimator {estimator!r}")
    return rows


def _ratio(value: float, ref: float) -> float:
    if ref == 0.0:
        return value
    return value / ref


def coefficient_risk(records, estimator: str, reference: str | None = "MLE") -> float:
    """Mean squared slope error, divided by the reference estimator's value."""
    rows = _select(records, estimator)
    value = float(np.mean([r.slope_sq_error for r in rows if not r.failed]))
    if reference is None:
        return value
    ref = float(np.mean([r.slope_sq_error for r in _select(records, reference) if not r.failed]))
    return _ratio(value, ref)


def extreme_count(records, estimator: str, threshold: float = 50.0) -> int:
    """Replications whose largest absolute slope error exceeds ``threshold``."""
    return int(sum(1 for r in _select(records, estimator) if r.max_abs_slope_error > threshold))


def prediction_mse(records, estimator: str, reference: str | None = None) -> float:
    rows = _select(records, estimator)
    value = float(np.mean([r.pred_loss for r in rows if not r.failed]))
    if reference is None:
        return value
    return _ratio(value, prediction_mse(records, reference))


def tail_prediction_loss(
    records,
    estimator: str,
    alpha: float = 0.95,
    reference: str | None = None,
    rank_by: str = "mle_loss",
) -> float:
    """Mean out-of-sample loss over replications in the MLE's upper tail.

    ``rank_by='mle_loss'`` keeps replications whose MLE out-of-sample loss
    is at or above its ``alpha`` quantile; ``'mle_max_slope'`` ranks by the
    MLE's largest absolute slope instead.
    """
    rows = _select(records, estimator)
    if rank_by == "mle_loss":
        key = np.array([r.mle_pred_loss for r in rows])
    elif rank_by == "mle_max_slope":
        key = np.array([r.mle_max_abs_slope for r in rows])
    else:
        raise InvalidArgumentError(f"unknown rank_by {rank_by!r}")
    cut = np.quantile(key, alpha)
    losses = [r.pred_loss for r, kv in zip(rows, key) if kv >= cut and not r.failed]
    if not losses:
        raise InvalidArgumentError("empty tail")
    value = float(np.mean(losses))
    if reference is None:
        return value
    return _ratio(value, tail_prediction_loss(records, reference, alpha, None, rank_by))


def metrics_report(
    records,
    reference: str = "MLE",
    threshold: float = 50.0,
    alpha: float = 0.95,
    rank_by: str = "mle_loss",
) -> dict:
    names = list(dict.fromkeys(r.estimator for r in records))
    reps = len({r.replication for r in records})
    rows = {}
    for name in names:
        sub = _select(records, name)
        rows[name] = {
            "coefficient_risk": coefficient_risk(records, name, reference),
            "coefficient_risk_raw": coefficient_risk(records, name, None),
            "extreme_count": extreme_count(records, name, threshold),
            "prediction_mse": prediction_mse(records, name, reference),
            "prediction_mse_raw": prediction_mse(records, name),
            "tail_prediction_loss": tail_prediction_loss(records, name, alpha, reference, rank_by),
            "tail_prediction_loss_raw": tail_prediction_loss(records, name, alpha, None, rank_by),
            "mean_lambda": _nanmean([r.lambda_hat for r in sub]),
            "unconverged": int(sum(1 for r in sub if not r.converged)),
            "failures": int(sum(1 for r in sub if r.failed)),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "replications": reps,
        "reference": reference,
        "threshold": threshold,
        "alpha": alpha,
        "tail_rank_by": rank_by,
        "estimators": rows,
    }


def _nanmean(values) -> float | None:
    arr = np.asarray(values, dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(arr.mean()) if arr.size else None


# ---------------------------------------------------------------------
# output
# ---------------------------------------------------------------------


def write_records_csv(records, path) -> None:
    if not records:
        raise InvalidArgumentError("no records to write")
    base = [f for f in asdict(records[0]) if f != "theta_hat"]
    p = len(records[0].theta_hat)
    rows = []
    for rec in records:
        d = asdict(rec)
        rows.append([*(d[f] for f in base), *rec.theta_hat])
    write_csv(path, [*base, *(f"theta_{j}" for j in range(p))], rows)


def write_report_json(report: dict, path) -> None:
    write_json(report, path)


# ---------------------------------------------------------------------
# risk studies at fixed or selected penalties
# ---------------------------------------------------------------------


def _fixed_worker(args):
    dgp, penalty, base_seed, i = args
    rng = np.random.default_rng([base_seed, i])
    theta0 = true_theta(dgp)
    data = _draw(dgp, theta0, rng, dgp.n)
    res = fit(FAMILY, data, penalty)
    err = res.theta_hat - theta0
    return float(err @ err), bool(res.converged)


def fixed_lambda_mse(
    dgp: DgpSpec, penalty: PenaltySpec, replications: int, base_seed: int = 0, threads: int = 1
) -> dict:
    """Monte Carlo trace MSE of the penalized fit at a fixed penalty."""
    true_theta(dgp)
    out = _parallel_map(_fixed_worker, [(dgp, penalty, base_seed, i) for i in range(replications)], threads)
    sq = np.array([o[0] for o in out])
    return {
        "trace_mse": float(sq.mean()),
        "standard_error": float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("nan"),
        "unconverged": int(sum(1 for o in out if not o[1])),
        "replications": int(sq.size),
    }


def _oracle_worker(args):
    dgp, grid, weight, base_seed, i = args
    rng = np.random.default_rng([base_seed, i])
    theta0 = true_theta(dgp)
    data = _draw(dgp, theta0, rng, dgp.n)
    target = target_theta(dgp, theta0)
    mask = slope_mask(FAMILY, dgp.k, dgp.J)
    mle = fit_mle(FAMILY, data)
    template = PenaltySpec(0.0, weight, target, mask)
    path = fit_path(FAMILY, data, template, grid[1:], mle.theta_hat)
    fits = [mle, *path]
    sq = np.array([np.nan if f is None else float(np.sum((f.theta_hat - theta0) ** 2)) for f in fits])
    curve = select_sure(sure_inputs(mle.theta_hat, -mle.observed_hessian, data.n, weight, target, mask), grid)
    return sq, curve.index


def oracle_ratio_study(
    dgp: DgpSpec,
    replications: int,
    base_seed: int = 0,
    r: float = DEFAULT_R,
    grid_size: int = DEFAULT_GRID_SIZE,
    threads: int = 1,
) -> dict:
    """Risk of the SURE-selected penalty relative to the best fixed grid penalty.

    Uses identity weighting on the slopes so the grid is the same in
    every replication; risk is the Monte Carlo trace MSE over all
    coefficients.
    """
    mask = slope_mask(FAMILY, dgp.k, dgp.J)
    weight = identity_weight(mask)
    grid = build_grid(lambda_max(dgp.n, weight, r, mask), grid_size)
    true_theta(dgp)
    out = _parallel_map(
        _oracle_worker, [(dgp, grid, weight, base_seed, i) for i in range(replications)], threads
    )
    sq = np.vstack([o[0] for o in out])
    picks = np.array([o[1] for o in out])
    risk = np.nanmean(sq, axis=0)
    selected = float(np.mean(sq[np.arange(sq.shape[0]), picks]))
    best = int(np.nanargmin(risk))
    return {
        "n": dgp.n,
        "grid": grid,
        "risk": risk,
        "risk_selected": selected,
        "risk_oracle": float(risk[best]),
        "oracle_lambda": float(grid[best]),
        "ratio": selected / float(risk[best]),
        "mean_selected_lambda": float(np.mean(grid[picks])),
    }
