"""Command-line front end.

A run is described by a JSON config file; command-line flags override
its keys.  Outputs go to ``--out`` (a directory) as ``report.json`` plus
mode-specific CSV files and a plain-text ``summary.txt``.

Exit status: 0 success, 2 configuration error, 3 data error, 4 solver
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import causal as causal_mod
from . import mclab
from .dataio import (
    read_dataset_csv,
    write_csv,
    write_histogram_csv,
    write_json,
    write_risk_curve_csv,
    write_table_csv,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateFoldError,
    GridgeError,
    InvalidArgumentError,
    SingularMomentError,
    SolverFailure,
)
from .estimator import PenaltySpec, fit
from .families import FAMILIES, get_family, slope_mask
from .risk import MomentInputs, improvement_bound, mse_first_order, prop1_threshold
from .tuner import (
    DEFAULT_FOLDS,
    DEFAULT_GRID_SIZE,
    DEFAULT_R,
    SELECTORS,
    WEIGHTINGS,
    build_grid,
    fit_gridge,
    lambda_max,
    make_weight,
)

__all__ = ["ExperimentConfig", "load_config", "run", "main", "EXIT_CONFIG", "EXIT_DATA", "EXIT_SOLVER"]

MODES = ("fit", "tune", "simulate", "causal", "risk")
TARGET_SOURCES = ("zero", "file", "offset")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


@dataclass
class ExperimentConfig:
    """Run definition.  Keys of the JSON config file match these fields."""

    mode: str = "tune"
    family: str = "multinomial-logit"
    data: str | None = None
    outcome: str = "y"
    treatment: str = "t"
    categories: int | None = None
    weighting: str = "hessian"
    target: str = "zero"
    target_file: str | None = None
    target_offset: float = 0.0
    selector: str = "sure"
    lam: float | None = None
    lambdas: list[float] | None = None
    grid: list[float] | None = None
    grid_size: int = DEFAULT_GRID_SIZE
    r: float = DEFAULT_R
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    threads: int = 1
    out: str = "out"
    # simulate
    n: int = 100
    replications: int = 100
    misspecification: str = "moderate"
    estimators: list[str] | None = None
    # causal
    tau: float = 0.1
    floor: float = causal_mod.PROPENSITY_FLOOR
    histogram_lowest: int | None = None

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        need(self.family in FAMILIES, f"family must be one of {tuple(FAMILIES)}, got {self.family!r}")
        need(self.weighting in WEIGHTINGS, f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        need(self.selector in SELECTORS, f"selector must be one of {SELECTORS}, got {self.selector!r}")
        need(self.target in TARGET_SOURCES, f"target must be one of {TARGET_SOURCES}, got {self.target!r}")
        need(self.r > 0, "r must be positive")
        need(self.grid_size >= 2, "grid_size must be at least 2")
        need(self.folds >= 2, "folds must be at least 2")
        need(self.threads >= 1, "threads must be at least 1")
        need(self.lam is None or self.lam >= 0, "lam must be non-negative")
        need(0.0 < self.tau < 1.0, "tau must lie in (0, 1)")
        need(self.replications >= 1 and self.n >= 1, "n and replications must be positive")
        need(
            self.misspecification in mclab.MISSPECIFICATION,
            f"misspecification must be one of {tuple(mclab.MISSPECIFICATION)}",
        )
        if self.grid is not None:
            need(len(self.grid) > 0 and all(g >= 0 for g in self.grid), "grid must list non-negative penalties")
        if self.selector == "fixed" and self.mode in ("tune", "causal"):
            need(self.lam is not None, "selector 'fixed' needs lam")
        if self.mode in ("fit", "tune", "causal", "risk"):
            need(self.data is not None, f"mode {self.mode!r} needs a data path")
        if self.data is not None:
            need(Path(self.data).is_file(), f"data file not found: {self.data}")
        if self.target == "file":
            need(self.target_file is not None, "target 'file' needs target_file")
            need(Path(self.target_file).is_file(), f"target file not found: {self.target_file}")
        if self.estimators is not None:
            known = {c.name for c in mclab.DEFAULT_ESTIMATORS}
            bad = [e for e in self.estimators if e not in known]
            need(not bad, f"unknown estimators {bad}; choose from {sorted(known)}")


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        # relative paths resolve against the config file's directory
        base = Path(path).resolve().parent
        for key in ("data", "target_file"):
            if isinstance(raw.get(key), str) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------


def _load_data(cfg: ExperimentConfig):
    return read_dataset_csv(cfg.data, cfg.family, cfg.outcome, cfg.categories)


def _target(cfg: ExperimentConfig, p: int, mask: np.ndarray) -> np.ndarray:
    if cfg.target == "zero":
        return np.zeros(p)
    if cfg.target == "offset":
        return np.where(mask, float(cfg.target_offset), 0.0)
    try:
        t = np.loadtxt(cfg.target_file, delimiter=",", ndmin=1, dtype=float)
    except ValueError as exc:
        raise DataError(f"target file {cfg.target_file}: {exc}") from None
    t = t.ravel()
    if t.shape != (p,):
        raise DataError(f"target file has {t.size} values, model has {p} parameters")
    return t


def _fit_summary(res) -> dict:
    return {
        "theta_hat": res.theta_hat,
        "converged": res.converged,
        "iterations": res.iterations,
        "final_gradient_norm": res.final_gradient_norm,
        "objective_value": res.objective_value,
        "lambda": res.lam,
        "suspect_separation": res.suspect_separation,
        "max_abs_coefficient": res.max_abs_coef,
    }


def _coef_rows(theta, names):
    return [(j, names[j] if names else f"theta_{j}", v) for j, v in enumerate(theta)]


def _param_names(family, data) -> list[str]:
    covs = list(data.covariate_names or [f"x{j + 1}" for j in range(data.k)])
    if family.name == "multinomial-logit":
        return [f"{c}[{j + 1}]" for j in range(data.category_count - 1) for c in ["intercept", *covs]]
    return covs


def run_fit(cfg: ExperimentConfig, out: Path) -> dict:
    family = get_family(cfg.family)
    data = _load_data(cfg)
    p = family.n_params(data.k, data.category_count)
    mask = slope_mask(family, data.k, data.category_count)
    lam = 0.0 if cfg.lam is None else float(cfg.lam)
    target = _target(cfg, p, mask)
    if lam == 0.0:
        penalty = PenaltySpec.none(p)
    else:
        J_hat = None
        if cfg.weighting == "hessian":
            from .estimator import fit_mle

            J_hat = -fit_mle(family, data).observed_hessian
        penalty = PenaltySpec(lam, make_weight(cfg.weighting, family, data, mask, J_hat), target, mask)
    res = fit(family, data, penalty)
    names = _param_names(family, data)
    write_csv(out / "coefficients.csv", ["index", "name", "value"], _coef_rows(res.theta_hat, names))
    return {"mode": "fit", "family": family.name, "n": data.n, "parameter_names": names, "fit": _fit_summary(res)}


def run_tune(cfg: ExperimentConfig, out: Path) -> dict:
    family = get_family(cfg.family)
    data = _load_data(cfg)
    p = family.n_params(data.k, data.category_count)
    mask = slope_mask(family, data.k, data.category_count)
    tr = fit_gridge(
        family,
        data,
        weighting=cfg.weighting,
        selector=cfg.selector,
        target=_target(cfg, p, mask),
        mask=mask,
        lam=cfg.lam,
        r=cfg.r,
        grid_size=cfg.grid_size,
        folds=cfg.folds,
        seed=cfg.seed,
        grid=cfg.grid,
    )
    names = _param_names(family, data)
    write_csv(out / "coefficients.csv", ["index", "name", "value"], _coef_rows(tr.fit.theta_hat, names))
    report = {
        "mode": "tune",
        "family": family.name,
        "n": data.n,
        "selector": cfg.selector,
        "weighting": cfg.weighting,
        "lambda_hat": tr.penalty.lam,
        "lambda_max": tr.lambda_max,
        "parameter_names": names,
        "fit": _fit_summary(tr.fit),
        "mle": _fit_summary(tr.mle),
    }
    if tr.curve is not None:
        write_risk_curve_csv(tr.curve, out / "risk_curve.csv")
        report["risk_curve"] = {"grid": tr.curve.grid, "r_hat": tr.curve.r_hat, "metadata": tr.curve.metadata}
    return report


def run_risk(cfg: ExperimentConfig, out: Path) -> dict:
    """First-order MSE over a penalty grid, with moments plugged in at the MLE."""
    from .estimator import fit_mle

    family = get_family(cfg.family)
    data = _load_data(cfg)
    p = family.n_params(data.k, data.category_count)
    mask = slope_mask(family, data.k, data.category_count)
    mle = fit_mle(family, data)
    J_hat = -mle.observed_hessian
    W = make_weight(cfg.weighting, family, data, mask, J_hat)
    template = PenaltySpec(0.0, W, _target(cfg, p, mask), mask)
    S = family.score_obs(mle.theta_hat, data)
    inputs = MomentInputs(-J_hat, S.T @ S / data.n, data.n, template, mle.theta_hat)
    if cfg.lambdas is not None:
        grid = np.asarray(cfg.lambdas, dtype=float)
    elif cfg.grid is not None:
        grid = np.asarray(cfg.grid, dtype=float)
    else:
        grid = build_grid(lambda_max(data.n, W, cfg.r, mask), cfg.grid_size)
    rows = []
    for lam in grid:
        ra = mse_first_order(inputs.with_lambda(float(lam)))
        rows.append((float(lam), ra.trace_risk, float(np.trace(ra.variance_term)), float(np.trace(ra.bias_sq_term))))
    best = int(np.argmin([r[1] for r in rows]))
    write_csv(
        out / "risk_curve.csv",
        ["lambda", "r_hat", "selected", "variance", "bias_sq"],
        [(l, r, int(i == best), v, b) for i, (l, r, v, b) in enumerate(rows)],
    )
    report = {
        "mode": "risk",
        "family": family.name,
        "n": data.n,
        "weighting": cfg.weighting,
        "reference": "mle",
        "improvement_bound": improvement_bound(inputs),
        "grid": [r[0] for r in rows],
        "trace_risk": [r[1] for r in rows],
        "lambda_min_risk": rows[best][0],
    }
    if cfg.weighting == "hessian":
        pr = prop1_threshold(inputs)
        report["curvature_threshold"] = {
            "bounded": pr.bounded,
            "lambda_bar": pr.lambda_bar,
            "estimation_error": pr.estimation_error,
            "target_distance_sq": pr.target_distance_sq,
        }
    return report


def run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    dgp = mclab.DgpSpec(cfg.n, cfg.misspecification)
    configs = mclab.DEFAULT_ESTIMATORS
    if cfg.estimators is not None:
        configs = tuple(c for c in configs if c.name in cfg.estimators)
        if not any(c.name == "MLE" for c in configs):
            configs = (mclab.DEFAULT_ESTIMATORS[0], *configs)
    settings = mclab.StudySettings(cfg.r, cfg.grid_size, cfg.folds)
    records = mclab.run_study(dgp, configs, cfg.replications, cfg.seed, settings, cfg.threads)
    mclab.write_records_csv(records, out / "records.csv")
    report = mclab.metrics_report(records)
    report.pop("schema_version", None)
    report.update({"mode": "simulate", "n": cfg.n, "misspecification": cfg.misspecification, "seed": cfg.seed})
    table = [{"estimator": k, **v} for k, v in report["estimators"].items()]
    write_table_csv(table, out / "table.csv")
    return report


def run_causal(cfg: ExperimentConfig, out: Path) -> dict:
    data = causal_mod.load_causal_csv(cfg.data, cfg.outcome, cfg.treatment)
    pc = causal_mod.PropensityConfig(
        selector=cfg.selector,
        weighting=cfg.weighting,
        lam=cfg.lam,
        r=cfg.r,
        grid_size=cfg.grid_size,
        folds=cfg.folds,
        seed=cfg.seed,
        floor=cfg.floor,
    )
    pfit = causal_mod.fit_propensity(data, pc)
    table = causal_mod.effects_table(pfit, data, cfg.tau)
    diag = causal_mod.diagnostics(pfit, data, cfg.tau)
    write_table_csv(table, out / "effects.csv")
    write_histogram_csv(pfit.raw_probs, out / "propensity_hist.csv", cfg.histogram_lowest)
    if pfit.tune.curve is not None:
        write_risk_curve_csv(pfit.tune.curve, out / "risk_curve.csv")
    return {
        "mode": "causal",
        "n": data.n,
        "groups": data.groups,
        "selector": cfg.selector,
        "weighting": cfg.weighting,
        "effects": table,
        "diagnostics": diag,
        "propensity_coefficients": pfit.fit.theta_hat,
    }


RUNNERS = {"fit": run_fit, "tune": run_tune, "risk": run_risk, "simulate": run_simulate, "causal": run_causal}


def _summary(report: dict) -> str:
    lines = [f"mode: {report['mode']}"]
    for key in ("family", "n", "selector", "weighting", "lambda_hat", "improvement_bound", "lambda_min_risk"):
        if key in report and report[key] is not None:
            lines.append(f"{key}: {report[key]}")
    if "fit" in report:
        f = report["fit"]
        lines.append(f"converged: {f['converged']}  iterations: {f['iterations']}")
        lines.append(f"max |coefficient|: {f['max_abs_coefficient']:.6g}")
    if report["mode"] == "simulate":
        lines.append(f"replications: {report['replications']}")
        lines.append(f"{'estimator':16s}{'risk':>10s}{'extreme':>9s}{'pred':>10s}{'tail':>10s}")
        for name, v in report["estimators"].items():
            lines.append(
                f"{name:16s}{v['coefficient_risk']:10.4f}{v['extreme_count']:9d}"
                f"{v['prediction_mse_raw']:10.5f}{v['tail_prediction_loss']:10.4f}"
            )
    if report["mode"] == "causal":
        lines.append(f"{'group':>5s}{'mean':>12s}{'se':>12s}{'quantile':>12s}{'se':>12s}")
        for r in report["effects"]:
            lines.append(
                f"{r['group']:5d}{r['mean']:12.4f}{r['mean_se']:12.4f}{r['quantile']:12.4f}{r['quantile_se']:12.4g}"
            )
        d = report["diagnostics"]
        lines.append(f"floored propensities: {d['floored_count']}")
        lines.append(f"max |coefficient|: {d['max_abs_coefficient']:.6g}")
    return "\n".join(lines) + "\n"


def run(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = RUNNERS[cfg.mode](cfg, out)
    write_json(report, out / "report.json")
    text = _summary(report)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridge", description="Generalized ridge maximum likelihood toolkit.")
    sub = ap.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("--config", help="JSON run definition")
        sp.add_argument("--data", help="input CSV (overrides config)")
        sp.add_argument("--family", choices=tuple(FAMILIES))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--grid-size", dest="grid_size", type=int)
        sp.add_argument("--r", type=float)
        sp.add_argument("--folds", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--selector", choices=SELECTORS)
        sp.add_argument("--weighting", choices=WEIGHTINGS)
        sp.add_argument("--lam", type=float)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        cfg = load_config(args.config, overrides)
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateFoldError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SolverFailure, SingularMomentError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgumentError, GridgeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
