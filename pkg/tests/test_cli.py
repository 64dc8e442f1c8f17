from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from gridge.cli import ExperimentConfig, load_config, main
from gridge.dataio import log10_histogram, read_dataset_csv, read_numeric_csv
from gridge.errors import ConfigError, DataError
from gridge.tuner import RiskCurve


def write_data(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def gaussian_csv(tmp_path, n=30, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = X @ np.array([1.0, -0.5, 2.0]) + rng.normal(size=n)
    path = write_data(tmp_path / "toy.csv", ["y", "c", "x1", "x2"], np.column_stack([y, X]).tolist())
    return path, X, y


def multinomial_csv(tmp_path, n=120, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = np.concatenate([[1, 2, 3], rng.integers(1, 4, size=n - 3)])
    return write_data(tmp_path / "mn.csv", ["y", "x1", "x2"], np.column_stack([y, X]).tolist())


def causal_csv(tmp_path, n=150, seed=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    t = np.concatenate([[1, 2, 3], rng.integers(1, 4, size=n - 3)])
    y = t + x + rng.normal(size=n)
    return write_data(tmp_path / "c.csv", ["y", "t", "x"], np.column_stack([y, t, x]).tolist())


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------
# data input
# ---------------------------------------------------------------------


def test_malformed_csv_reports_row_and_column(tmp_path):
    path = write_data(tmp_path / "bad.csv", ["y", "x1"], [[1.0, 0.5], [2.0, "abc"]])
    with pytest.raises(DataError) as exc:
        read_numeric_csv(path)
    assert "row 3" in str(exc.value) and "x1" in str(exc.value)


def test_missing_outcome_column(tmp_path):
    path = write_data(tmp_path / "d.csv", ["a", "b"], [[1, 2]])
    with pytest.raises(DataError):
        read_dataset_csv(path, "linear-gaussian")


def test_multinomial_categories_inferred(tmp_path):
    data = read_dataset_csv(multinomial_csv(tmp_path), "multinomial-logit")
    assert data.category_count == 3 and data.k == 2


# ---------------------------------------------------------------------
# config
# ---------------------------------------------------------------------


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"mode": "fit", "lambada": 1}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_relative_paths_resolve_against_config(tmp_path):
    data = gaussian_csv(tmp_path)[0]
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"mode": "fit", "family": "linear-gaussian", "data": data.name}))
    assert load_config(cfg_path).data == str(data)


def test_invalid_values_rejected(tmp_path):
    data = str(gaussian_csv(tmp_path)[0])
    for bad in ({"r": 0.0}, {"weighting": "other"}, {"grid_size": 1}, {"mode": "plot"}):
        with pytest.raises(ConfigError):
            ExperimentConfig(**{"mode": "fit", "data": data, **bad}).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="fit", data=str(tmp_path / "missing.csv")).validate()


# ---------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------


def test_fit_ols(tmp_path):
    data, X, y = gaussian_csv(tmp_path)
    out = tmp_path / "out"
    code = main(["fit", "--data", str(data), "--family", "linear-gaussian", "--out", str(out), "--lam", "0"])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    ols = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(report["fit"]["theta_hat"], ols, atol=1e-8)
    assert report["schema_version"] == 1
    assert report["parameter_names"] == ["c", "x1", "x2"]
    assert (out / "summary.txt").read_text()


def test_tune_single_point_grid(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "tune", "data": multinomial_csv(tmp_path).name, "grid": [0.37]}))
    out = tmp_path / "out"
    assert main(["tune", "--config", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["lambda_hat"] == 0.37
    rows = read_rows(out / "risk_curve.csv")
    assert len(rows) == 1 and rows[0]["selected"] == "1"


def test_exit_codes(tmp_path):
    bad = write_data(tmp_path / "bad.csv", ["y", "x1"], [[1.0, 0.5], [2.0, "abc"]])
    assert main(["fit", "--data", str(bad), "--family", "linear-gaussian", "--out", str(tmp_path / "o")]) == 3
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["fit", "--config", str(cfg)]) == 2


def test_tune_outputs_byte_identical(tmp_path):
    data = multinomial_csv(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["tune", "--data", str(data), "--out", str(out), "--selector", "cv", "--seed", "4", "--grid-size", "6"]
        assert main(args) == 0
        outs.append(out)
    for f in ("report.json", "coefficients.csv", "risk_curve.csv", "summary.txt"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    rows = read_rows(outs[0] / "risk_curve.csv")
    assert len(rows) == 7
    assert list(rows[0]) == ["schema_version", "lambda", "r_hat", "selected"]
    assert sum(r["selected"] == "1" for r in rows) == 1


def test_risk_mode(tmp_path):
    out = tmp_path / "out"
    args = ["risk", "--data", str(multinomial_csv(tmp_path)), "--out", str(out), "--grid-size", "4"]
    assert main(args) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["improvement_bound"] > 0
    assert len(read_rows(out / "risk_curve.csv")) == 5


def test_causal_mode(tmp_path):
    out = tmp_path / "out"
    assert main(["causal", "--data", str(causal_csv(tmp_path)), "--out", str(out), "--selector", "sure"]) == 0
    effects = read_rows(out / "effects.csv")
    assert [int(r["group"]) for r in effects] == [1, 2, 3]
    hist = read_rows(out / "propensity_hist.csv")
    assert sum(int(r["count"]) for r in hist) == 150 * 3
    report = json.loads((out / "report.json").read_text())
    assert "diagnostics" in report


def test_simulate_mode_deterministic(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps({"mode": "simulate", "n": 60, "replications": 3, "estimators": ["MLE", "MSE_GRIDGE_H"], "grid_size": 5})
    )
    for name, threads in (("a", "1"), ("b", "2")):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name), "--threads", threads]) == 0
    for f in ("report.json", "records.csv", "table.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert len(read_rows(tmp_path / "a" / "records.csv")) == 6


# ---------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------


def test_risk_curve_rows(tmp_path):
    from gridge.dataio import write_risk_curve_csv

    curve = RiskCurve(np.array([0.0, 0.1, 1.0]), np.array([3.0, 1.0, 2.0]), 0.1, "sure")
    write_risk_curve_csv(curve, tmp_path / "r.csv")
    rows = read_rows(tmp_path / "r.csv")
    assert [r["selected"] for r in rows] == ["0", "1", "0"]
    assert float(rows[1]["lambda"]) == 0.1


def test_histogram_unit_bins_keep_empty():
    hist = log10_histogram([0.5, 0.2, 1e-3, 1e-3, 1.0])
    assert hist == [(-3, -2, 2), (-2, -1, 0), (-1, 0, 2), (0, 1, 1)]
    assert all(hi - lo == 1 for lo, hi, _ in hist)


def test_histogram_lowest_and_zero():
    hist = log10_histogram([0.0, 0.5], lowest=-20)
    assert hist[0] == (-20, -19, 1)
    assert len(hist) == 21
    assert sum(c for *_, c in hist) == 2
