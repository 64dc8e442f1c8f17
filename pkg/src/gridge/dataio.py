"""CSV ingestion and deterministic report writers.

Every file written here carries ``schema_version``: JSON reports as a
top-level key, CSV files as the first column.  Floats are written with
``repr`` so reruns produce byte-identical files.

Plot-data CSV schemas
---------------------
risk curve        ``schema_version, lambda, r_hat, selected``
log10 histogram   ``schema_version, log10_lower, log10_upper, count``
effects table     ``schema_version, group, mean, mean_se, quantile, quantile_se, tau``
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .families import Dataset, get_family

__all__ = [
    "SCHEMA_VERSION",
    "read_numeric_csv",
    "read_dataset_csv",
    "to_jsonable",
    "write_json",
    "write_csv",
    "risk_curve_rows",
    "write_risk_curve_csv",
    "log10_histogram",
    "write_histogram_csv",
    "write_table_csv",
]

SCHEMA_VERSION = 1


def read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    """Header plus an all-numeric matrix; bad cells raise :class:`DataError`."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path.name}: file is empty") from None
        if len(set(header)) != len(header) or any(not h for h in header):
            raise DataError(f"{path.name}: header has empty or duplicate column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path.name}: row {lineno} has {len(row)} fields, expected {len(header)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path.name}: row {lineno}, column {name!r}: non-numeric value {cell.strip()!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path.name}: row {lineno}, column {name!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path.name}: no data rows")
    return header, np.asarray(rows, dtype=float)


def read_dataset_csv(path, family, outcome: str = "y", category_count: int | None = None) -> Dataset:
    """Load a CSV with an outcome column and numeric covariates for ``family``.

    For the multinomial family the number of categories defaults to the
    largest outcome code.
    """
    family = get_family(family)
    header, values = read_numeric_csv(path)
    if outcome not in header:
        raise DataError(f"{Path(path).name}: missing outcome column {outcome!r}")
    yi = header.index(outcome)
    cov = [j for j in range(len(header)) if j != yi]
    y = values[:, yi]
    J = 1
    if family.name == "multinomial-logit":
        J = int(y.max()) if category_count is None else int(category_count)
    try:
        data = Dataset(y, values[:, cov], J, tuple(header[j] for j in cov))
        family.validate(data)
    except ValueError as exc:
        raise DataError(f"{Path(path).name}: {exc}") from None
    return data


# ---------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(obj: dict, path) -> None:
    body = {"schema_version": SCHEMA_VERSION, **obj}
    text = json.dumps(to_jsonable(body), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    """Write ``rows`` (sequences aligned with ``columns``) after a schema column."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["schema_version", *columns])
        for row in rows:
            w.writerow([SCHEMA_VERSION, *(fmt_cell(v) for v in row)])


def risk_curve_rows(curve) -> list[tuple[float, float, int]]:
    sel = curve.index
    return [(float(l), float(r), int(i == sel)) for i, (l, r) in enumerate(zip(curve.grid, curve.r_hat))]


def write_risk_curve_csv(curve, path) -> None:
    write_csv(path, ["lambda", "r_hat", "selected"], risk_curve_rows(curve))


def log10_histogram(probs, lowest: int | None = None) -> list[tuple[int, int, int]]:
    """Counts of ``log10 p`` in unit-width bins ``[b, b + 1)``.

    Bins run from ``lowest`` (default: the bin of the smallest value) up
    to ``[0, 1)``, which holds ``p = 1``.  Empty bins are kept.  Zero
    probabilities are counted in the bottom bin.
    """
    p = np.asarray(probs, dtype=float).ravel()
    with np.errstate(divide="ignore"):
        lg = np.log10(p)
    lo_data = int(np.floor(lg[np.isfinite(lg)].min())) if np.isfinite(lg).any() else 0
    lo = lo_data if lowest is None else min(int(lowest), lo_data)
    bins = np.clip(np.floor(np.where(np.isfinite(lg), lg, lo)).astype(np.int64), lo, 0)
    counts = np.bincount(bins - lo, minlength=1 - lo)
    return [(lo + i, lo + i + 1, int(c)) for i, c in enumerate(counts)]


def write_histogram_csv(probs, path, lowest: int | None = None) -> None:
    write_csv(path, ["log10_lower", "log10_upper", "count"], log10_histogram(probs, lowest))


def write_table_csv(rows: list[dict], path, columns=None) -> None:
    if not rows:
        write_csv(path, columns or [], [])
        return
    columns = list(columns or rows[0].keys())
    write_csv(path, columns, [[r.get(c) for c in columns] for r in rows])
