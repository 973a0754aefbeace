"""CSV/JSON persistence for designs, quantile matrices, fits and datasets.

Floats are written with 17 significant digits so every artifact round-trips
bit-for-bit.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InvalidInput
from .estimators import CoefficientMatrix, DesignMatrix, FitResult
from .quantile import QuantileGrid, QuantileMatrix, read_quantile_csv, write_quantile_csv
from .simulation import SimulatedDataset

FLOAT_FMT = "%.17g"


def _f(x):
    return FLOAT_FMT % x


def write_matrix_csv(path, A, header):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in A:
            w.writerow([_f(x) for x in row])


def read_matrix_csv(path):
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"missing file {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InvalidInput(f"{path} is empty")
    header = rows[0]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise InvalidInput(f"{path}: cannot parse numeric data ({exc})") from None
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise InvalidInput(f"{path}: {data.shape[1]} columns but {len(header)} header fields")
    return header, data


def write_design_csv(path, X):
    X = getattr(X, "X", X)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    write_matrix_csv(path, X, [f"x_{j + 1}" for j in range(X.shape[1])])


def read_design_csv(path) -> DesignMatrix:
    _, data = read_matrix_csv(path)
    return DesignMatrix(data)


def write_coefficients_csv(path, B, grid: QuantileGrid):
    write_matrix_csv(path, getattr(B, "B", B), [_f(u) for u in grid.points])


def read_coefficients_csv(path, grid: QuantileGrid | None = None) -> CoefficientMatrix:
    Q = read_quantile_csv(path, grid)
    return CoefficientMatrix(Q.values, Q.grid)


def _num(x):
    x = float(x)
    if np.isfinite(x):
        return x
    return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")


def _unnum(x):
    return float(x)


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "version": __version__,
        "method": fit.method,
        "grid": [float(u) for u in fit.grid.points],
        "intercept": [float(a) for a in fit.intercept],
        "x_mean": [float(a) for a in fit.x_mean],
        "shape": list(fit.B.shape),
        "B": [float(b) for b in fit.B.ravel(order="C")],
        "rank_cap": fit.coefficients.rank_cap,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "objective_trace": [_num(v) for v in fit.objective_trace],
        "step_size_final": _num(fit.step_size_final),
        "df": float(fit.df),
        "rss": _num(fit.rss),
        "n": fit.n,
        "pseudoinverse_used": fit.pseudoinverse_used,
        "descent_violations": fit.descent_violations,
        "threads": fit.threads,
        "config": fit.config,
        "warnings": list(fit.warnings),
    }


def fit_from_dict(d: dict) -> FitResult:
    grid = QuantileGrid(d["grid"])
    B = np.array(d["B"], dtype=float).reshape(d["shape"])
    return FitResult(
        intercept=np.array(d["intercept"], dtype=float),
        coefficients=CoefficientMatrix(B, grid, d.get("rank_cap")),
        x_mean=np.array(d["x_mean"], dtype=float),
        method=d["method"],
        iterations=int(d.get("iterations", 0)),
        converged=bool(d.get("converged", True)),
        objective_trace=np.array([_unnum(v) for v in d.get("objective_trace", [])]),
        step_size_final=_unnum(d.get("step_size_final", "nan")),
        df=float(d.get("df", 0.0)),
        rss=_unnum(d.get("rss", "nan")),
        n=int(d.get("n", 0)),
        pseudoinverse_used=bool(d.get("pseudoinverse_used", False)),
        descent_violations=int(d.get("descent_violations", 0)),
        threads=int(d.get("threads", 1)),
        config=d.get("config", {}),
        warnings=list(d.get("warnings", [])),
    )


def write_fit_json(path, fit: FitResult):
    # json emits floats via repr, which round-trips exactly
    with open(path, "w") as fh:
        json.dump(fit_to_dict(fit), fh, indent=1)


def read_fit_json(path) -> FitResult:
    path = Path(path)
    if not path.exists():
        raise InvalidInput(f"missing file {path}")
    try:
        with path.open() as fh:
            d = json.load(fh)
        return fit_from_dict(d)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InvalidInput(f"{path}: malformed fit document ({exc})") from None


def write_trace_csv(path, fit: FitResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(fit.objective_trace):
            w.writerow([i, _f(v)])


def write_dataset(run_dir, data: SimulatedDataset):
    """Write X.csv, Q.csv, trueB.csv and meta.json into ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_design_csv(run_dir / "X.csv", data.X)
    write_quantile_csv(data.Q, run_dir / "Q.csv")
    write_coefficients_csv(run_dir / "trueB.csv", data.true_B, data.grid)
    meta = dict(data.meta)
    meta["true_intercept"] = [float(a) for a in data.true_intercept]
    with open(run_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def read_dataset(run_dir):
    """Load ``(X, Q, trueB or None, meta or {})`` from a run directory."""
    run_dir = Path(run_dir)
    X = read_design_csv(run_dir / "X.csv")
    if not (run_dir / "Q.csv").exists():
        raise InvalidInput(f"missing file {run_dir / 'Q.csv'}")
    Q = read_quantile_csv(run_dir / "Q.csv")
    if X.n != Q.n:
        raise InvalidInput(f"X.csv has {X.n} rows but Q.csv has {Q.n}")
    trueB = None
    if (run_dir / "trueB.csv").exists():
        trueB = read_coefficients_csv(run_dir / "trueB.csv", Q.grid)
    meta = {}
    if (run_dir / "meta.json").exists():
        with open(run_dir / "meta.json") as fh:
            meta = json.load(fh)
    return X, Q, trueB, meta


def write_manifest(run_dir, command: str, config: dict, inputs: dict | None = None):
    """Write ``manifest.json``; manifests of earlier commands in the same directory are kept under ``history``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest.json"
    history = []
    if path.exists():
        try:
            with path.open() as fh:
                prev = json.load(fh)
            history = prev.pop("history", []) + [prev]
        except (OSError, json.JSONDecodeError):
            history = []
    doc = {"command": command, "version": __version__, "config": config,
           "inputs": inputs or {}, "history": history}
    with path.open("w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)
