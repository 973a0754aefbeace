"""Command-line interface: ``lrfqr <command> [options]``.

Commands
    simulate   draw a warping or factor dataset into a run directory
    fit        fit least squares or the low-rank estimator to a dataset
    tune       fit a penalty grid and select by sAIC/sBIC
    predict    predict quantile functions for new covariates
    evaluate   prediction and coefficient accuracy of a stored fit
    benchmark  Monte Carlo tables for the warping or factor design
    plotdata   long-format CSV of figure panels for a run directory

Options are resolved in three layers: built-in defaults, then ``--config``
JSON, then explicit flags. Every command writes ``manifest.json`` with the
resolved configuration. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure; failures print a JSON error document on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import io as lio
from .benchmark import (
    FACTOR_COLUMNS,
    TABLE1_COLUMNS,
    TABLE1_EXTRA,
    FactorBenchmarkSpec,
    WarpingBenchmarkSpec,
    run_factor_cell,
    run_warping_cell,
    write_table_csv,
)
from .errors import GenerationError, GridMismatch, InvalidInput, LrfqrError, NumericalError, TuningFailed
from .estimators import SolverConfig, fit_lowrank, fit_ols, predict_values
from .metrics import prediction_errors_one, residual_rmse
from .model_selection import make_grid, penalty_grid, tune
from .prox import ProxConfig
from .quantile import QuantileMatrix, wasserstein2_rows, write_quantile_csv
from .simulation import FactorConfig, WarpingConfig, gen_factor_dataset, gen_warping_dataset

log = logging.getLogger("lrfqr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "LRFQR_OUTPUT_ROOT"

DEFAULTS = {
    "simulate": {
        "design": "warping", "n": 50, "p": 25, "rank": 5, "M": 100, "rho": 0.9,
        "K_warp": 50, "scale_mode": "inv_p", "noise_sd": 0.5, "seed": 0, "threads": 1,
    },
    "fit": {
        "method": "lowrank", "lambda": 0.0, "lambda_fused": 0.0, "rank": "full",
        "max_iters": 1000, "tol": 1e-6, "init": "random", "seed": 0, "threads": 1,
    },
    "tune": {
        "grid_size": 4, "grid_ratio": 0.1, "rank": "full", "criterion": "saic",
        "bic_uses_total": False, "max_iters": 1000, "tol": 1e-6, "seed": 0, "threads": 1,
    },
    "predict": {"threads": 1},
    "evaluate": {"threads": 1},
    "benchmark": {
        "design": "warping", "ranks": [5, 10], "ns": [50, 100], "B_reps": 20,
        "grid_size": 4, "grid_ratio": 0.1, "criterion": "saic", "seed": 2025, "threads": 1,
        "lambda": 0.01, "lambda_fused": 0.0, "rank": 2, "noise_sd": 0.5,
    },
    "plotdata": {"threads": 1},
}


class UsageError(LrfqrError):
    """Bad command line or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _rank_arg(s):
    if s == "full":
        return s
    try:
        return int(s)
    except ValueError:
        raise argparse.ArgumentTypeError("rank must be an integer or 'full'") from None


def _int_list(s):
    try:
        return [int(x) for x in s.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with option values")
    common.add_argument("--out", help="output run directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker / BLAS thread count")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lrfqr", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"lrfqr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="draw a synthetic dataset")
    p.add_argument("--design", choices=["warping", "factor"])
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--rank", type=int, help="true rank (warping) or factor count")
    p.add_argument("--M", type=int, help="grid size")
    p.add_argument("--rho", type=float)
    p.add_argument("--scale-mode", choices=["inv_p", "inv_sqrt_p"])
    p.add_argument("--noise-sd", type=float)

    def solver_flags(q):
        q.add_argument("--data", help="run directory holding X.csv and Q.csv")
        q.add_argument("--rank", type=_rank_arg, help="rank cap, integer or 'full'")
        q.add_argument("--max-iters", type=int)
        q.add_argument("--tol", type=float)

    p = sub.add_parser("fit", parents=[common], help="fit one model")
    solver_flags(p)
    p.add_argument("--method", choices=["ols", "lowrank"])
    p.add_argument("--lambda", dest="lambda", type=float, help="l1 penalty (solver units)")
    p.add_argument("--lambda-fused", type=float)
    p.add_argument("--init", choices=["random", "ols"])

    p = sub.add_parser("tune", parents=[common], help="select penalties by sAIC/sBIC")
    solver_flags(p)
    p.add_argument("--grid-size", type=int, help="points per penalty axis")
    p.add_argument("--grid-ratio", type=float, help="lowest penalty as a fraction of the largest")
    p.add_argument("--criterion", choices=["saic", "sbic"])
    p.add_argument("--bic-uses-total", action="store_true", default=None)

    p = sub.add_parser("predict", parents=[common], help="predict for new covariates")
    p.add_argument("--fit", required=True, help="fit.json")
    p.add_argument("--x", required=True, help="design CSV")

    p = sub.add_parser("evaluate", parents=[common], help="accuracy of a stored fit")
    p.add_argument("--fit", required=True, help="fit.json")
    p.add_argument("--data", required=True, help="run directory")

    p = sub.add_parser("benchmark", parents=[common], help="Monte Carlo tables")
    p.add_argument("--design", choices=["warping", "factor"])
    p.add_argument("--ranks", type=_int_list, help="comma-separated ranks (warping)")
    p.add_argument("--ns", type=_int_list, help="comma-separated sample sizes")
    p.add_argument("--B-reps", dest="B_reps", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--grid-ratio", type=float)
    p.add_argument("--criterion", choices=["saic", "sbic"])
    p.add_argument("--lambda", dest="lambda", type=float, help="factor design l1 penalty")
    p.add_argument("--lambda-fused", type=float)
    p.add_argument("--rank", type=int, help="factor design rank cap")

    p = sub.add_parser("plotdata", parents=[common], help="emit figure panel data")
    p.add_argument("--run", required=True, help="run directory from simulate")
    p.add_argument("--fit", help="low-rank fit.json (default: <run>/fit.json)")
    p.add_argument("--ols-fit", help="least-squares fit.json (default: refit)")
    return parser


_PATH_KEYS = {"config", "out", "data", "fit", "x", "run", "ols_fit", "verbose", "command"}


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS[args.command])
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if k not in _PATH_KEYS and v is not None:
            cfg[k] = v
    threads = cfg.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise UsageError("threads must be a positive integer")
    return cfg


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    src = getattr(args, "data", None) or getattr(args, "run", None)
    if args.command in ("fit", "tune", "plotdata") and src:
        return Path(src)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{args.command}-seed{cfg.get('seed', 0)}"


def _resolve_rank(rank, p, M):
    full = min(p, M)
    if rank == "full":
        return full
    if not isinstance(rank, int) or not 1 <= rank <= full:
        raise UsageError(f"rank must be 'full' or an integer in [1, {full}]")
    return rank


def _solver(cfg, p, M):
    prox = ProxConfig(lambda_l1=float(cfg.get("lambda", 0.0)),
                      lambda_fused=float(cfg.get("lambda_fused", 0.0)),
                      rank=_resolve_rank(cfg["rank"], p, M))
    extra = {k: cfg[k] for k in ("step_init", "max_backtracks", "backtrack_factor", "df_mode") if k in cfg}
    return SolverConfig(prox=prox, max_iters=int(cfg["max_iters"]), tol=float(cfg["tol"]),
                        seed=int(cfg["seed"]), init=cfg.get("init", "random"), **extra)


def _load_pair(args):
    if not args.data:
        raise UsageError("--data is required")
    X, Q, _, _ = lio.read_dataset(args.data)
    return X, Q


def cmd_simulate(args, cfg, out):
    if cfg["design"] == "warping":
        wc = WarpingConfig(n=cfg["n"], p=cfg["p"], r_true=cfg["rank"], M=cfg["M"], rho=cfg["rho"],
                           K_warp=cfg["K_warp"], scale_mode=cfg["scale_mode"], seed=cfg["seed"])
        data = gen_warping_dataset(wc)
    else:
        fc = FactorConfig(n=cfg["n"], p=cfg["p"], m_quantiles=cfg["M"], K_factors=cfg["rank"],
                          noise_sd=cfg["noise_sd"], seed=cfg["seed"])
        data = gen_factor_dataset(fc)
    lio.write_dataset(out, data)
    return {"files": ["X.csv", "Q.csv", "trueB.csv", "meta.json"], "n": data.Q.n}


def cmd_fit(args, cfg, out):
    X, Q = _load_pair(args)
    if cfg["method"] == "ols":
        fit = fit_ols(X, Q)
    else:
        fit = fit_lowrank(X, Q, _solver(cfg, X.p, Q.grid.M))
    out.mkdir(parents=True, exist_ok=True)
    lio.write_fit_json(out / "fit.json", fit)
    lio.write_coefficients_csv(out / "Bhat.csv", fit.B, fit.grid)
    lio.write_trace_csv(out / "trace.csv", fit)
    return {"method": fit.method, "iterations": fit.iterations, "converged": fit.converged,
            "pseudoinverse_used": fit.pseudoinverse_used}


def cmd_tune(args, cfg, out):
    X, Q = _load_pair(args)
    solver = _solver({**cfg, "lambda": 0.0, "lambda_fused": 0.0}, X.p, Q.grid.M)
    k = int(cfg["grid_size"])
    lam, fus = penalty_grid(X, Q, k, k, float(cfg["grid_ratio"]))
    report = tune(X, Q, make_grid(lam, fus, [solver.prox.rank]), solver,
                  criterion=cfg["criterion"], bic_uses_total=bool(cfg["bic_uses_total"]),
                  threads=cfg["threads"])
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "tuning.json")
    report.write_csv(out / "tuning.csv")
    fit = report.selected_fit
    lio.write_fit_json(out / "fit.json", fit)
    lio.write_coefficients_csv(out / "Bhat.csv", fit.B, fit.grid)
    lio.write_trace_csv(out / "trace.csv", fit)
    c = report.selected
    return {"selected_index": report.selected_index, "lambda": c.lambda_l1,
            "lambda_fused": c.lambda_fused, "rank": c.rank}


def cmd_predict(args, cfg, out):
    fit = lio.read_fit_json(args.fit)
    X = lio.read_design_csv(args.x)
    vals, counts = predict_values(fit, X)
    out.mkdir(parents=True, exist_ok=True)
    write_quantile_csv(QuantileMatrix(fit.grid, vals), out / "predictions.csv")
    with open(out / "rearrangements.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "swaps"])
        w.writerows([i, int(c)] for i, c in enumerate(counts))
    return {"rows": int(vals.shape[0]), "rearranged_rows": int(np.count_nonzero(counts))}


def cmd_evaluate(args, cfg, out):
    fit = lio.read_fit_json(args.fit)
    X, Q, trueB, _ = lio.read_dataset(args.data)
    w2 = prediction_errors_one(fit, X, Q)
    vals, _ = predict_values(fit, X)
    m, s = residual_rmse(Q, vals)
    res = {"pe_mean_w2": float(w2.mean()), "residual_rmse_mean": m, "residual_rmse_sd": s}
    if trueB is not None:
        if trueB.B.shape != fit.B.shape:
            raise InvalidInput(f"trueB shape {trueB.B.shape} differs from fit {fit.B.shape}")
        res["coef_rmse"] = float(np.sqrt(np.sum((fit.B - trueB.B) ** 2) / fit.grid.M))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "evaluation.json", "w") as fh:
        json.dump(res, fh, indent=1, sort_keys=True)
    return res


def cmd_benchmark(args, cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if cfg["design"] == "warping":
        spec = WarpingBenchmarkSpec(ranks=tuple(cfg["ranks"]), ns=tuple(cfg["ns"]),
                                    B_reps=int(cfg["B_reps"]), n_lambda=int(cfg["grid_size"]),
                                    n_fused=int(cfg["grid_size"]), grid_ratio=float(cfg["grid_ratio"]),
                                    criterion=cfg["criterion"],
                                    seed=int(cfg["seed"]), threads=cfg["threads"])
        selections = {}
        for r in spec.ranks:
            for n in spec.ns:
                try:
                    res = run_warping_cell(r, n, spec)
                except LrfqrError as exc:
                    # a failed cell is recorded and the run continues
                    rows.append({"rank": r, "n": n, "p": n // 2, "error": f"{type(exc).__name__}: {exc}"})
                    continue
                rows.append(res.table_row())
                selections[f"r{r}_n{n}"] = res.selected
        write_table_csv(rows, out / "table1.csv", TABLE1_COLUMNS + TABLE1_EXTRA + ["error"])
        with open(out / "selections.json", "w") as fh:
            json.dump(selections, fh, indent=1)
        return {"table": "table1.csv", "cells": len(rows)}
    spec = FactorBenchmarkSpec(ns=tuple(cfg["ns"]), B_reps=int(cfg["B_reps"]),
                               rank=int(cfg["rank"]), lambda_l1=float(cfg["lambda"]),
                               lambda_fused=float(cfg["lambda_fused"]),
                               noise_sd=float(cfg["noise_sd"]), seed=int(cfg["seed"]))
    for n in spec.ns:
        try:
            rows.append(run_factor_cell(n, spec))
        except LrfqrError as exc:
            rows.append({"n": n, "error": f"{type(exc).__name__}: {exc}"})
    write_table_csv(rows, out / "table2.csv", FACTOR_COLUMNS + ["error"])
    return {"table": "table2.csv", "cells": len(rows)}


def plot_panels(X, Q, trueB, meta, lrk_fit=None, ols_fit=None):
    """Rows ``(series, u, value)`` for every figure panel available."""
    u = Q.grid.points
    rows = []

    def add(series, values):
        rows.extend((series, float(a), float(b)) for a, b in zip(u, values))

    if trueB is None or "true_intercept" not in meta:
        raise InvalidInput("run directory lacks trueB.csv or true_intercept in meta.json")
    B = trueB.B
    intercept = np.asarray(meta["true_intercept"], dtype=float)
    center = float(meta.get("latent_center", 0.0))
    latent = intercept + (X.X - center) @ B
    for j, row in enumerate(B):
        add(f"coefficient_{j + 1}", row)
    for i in range(Q.n):
        add(f"latent_{i + 1}", latent[i])
        add(f"response_{i + 1}", Q.values[i])
        add(f"pseudo_error_{i + 1}", Q.values[i] - latent[i])
    if lrk_fit is not None:
        ols_fit = ols_fit or fit_ols(X, Q)
        d_lrk = wasserstein2_rows(Q.values, predict_values(lrk_fit, X)[0])
        d_ols = wasserstein2_rows(Q.values, predict_values(ols_fit, X)[0])
        # residual panel is indexed by observation rather than by u
        for i in range(Q.n):
            rows.append(("residual_w2_lrk", float(i + 1), float(d_lrk[i])))
            rows.append(("residual_w2_ols", float(i + 1), float(d_ols[i])))
    return rows


def cmd_plotdata(args, cfg, out):
    run = Path(args.run)
    for name in ("X.csv", "Q.csv", "trueB.csv", "meta.json"):
        if not (run / name).exists():
            raise InvalidInput(f"missing artifact {run / name}")
    X, Q, trueB, meta = lio.read_dataset(run)
    fit_path = Path(args.fit) if args.fit else run / "fit.json"
    lrk = lio.read_fit_json(fit_path) if fit_path.exists() else None
    if args.fit and lrk is None:
        raise InvalidInput(f"missing artifact {fit_path}")
    ols = lio.read_fit_json(args.ols_fit) if args.ols_fit else None
    rows = plot_panels(X, Q, trueB, meta, lrk, ols)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "plotdata.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "u", "value"])
        w.writerows((s, "%.17g" % a, "%.17g" % b) for s, a, b in rows)
    return {"rows": len(rows), "residual_panel": lrk is not None}


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune, "predict": cmd_predict,
    "evaluate": cmd_evaluate, "benchmark": cmd_benchmark, "plotdata": cmd_plotdata,
}

# worker-parallel commands pin BLAS to one thread to avoid oversubscription
_WORKER_PARALLEL = {"tune", "benchmark"}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (NumericalError, TuningFailed)):
        return EXIT_NUMERICAL
    if isinstance(exc, (InvalidInput, GridMismatch, GenerationError, OSError, LrfqrError)):
        return EXIT_DATA
    return EXIT_NUMERICAL if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)) else EXIT_DATA


def _fail(exc, code):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _out_dir(args, cfg)
        blas = 1 if args.command in _WORKER_PARALLEL else cfg["threads"]
        with threadpool_limits(limits=blas):
            summary = COMMANDS[args.command](args, cfg, out)
        inputs = {k: v for k, v in vars(args).items()
                  if k in ("config", "data", "fit", "x", "run", "ols_fit") and v is not None}
        lio.write_manifest(out, args.command, {**cfg, "blas_threads": blas}, inputs)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        if not isinstance(exc, (LrfqrError, OSError, ArithmeticError, ValueError, KeyError, TypeError)):
            raise
        if isinstance(exc, (KeyError, TypeError)):
            exc = UsageError(f"bad configuration value: {exc}")
        return _fail(exc, exit_code_for(exc))
    print(json.dumps({"command": args.command, "out": str(out), **summary}, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
