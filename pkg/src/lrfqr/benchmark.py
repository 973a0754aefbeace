"""Monte Carlo harnesses for the warping and latent-factor designs.

``run_warping_benchmark`` compares the sAIC/sBIC-tuned low-rank estimator
with least squares on the quantile-warping design and reports coefficient
MSE decomposition plus Wasserstein prediction errors per (rank, n) cell.
``run_factor_benchmark`` compares the two on the latent-factor design by
train/test residual RMSE.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from .errors import GenerationError, LrfqrError
from .estimators import SolverConfig, fit_lowrank, fit_ols, predict_values
from .metrics import MonteCarloSummary, coeff_mse, prediction_error, residual_rmse
from .model_selection import make_grid, penalty_grid, tune
from .prox import ProxConfig
from .quantile import QuantileGrid
from .simulation import (
    FactorConfig,
    WarpingConfig,
    draw_factor_structure,
    draw_warping_coefficients,
    gen_factor_dataset,
    gen_warping_dataset,
)

log = logging.getLogger(__name__)

TABLE1_COLUMNS = [
    "rank", "n", "p",
    "lrk_sqrt_MSE", "lrk_Bias", "lrk_sqrt_Var", "lrk_PE_in", "lrk_PE_out",
    "ols_sqrt_MSE", "ols_Bias", "ols_sqrt_Var", "ols_PE_in", "ols_PE_out",
]
TABLE1_EXTRA = ["lrk_Bias_sq", "ols_Bias_sq", "B_reps", "failed_reps", "redraws"]

FACTOR_COLUMNS = [
    "n", "p",
    "proposed_train_rmse", "proposed_train_sd",
    "ordinary_train_rmse", "ordinary_train_sd",
    "proposed_test_rmse", "proposed_test_sd",
    "ordinary_test_rmse", "ordinary_test_sd",
    "B_reps", "ordinary_pseudoinverse_reps", "proposed_converged_reps",
]


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class WarpingBenchmarkSpec:
    ranks: tuple = (5, 10)
    ns: tuple = (50, 100)
    B_reps: int = 20
    M: int = 100
    rho: float = 0.9
    K_warp: int = 50
    scale_mode: str = "inv_sqrt_p"
    n_holdout: int = 200
    n_lambda: int = 4
    n_fused: int = 4
    grid_ratio: float = 0.1
    criterion: str = "saic"
    max_iters: int = 1000
    tol: float = 1e-6
    seed: int = 2025
    max_redraws: int = 1000
    threads: int = 1


@dataclass
class WarpingCellResult:
    rank: int
    n: int
    p: int
    lrk: MonteCarloSummary
    ols: MonteCarloSummary
    failed_reps: int = 0
    redraws: int = 0
    selected: list = field(default_factory=list)
    lrk_fits: list = field(default_factory=list)
    ols_fits: list = field(default_factory=list)
    elapsed: float = 0.0

    def table_row(self):
        row = {"rank": self.rank, "n": self.n, "p": self.p}
        row.update({f"lrk_{k}": v for k, v in self.lrk.table_row().items()})
        row.update({f"ols_{k}": v for k, v in self.ols.table_row().items()})
        row.update(
            lrk_Bias_sq=self.lrk.bias_sq,
            ols_Bias_sq=self.ols.bias_sq,
            B_reps=self.lrk.B_reps,
            failed_reps=self.failed_reps,
            redraws=self.redraws,
        )
        return row


def _draw_monotone(cfg: WarpingConfig, coefs, grid, ss: np.random.SeedSequence, max_redraws: int):
    """Draw a warping sample, redrawing while the latent model leaves [0, 1] monotonicity."""
    for attempt in range(max_redraws + 1):
        seed = _int_seed(ss.spawn(1)[0])
        try:
            data = gen_warping_dataset(replace(cfg, seed=seed), coefs, grid)
            return data, attempt
        except GenerationError:
            continue
    raise GenerationError(f"no monotone sample after {max_redraws} redraws")


def run_warping_cell(rank: int, n: int, spec: WarpingBenchmarkSpec, p: int | None = None,
                     keep_fits: bool = False) -> WarpingCellResult:
    """One (rank, n) cell of the warping Monte Carlo, with ``p = n // 2`` by default."""
    t0 = time.perf_counter()
    p = n // 2 if p is None else p
    grid = QuantileGrid.midpoint(spec.M)
    ss = np.random.SeedSequence([spec.seed, rank, n, p])
    coef_ss, hold_ss, rep_ss = ss.spawn(3)
    coefs = draw_warping_coefficients(p, rank, np.random.default_rng(coef_ss))
    base = WarpingConfig(n=n, p=p, r_true=rank, M=spec.M, rho=spec.rho,
                         K_warp=spec.K_warp, scale_mode=spec.scale_mode)
    hold_cfg = replace(base, n=spec.n_holdout)
    holdout, redraws = _draw_monotone(hold_cfg, coefs, grid, hold_ss, spec.max_redraws)
    truth = holdout.true_B
    solver = SolverConfig(prox=ProxConfig(rank=rank), max_iters=spec.max_iters, tol=spec.tol)

    def one_rep(b, rss):
        data, extra = _draw_monotone(base, coefs, grid, rss, spec.max_redraws)
        ols = fit_ols(data.X, data.Q)
        lam, fus = penalty_grid(data.X, data.Q, spec.n_lambda, spec.n_fused, spec.grid_ratio)
        report = tune(data.X, data.Q, make_grid(lam, fus, [rank]),
                      replace(solver, seed=b),
                      criterion=spec.criterion)
        return data, extra, ols, report

    def guarded(args):
        try:
            return one_rep(*args), None
        except LrfqrError as exc:
            return None, exc

    jobs = list(enumerate(rep_ss.spawn(spec.B_reps)))
    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as ex:
            outs = list(ex.map(guarded, jobs))
    else:
        outs = [guarded(j) for j in jobs]

    lrk_fits, ols_fits, samples, selected = [], [], [], []
    failed = 0
    for out, exc in outs:
        if exc is not None:
            failed += 1
            log.warning("replication failed: %s", exc)
            continue
        data, extra, ols, report = out
        redraws += extra
        samples.append((data.X, data.Q))
        ols_fits.append(ols)
        lrk_fits.append(report.selected_fit)
        c = report.selected
        saic = np.array([cell.saic for cell in report.cells])
        sbic = np.array([cell.sbic for cell in report.cells])
        aic = np.array([cell.aic for cell in report.cells])
        selected.append({"lambda_l1": c.lambda_l1, "lambda_fused": c.lambda_fused,
                         "df": c.df, "saic": c.saic, "sbic": c.sbic,
                         "index": report.selected_index,
                         "saic_sum": float(saic.sum()), "sbic_sum": float(sbic.sum()),
                         "argmax_saic": int(np.argmax(saic)), "argmin_aic": int(np.argmin(aic))})
    hold = (holdout.X, holdout.Q)
    lrk = MonteCarloSummary.from_runs(lrk_fits, samples, truth, hold)
    ols = MonteCarloSummary.from_runs(ols_fits, samples, truth, hold)
    return WarpingCellResult(
        rank=rank, n=n, p=p, lrk=lrk, ols=ols, failed_reps=failed, redraws=redraws,
        selected=selected,
        lrk_fits=lrk_fits if keep_fits else [],
        ols_fits=ols_fits if keep_fits else [],
        elapsed=time.perf_counter() - t0,
    )


def run_warping_benchmark(spec: WarpingBenchmarkSpec) -> list:
    results = []
    for r in spec.ranks:
        for n in spec.ns:
            res = run_warping_cell(r, n, spec)
            log.info("cell r=%d n=%d done in %.1fs", r, n, res.elapsed)
            results.append(res)
    return results


def write_table_csv(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("%.17g" % v if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class FactorBenchmarkSpec:
    ns: tuple = (100,)
    p_ratio: float = 0.5
    B_reps: int = 20
    m_quantiles: int = 100
    K_factors: int = 2
    noise_sd: float = 0.5
    rank: int = 2
    lambda_l1: float = 0.01
    lambda_fused: float = 0.0
    max_iters: int = 1000
    tol: float = 1e-6
    seed: int = 2025


def run_factor_cell(n: int, spec: FactorBenchmarkSpec, p: int | None = None) -> dict:
    """Train/test residual RMSE of the low-rank and least-squares fits."""
    p = int(round(n * spec.p_ratio)) if p is None else p
    cfg = FactorConfig(n=n, p=p, m_quantiles=spec.m_quantiles, K_factors=spec.K_factors,
                       noise_sd=spec.noise_sd)
    ss = np.random.SeedSequence([spec.seed, n, p])
    struct_ss, rep_ss = ss.spawn(2)
    structure = draw_factor_structure(cfg, np.random.default_rng(struct_ss))
    solver = SolverConfig(
        prox=ProxConfig(lambda_l1=spec.lambda_l1, lambda_fused=spec.lambda_fused,
                        rank=min(spec.rank, p, spec.m_quantiles)),
        max_iters=spec.max_iters, tol=spec.tol,
    )
    acc = {k: [] for k in ("pt", "pts", "ot", "ots", "pv", "pvs", "ov", "ovs")}
    pinv = conv = 0
    for b, bss in enumerate(rep_ss.spawn(spec.B_reps)):
        tr_ss, te_ss = bss.spawn(2)
        train = gen_factor_dataset(cfg, structure, seed=tr_ss)
        test = gen_factor_dataset(cfg, structure, seed=te_ss)
        lrk = fit_lowrank(train.X, train.Q, replace(solver, seed=b))
        ols = fit_ols(train.X, train.Q)
        pinv += ols.pseudoinverse_used
        conv += lrk.converged
        for fit, (k_tr, k_te) in ((lrk, ("pt", "pv")), (ols, ("ot", "ov"))):
            m, s = residual_rmse(train.Q, predict_values(fit, train.X)[0])
            acc[k_tr].append(m)
            acc[k_tr + "s"].append(s)
            m, s = residual_rmse(test.Q, predict_values(fit, test.X)[0])
            acc[k_te].append(m)
            acc[k_te + "s"].append(s)
    avg = {k: float(np.mean(v)) for k, v in acc.items()}
    return {
        "n": n, "p": p,
        "proposed_train_rmse": avg["pt"], "proposed_train_sd": avg["pts"],
        "ordinary_train_rmse": avg["ot"], "ordinary_train_sd": avg["ots"],
        "proposed_test_rmse": avg["pv"], "proposed_test_sd": avg["pvs"],
        "ordinary_test_rmse": avg["ov"], "ordinary_test_sd": avg["ovs"],
        "B_reps": spec.B_reps,
        "ordinary_pseudoinverse_reps": int(pinv),
        "proposed_converged_reps": int(conv),
    }


def run_factor_benchmark(spec: FactorBenchmarkSpec) -> list:
    return [run_factor_cell(n, spec) for n in spec.ns]
