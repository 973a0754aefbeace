"""Information criteria and smoothed-weight tuning of the penalty grid."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, replace

import numpy as np

from .errors import InvalidInput, LrfqrError, TuningFailed
from .estimators import FitResult, LeastSquaresLoss, SolverConfig, as_design, fit_lowrank
from .quantile import QuantileMatrix

log = logging.getLogger(__name__)

CRITERIA = ("saic", "sbic")
PERFECT_FIT_RTOL = 1e-20


def gaussian_loglik(residual_sum_of_squares: float, n_obs_total: int) -> float:
    """Profile Gaussian log-likelihood of ``n_obs_total`` residuals.

    ``-(N/2) (log(2 pi RSS/N) + 1)``. A zero RSS returns ``+inf``.
    """
    rss = float(residual_sum_of_squares)
    if n_obs_total <= 0:
        raise InvalidInput("n_obs_total must be positive")
    if not rss >= 0:
        raise InvalidInput(f"RSS must be nonnegative, got {rss}")
    if rss == 0:
        return np.inf
    s2 = rss / n_obs_total
    return -0.5 * n_obs_total * (np.log(2 * np.pi * s2) + 1.0)


def smoothed_weights(criteria) -> np.ndarray:
    """``exp(-c_k/2) / sum_m exp(-c_m/2)``, computed after subtracting ``min(c)``.

    ``-inf`` entries (perfect fits) share all the weight; ``+inf`` entries
    (failed cells) get weight zero.
    """
    c = np.asarray(criteria, dtype=float).ravel()
    if c.size == 0:
        raise InvalidInput("need at least one criterion value")
    if np.any(np.isnan(c)):
        raise InvalidInput("criteria contain NaN")
    if np.all(np.isposinf(c)):
        raise InvalidInput("every criterion is +inf")
    if np.any(np.isneginf(c)):
        w = np.isneginf(c).astype(float)
        return w / w.sum()
    e = np.exp(-(c - c.min()) / 2.0)
    return e / e.sum()


@dataclass
class CriterionCell:
    lambda_l1: float
    lambda_fused: float
    rank: int
    loglik: float = np.nan
    df: float = np.nan
    aic: float = np.inf
    bic: float = np.inf
    saic: float = 0.0
    sbic: float = 0.0
    rss: float = np.nan
    iterations: int = 0
    converged: bool = False
    perfect_fit: bool = False
    error: str | None = None


@dataclass
class TuningReport:
    cells: list
    selected_index: int
    criterion_used: str
    n: int
    bic_sample_size: int
    fits: list | None = None

    @property
    def selected(self) -> CriterionCell:
        return self.cells[self.selected_index]

    @property
    def selected_fit(self) -> FitResult | None:
        return None if self.fits is None else self.fits[self.selected_index]

    def to_dict(self):
        return {
            "criterion_used": self.criterion_used,
            "selected_index": self.selected_index,
            "n": self.n,
            "bic_sample_size": self.bic_sample_size,
            "cells": [asdict(c) for c in self.cells],
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2)

    def write_csv(self, path):
        fields = list(asdict(self.cells[0]).keys()) + ["selected"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for i, c in enumerate(self.cells):
                row = {k: _fmt(v) for k, v in asdict(c).items()}
                row["selected"] = int(i == self.selected_index)
                w.writerow(row)


def _fmt(v):
    return "%.17g" % v if isinstance(v, float) else ("" if v is None else v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def score_fit(fit: FitResult, n: int, M: int, tss: float | None = None, bic_n: int | None = None):
    """Log-likelihood, AIC and BIC of a fit from its RSS and df."""
    rss = fit.rss
    perfect = rss == 0 or (tss is not None and rss <= PERFECT_FIT_RTOL * tss)
    ll = np.inf if perfect else gaussian_loglik(rss, n * M)
    bic_n = n if bic_n is None else bic_n
    aic = -2.0 * ll + 2.0 * fit.df
    bic = -2.0 * ll + np.log(bic_n) * fit.df
    return ll, aic, bic, perfect


def penalty_grid(X, Q: QuantileMatrix, n_l1: int = 4, n_fused: int = 4, ratio: float = 0.1):
    """Log-spaced penalty ladders anchored at data-driven upper ends.

    ``lambda_l1`` runs from ``ratio * lmax`` to ``lmax``, where ``lmax`` is the
    largest absolute entry of the loss gradient at zero (the smallest l1
    weight whose solution is identically zero). ``lambda_fused`` starts at
    zero, so the grid nests the unfused model, and its remaining values run
    over the same decades of ``fmax``, the smallest fused weight at which a
    row-wise constant solution is stationary.

    The default ``ratio`` keeps the ladder within one decade of ``lmax``.
    Below that the l1 step no longer produces zeros, the nonzero count
    saturates at ``p * M`` and information criteria stop discriminating
    between fits.
    """
    loss = LeastSquaresLoss(as_design(X), Q)
    G = loss.gradient(np.zeros((loss.p, loss.M)))
    lmax = float(np.abs(G).max())
    Gc = G - G.mean(axis=1, keepdims=True)
    fmax = float(np.abs(np.cumsum(Gc, axis=1)[:, :-1]).max()) if loss.M > 1 else 0.0
    lam = lmax * np.logspace(np.log10(ratio), 0, n_l1) if n_l1 > 1 else np.array([lmax])
    if n_fused > 2:
        fus = np.r_[0.0, fmax * np.logspace(np.log10(ratio), 0, n_fused - 1)]
    else:
        fus = np.array([0.0, fmax])[2 - n_fused:]
    return lam, fus


def make_grid(lambdas, fused, ranks):
    return [(float(a), float(b), int(r)) for r in ranks for a in lambdas for b in fused]


def tune(X, Q: QuantileMatrix, grid, cfg: SolverConfig, criterion: str = "saic",
         bic_uses_total: bool = False, threads: int = 1, keep_fits: bool = True) -> TuningReport:
    """Fit every ``(lambda_l1, lambda_fused, rank)`` cell and select by sAIC/sBIC.

    Cell ``k`` is fitted with seed ``cfg.seed ^ k``. The selected cell
    maximizes the chosen smoothed weight. ``bic_uses_total`` switches the BIC
    sample size from ``n`` to ``n * M``.
    """
    criterion = criterion.lower()
    if criterion not in CRITERIA:
        raise InvalidInput(f"criterion must be one of {CRITERIA}")
    grid = list(grid)
    if not grid:
        raise InvalidInput("tuning grid is empty")
    X = as_design(X)
    n, M = Q.n, Q.grid.M
    bic_n = n * M if bic_uses_total else n
    Qc = Q.values - Q.column_means()
    tss = float(np.sum(Qc * Qc))

    def run(k):
        lam, fus, r = grid[k]
        c = replace(cfg.with_prox(lambda_l1=lam, lambda_fused=fus, rank=r), seed=cfg.seed ^ k)
        return fit_lowrank(X, Q, c)

    results = [None] * len(grid)
    errors = {}

    def guarded(k):
        try:
            return run(k), None
        except LrfqrError as exc:
            return None, exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(guarded, range(len(grid))))
    else:
        outs = [guarded(k) for k in range(len(grid))]

    cells = []
    for k, (fit, exc) in enumerate(outs):
        lam, fus, r = grid[k]
        cell = CriterionCell(lam, fus, r)
        if exc is not None:
            errors[k] = exc
            cell.error = f"{type(exc).__name__}: {exc}"
            log.warning("tuning cell %d failed: %s", k, cell.error)
        else:
            results[k] = fit
            ll, aic, bic, perfect = score_fit(fit, n, M, tss, bic_n)
            cell.loglik, cell.df, cell.aic, cell.bic = ll, fit.df, aic, bic
            cell.rss, cell.iterations, cell.converged = fit.rss, fit.iterations, fit.converged
            cell.perfect_fit = perfect
        cells.append(cell)

    if len(errors) == len(grid):
        raise TuningFailed(f"all {len(grid)} tuning cells failed", errors)

    saic = smoothed_weights([c.aic for c in cells])
    sbic = smoothed_weights([c.bic for c in cells])
    for c, a, b in zip(cells, saic, sbic):
        c.saic, c.sbic = float(a), float(b)
    weights = saic if criterion == "saic" else sbic
    sel = int(np.argmax(weights))
    return TuningReport(cells, sel, criterion, n, bic_n, results if keep_fits else None)
