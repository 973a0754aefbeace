"""Monte Carlo accuracy measures for coefficient and distribution estimates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, InvalidInput
from .estimators import predict_values
from .quantile import QuantileMatrix, check_same_grid, wasserstein2_rows


def _coef_array(B):
    return np.asarray(getattr(B, "B", B), dtype=float)


def coeff_mse(estimates, truth):
    """MSE of coefficient-function estimates and its bias/variance split.

    Integrals over ``u`` use the 1/M midpoint rule, so for p x M matrices
    ``mse = mean_b ||B_b - B||_F^2 / M``. Returns ``(mse, bias_sq, var)`` with
    ``mse == bias_sq + var`` up to rounding.
    """
    T = _coef_array(truth)
    ests = [_coef_array(e) for e in estimates]
    if not ests:
        raise InvalidInput("need at least one estimate")
    grid = getattr(truth, "grid", None)
    for e, raw in zip(ests, estimates):
        if e.shape != T.shape:
            raise InvalidInput(f"estimate shape {e.shape} differs from truth {T.shape}")
        g = getattr(raw, "grid", None)
        if grid is not None and g is not None and not grid.matches(g):
            raise InvalidInput("estimate grid differs from truth grid")
    E = np.stack(ests)
    M = T.shape[1]
    mean = E.mean(axis=0)
    mse = float(np.mean(np.sum((E - T) ** 2, axis=(1, 2)))) / M
    bias_sq = float(np.sum((mean - T) ** 2)) / M
    var = float(np.mean(np.sum((E - mean) ** 2, axis=(1, 2)))) / M
    return mse, bias_sq, var


def _qvalues(Q):
    return np.asarray(getattr(Q, "values", Q), dtype=float)


def prediction_errors_one(fit, X, Q) -> np.ndarray:
    """W2 distance between each observed response and its prediction."""
    if isinstance(Q, QuantileMatrix):
        check_same_grid(fit.grid, Q.grid)
    pred, _ = predict_values(fit, X)
    Qv = _qvalues(Q)
    if pred.shape != Qv.shape:
        raise GridMismatch(f"prediction shape {pred.shape} differs from responses {Qv.shape}")
    return wasserstein2_rows(Qv, pred)


def prediction_error(fits, datasets, holdout=None):
    """Mean in-sample and out-of-sample W2 prediction errors.

    ``datasets[b]`` is the ``(X, Q)`` sample that ``fits[b]`` was trained on;
    ``holdout`` is one independent ``(X, Q)`` sample shared by all fits.
    Returns ``(pe_in, pe_out)``; ``pe_out`` is NaN without a holdout.
    """
    fits = list(fits)
    datasets = list(datasets)
    if len(fits) != len(datasets) or not fits:
        raise InvalidInput("need one training sample per fit")
    pe_in = float(np.mean([prediction_errors_one(f, X, Q).mean() for f, (X, Q) in zip(fits, datasets)]))
    if holdout is None:
        return pe_in, float("nan")
    Xh, Qh = holdout
    pe_out = float(np.mean([prediction_errors_one(f, Xh, Qh).mean() for f in fits]))
    return pe_in, pe_out


def residual_rmse(Q_true, Q_fit):
    """Per-observation RMSE over the grid, summarised by (mean, sd) over observations."""
    A, B = _qvalues(Q_true), _qvalues(Q_fit)
    if A.shape != B.shape:
        raise InvalidInput(f"shape mismatch {A.shape} vs {B.shape}")
    if isinstance(Q_true, QuantileMatrix) and isinstance(Q_fit, QuantileMatrix):
        check_same_grid(Q_true.grid, Q_fit.grid)
    per_obs = np.sqrt(np.mean((A - B) ** 2, axis=1))
    sd = float(np.std(per_obs, ddof=1)) if per_obs.size > 1 else 0.0
    return float(per_obs.mean()), sd


@dataclass
class MonteCarloSummary:
    B_reps: int
    rmse_coeff: float
    bias: float
    sd: float
    pe_in: float
    pe_out: float
    bias_sq: float = float("nan")
    per_rep: list = field(default_factory=list)

    @property
    def mse(self):
        return self.rmse_coeff ** 2

    @property
    def var(self):
        return self.sd ** 2

    @classmethod
    def from_runs(cls, fits, datasets, truth, holdout=None, per_rep=None):
        mse, bias_sq, var = coeff_mse([f.coefficients for f in fits], truth)
        pe_in, pe_out = prediction_error(fits, datasets, holdout)
        return cls(
            B_reps=len(fits),
            rmse_coeff=float(np.sqrt(mse)),
            bias=float(np.sqrt(bias_sq)),
            sd=float(np.sqrt(var)),
            pe_in=pe_in,
            pe_out=pe_out,
            bias_sq=bias_sq,
            per_rep=list(per_rep or []),
        )

    def table_row(self):
        return {
            "sqrt_MSE": self.rmse_coeff,
            "Bias": self.bias,
            "sqrt_Var": self.sd,
            "PE_in": self.pe_in,
            "PE_out": self.pe_out,
        }
