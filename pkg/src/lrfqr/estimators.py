"""Global Frechet regression estimators for quantile-function responses.

Two estimators of the coefficient matrix ``B`` (p x M, column ``m`` is
``beta(u_m)``) are provided:

* :func:`fit_ols` -- the closed-form empirical global Frechet estimator,
  i.e. column-wise least squares of centered quantiles on centered covariates.
* :func:`fit_lowrank` -- penalized least squares with an l1 penalty, a fused
  (total variation) penalty along the quantile grid and a rank constraint,
  solved by proximal gradient descent with SVD projection.

Both centre the responses column-wise, so the fitted intercept is the
pointwise mean quantile function (the empirical Frechet mean).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import InvalidInput, NumericalError, SolverDiverged
from .prox import ProxConfig, fused_prox, soft_threshold, svd_truncate, total_variation
from .quantile import QuantileGrid, QuantileMatrix, QuantileVector, monotone_rearrange, rearrangement_count

log = logging.getLogger(__name__)

ZERO_TOL = 1e-8


class DesignMatrix:
    """Covariates ``X`` (n x p) with their column means and centred copy."""

    def __init__(self, X):
        X = np.array(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise InvalidInput(f"design must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("design contains NaN or infinite values")
        self.X = X
        self.column_means = X.mean(axis=0)
        self.centered = X - self.column_means
        for a in (self.X, self.column_means, self.centered):
            a.setflags(write=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def covariance(self):
        """Empirical covariance with divisor ``n``."""
        return self.centered.T @ self.centered / self.n

    def __repr__(self):
        return f"DesignMatrix(n={self.n}, p={self.p})"


def as_design(X) -> DesignMatrix:
    return X if isinstance(X, DesignMatrix) else DesignMatrix(X)


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    B: np.ndarray
    grid: QuantileGrid
    rank_cap: int | None = None

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        if B.ndim != 2 or B.shape[1] != self.grid.M:
            raise InvalidInput(f"coefficient matrix must be p x {self.grid.M}, got {B.shape}")
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        if self.rank_cap is not None and numerical_rank(B) > self.rank_cap:
            raise NumericalError(f"coefficients exceed rank cap {self.rank_cap}")

    @property
    def p(self):
        return self.B.shape[0]

    @property
    def rank(self):
        return numerical_rank(self.B)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`fit_lowrank`.

    ``step_init=None`` uses ``1/L`` with ``L`` the Lipschitz constant of the
    smooth-loss gradient. ``init`` is ``"random"`` (uniform entries in
    [-0.01, 0.01]) or ``"ols"`` (rank-truncated least squares warm start).
    ``df_mode`` is ``"nonzero"`` or ``"manifold"``.
    """

    prox: ProxConfig = field(default_factory=ProxConfig)
    max_iters: int = 1000
    tol: float = 1e-6
    step_init: float | None = None
    backtrack_factor: float = 0.5
    max_backtracks: int = 50
    seed: int = 0
    init: str = "random"
    df_mode: str = "nonzero"

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InvalidInput("max_iters must be a positive integer")
        if not self.tol > 0:
            raise InvalidInput("tol must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise InvalidInput("backtrack_factor must lie in (0, 1)")
        if self.step_init is not None and not self.step_init > 0:
            raise InvalidInput("step_init must be positive")
        if self.init not in ("random", "ols"):
            raise InvalidInput(f"unknown init {self.init!r}")
        if self.df_mode not in ("nonzero", "manifold"):
            raise InvalidInput(f"unknown df_mode {self.df_mode!r}")

    def with_prox(self, **kw) -> "SolverConfig":
        d = asdict(self)
        d["prox"] = ProxConfig(**{**d["prox"], **kw})
        return SolverConfig(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["prox"] = ProxConfig(**d.get("prox", {}))
        return cls(**d)


@dataclass(eq=False)
class FitResult:
    intercept: np.ndarray
    coefficients: CoefficientMatrix
    x_mean: np.ndarray
    method: str
    iterations: int = 0
    converged: bool = True
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_size_final: float = float("nan")
    df: float = 0.0
    rss: float = float("nan")
    n: int = 0
    pseudoinverse_used: bool = False
    descent_violations: int = 0
    threads: int = 1
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def grid(self) -> QuantileGrid:
        return self.coefficients.grid

    @property
    def B(self) -> np.ndarray:
        return self.coefficients.B

    def fitted(self, X) -> np.ndarray:
        """Unrearranged fitted quantiles ``intercept + (X - x_mean) B``."""
        X = np.atleast_2d(np.asarray(getattr(X, "X", X), dtype=float))
        return self.intercept + (X - self.x_mean) @ self.B


def _blas_threads():
    try:
        from threadpoolctl import threadpool_info
    except ImportError:  # pragma: no cover
        return 1
    counts = [d.get("num_threads", 1) for d in threadpool_info() if d.get("user_api") == "blas"]
    return int(max(counts)) if counts else 1


def _check_pair(X: DesignMatrix, Q: QuantileMatrix):
    if X.n != Q.n:
        raise InvalidInput(f"design has {X.n} rows but responses have {Q.n}")
    if X.n < 2:
        raise InvalidInput("need at least two observations")
    if not np.all(np.isfinite(Q.values)):
        raise InvalidInput("responses contain NaN or infinite values")


def numerical_rank(B, rel_tol: float = 1e-8) -> int:
    """Number of singular values above ``rel_tol`` times the largest one."""
    if not 0 < rel_tol < 1:
        raise InvalidInput("rel_tol must lie in (0, 1)")
    B = np.atleast_2d(np.asarray(getattr(B, "B", B), dtype=float))
    try:
        s = np.linalg.svd(B, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def rsc_diagnostic(X) -> float:
    """Smallest eigenvalue of the empirical covariance of ``X``.

    Positive values lower-bound the curvature of the least-squares loss;
    values at or below ``1e-10`` indicate a singular (ill-posed) design.
    """
    X = as_design(X)
    if X.n < 2:
        raise InvalidInput("need at least two observations")
    return float(np.linalg.eigvalsh(X.covariance())[0])


def degrees_of_freedom(B, mode="nonzero", rank=None) -> float:
    B = np.asarray(B)
    if mode == "nonzero":
        return float(np.count_nonzero(np.abs(B) > ZERO_TOL))
    if mode == "manifold":
        p, M = B.shape
        r = numerical_rank(B) if rank is None else rank
        return float(r * (p + M - r))
    raise InvalidInput(f"unknown df mode {mode!r}")


def fit_ols(X, Q: QuantileMatrix) -> FitResult:
    """Empirical global Frechet regression fit.

    ``B = pinv(Sigma) Gamma`` where ``Sigma`` is the covariate covariance and
    ``Gamma[:, m]`` the covariance of the covariates with ``Q[:, m]``. When
    ``Sigma`` is singular the minimum-norm solution is returned and
    ``pseudoinverse_used`` is set.
    """
    X = as_design(X)
    _check_pair(X, Q)
    Xc = X.centered
    Qbar = Q.column_means()
    Qc = Q.values - Qbar
    Sigma = X.covariance()
    Gamma = Xc.T @ Qc / X.n
    singular = np.linalg.matrix_rank(Sigma) < X.p
    if singular:
        B = np.linalg.pinv(Sigma, hermitian=True) @ Gamma
    else:
        B = np.linalg.solve(Sigma, Gamma)
    resid = Qc - Xc @ B
    return FitResult(
        intercept=Qbar,
        coefficients=CoefficientMatrix(B, Q.grid),
        x_mean=np.array(X.column_means),
        method="ols",
        df=float(X.p * Q.grid.M),
        rss=float(np.sum(resid * resid)),
        n=X.n,
        pseudoinverse_used=bool(singular),
        threads=_blas_threads(),
        warnings=["pseudoinverse_used"] if singular else [],
    )


class LeastSquaresLoss:
    """Smooth part ``f(B) = (nM)^-1 sum_i w_i ||Qc_i - Xc_i B||^2``.

    Cross products are cached so each evaluation costs O(p^2 M).
    """

    def __init__(self, X, Q, weights=None):
        X = as_design(X)
        Qv = np.asarray(getattr(Q, "values", Q), dtype=float)
        n, M = Qv.shape
        if X.n != n:
            raise InvalidInput(f"design has {X.n} rows but responses have {n}")
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInput("weights must be a nonnegative vector of length n")
        Xc = X.centered
        Qc = Qv - Qv.mean(axis=0)
        Xw = Xc * w[:, None]
        self.n, self.M, self.p = n, M, X.p
        self.scale = 1.0 / (n * M)
        self.XtX = Xw.T @ Xc
        self.XtQ = Xw.T @ Qc
        self.QtQ = float(np.sum(w[:, None] * Qc * Qc))
        self.lipschitz = 2.0 * self.scale * float(np.linalg.eigvalsh(self.XtX)[-1])

    def value(self, B):
        quad = np.sum(B * (self.XtX @ B)) - 2.0 * np.sum(B * self.XtQ) + self.QtQ
        return self.scale * max(quad, 0.0)

    def gradient(self, B):
        return 2.0 * self.scale * (self.XtX @ B - self.XtQ)


def smooth_loss(X, Q, B, weights=None) -> float:
    return LeastSquaresLoss(X, Q, weights).value(np.asarray(B, dtype=float))


def smooth_gradient(X, Q, B, weights=None) -> np.ndarray:
    """Gradient ``-2 (nM)^-1 Xc^T W (Qc - Xc B)`` of :func:`smooth_loss`."""
    return LeastSquaresLoss(X, Q, weights).gradient(np.asarray(B, dtype=float))


def penalized_objective(loss: LeastSquaresLoss, B, prox: ProxConfig) -> float:
    val = loss.value(B)
    if prox.lambda_l1:
        val += prox.lambda_l1 * float(np.abs(B).sum())
    if prox.lambda_fused:
        val += prox.lambda_fused * total_variation(B)
    return val


def _prox_step(B, G, a, prox: ProxConfig):
    V = B - a * G
    if prox.lambda_l1:
        V = soft_threshold(V, a * prox.lambda_l1)
    if prox.lambda_fused:
        V = fused_prox(V, a * prox.lambda_fused)
    return svd_truncate(V, prox.rank)


def fit_lowrank(X, Q: QuantileMatrix, cfg: SolverConfig, weights=None) -> FitResult:
    """Penalized rank-constrained fit by proximal gradient descent.

    Each iteration takes a gradient step on the least-squares loss, applies
    the l1 prox, then the fused prox, then projects onto rank ``cfg.prox.rank``
    by truncated SVD. The step is halved until both the smooth-loss
    sufficient-decrease condition and a non-increase of the penalized
    objective hold; after ``max_backtracks`` halvings the original step is
    taken anyway and counted in ``descent_violations``. Iteration stops when
    the relative Frobenius change of the (projected) iterate drops below
    ``cfg.tol``.
    """
    X = as_design(X)
    _check_pair(X, Q)
    prox = cfg.prox
    p, M = X.p, Q.grid.M
    prox.validate_shape(p, M)
    r = prox.rank
    loss = LeastSquaresLoss(X, Q, weights)
    notes = []

    xrank = np.linalg.matrix_rank(X.centered)
    if r > xrank:
        msg = f"rank {r} exceeds numerical rank {xrank} of the centred design"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    if loss.lipschitz <= 0:
        alpha0 = 1.0 if cfg.step_init is None else cfg.step_init
    else:
        alpha0 = 1.0 / loss.lipschitz if cfg.step_init is None else cfg.step_init

    if cfg.init == "ols":
        B = svd_truncate(fit_ols(X, Q).B, r)
    else:
        rng = np.random.default_rng(cfg.seed)
        B = svd_truncate(rng.uniform(-0.01, 0.01, size=(p, M)), r)

    f_cur = loss.value(B)
    F_cur = penalized_objective(loss, B, prox)
    F0 = F_cur
    trace = [F_cur]
    alpha = alpha0
    converged = False
    violations = 0
    it = 0
    for it in range(1, cfg.max_iters + 1):
        G = loss.gradient(B)
        a = min(alpha / cfg.backtrack_factor, alpha0)
        slack = 1e-12 * max(1.0, abs(F_cur))
        first = None
        for _ in range(cfg.max_backtracks + 1):
            Bn = _prox_step(B, G, a, prox)
            if not np.all(np.isfinite(Bn)):
                raise NumericalError(f"non-finite iterate at iteration {it}")
            fn = loss.value(Bn)
            Fn = penalized_objective(loss, Bn, prox)
            if first is None:
                first = (Bn, fn, Fn, a)
            D = Bn - B
            majorized = fn <= f_cur + np.sum(G * D) + np.sum(D * D) / (2 * a) + slack
            if majorized and Fn <= F_cur + slack:
                break
            a *= cfg.backtrack_factor
        else:
            Bn, fn, Fn, a = first
            violations += 1
            log.warning("iteration %d: objective rose from %.6g to %.6g after %d halvings",
                        it, F_cur, Fn, cfg.max_backtracks)
            if Fn > 1e3 * max(F0, np.finfo(float).tiny):
                raise SolverDiverged(
                    f"objective {Fn:.3g} exceeds 1e3 x initial {F0:.3g} at iteration {it}"
                )
        nB = np.linalg.norm(B)
        change = np.linalg.norm(Bn - B)
        rel = change / nB if nB > 0 else (0.0 if change == 0 else np.inf)
        B, f_cur, F_cur, alpha = Bn, fn, Fn, a
        trace.append(F_cur)
        if rel < cfg.tol:
            converged = True
            break

    if violations:
        notes.append(f"{violations} iterations increased the penalized objective")
    resid = Q.values - Q.column_means() - X.centered @ B
    rss = float(np.sum(resid * resid))
    return FitResult(
        intercept=Q.column_means(),
        coefficients=CoefficientMatrix(B, Q.grid, rank_cap=r),
        x_mean=np.array(X.column_means),
        method="lowrank",
        iterations=it,
        converged=converged,
        objective_trace=np.array(trace),
        step_size_final=float(alpha),
        df=degrees_of_freedom(B, cfg.df_mode, rank=numerical_rank(B) if cfg.df_mode == "manifold" else None),
        rss=float(rss),
        n=X.n,
        descent_violations=violations,
        threads=_blas_threads(),
        config=cfg.to_dict(),
        warnings=notes,
    )


def predict_values(fit: FitResult, X_new) -> tuple[np.ndarray, np.ndarray]:
    """Rearranged predictions for each row of ``X_new`` plus swap counts."""
    X_new = np.atleast_2d(np.asarray(getattr(X_new, "X", X_new), dtype=float))
    if X_new.shape[1] != fit.x_mean.size:
        raise InvalidInput(f"expected {fit.x_mean.size} covariates, got {X_new.shape[1]}")
    raw = fit.fitted(X_new)
    counts = np.array([rearrangement_count(row) for row in raw])
    return monotone_rearrange(raw), counts


def predict(fit: FitResult, x_new, return_count: bool = False):
    """Predicted quantile function at covariate vector ``x_new``.

    The linear prediction ``intercept + B^T (x_new - x_mean)`` is sorted into
    a valid (nondecreasing) quantile function. With ``return_count=True`` the
    number of positions moved by the rearrangement is returned as well.
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim != 1:
        raise InvalidInput("x_new must be a single covariate vector")
    vals, counts = predict_values(fit, x_new[None, :])
    q = QuantileVector(fit.grid, vals[0])
    return (q, int(counts[0])) if return_count else q


def predict_matrix(fit: FitResult, X_new) -> QuantileMatrix:
    vals, _ = predict_values(fit, X_new)
    return QuantileMatrix(fit.grid, vals)


def penalty_from_discretized(lam: float, n: int, M: int) -> float:
    """Convert a penalty weight on the grid-averaged penalty with summed loss
    over observations into the solver's per-entry convention."""
    return lam / (n * M)
