"""Synthetic distribution-response designs.

Quantile warping
    Covariates ``X = Phi(Z)`` with ``Z`` Gaussian AR(1)-correlated. The latent
    quantile function is ``Q(u|X) = u + sum_j beta_j(u) (X_j - 1/2)`` with
    ``beta_j = scale(p) * sum_k c_jk gamma_k`` and
    ``gamma_k(u) = I_u(k+1, r-k+1) - u``. Each response is a random
    Bernstein-type warp of the latent quantile function,
    ``Q_Y(u) = sum_k w_k I_{Q(u|X)}(k+1, K-k+1)`` with Dirichlet ``w``, whose
    conditional expectation is ``Q(u|X)``.

Latent factors
    ``Q_ij = mu_j + sum_k f_ik s_kj + e_ij`` with factors linked linearly to
    Gaussian covariates, rows sorted into valid quantile vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import betainc, ndtr

from .errors import GenerationError, InvalidInput
from .estimators import CoefficientMatrix, DesignMatrix
from .quantile import QuantileGrid, QuantileMatrix, monotone_rearrange

SCALE_MODES = ("inv_p", "inv_sqrt_p")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass(frozen=True)
class WarpingConfig:
    n: int = 50
    p: int = 25
    r_true: int = 5
    M: int = 100
    rho: float = 0.9
    K_warp: int = 50
    scale_mode: str = "inv_p"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.M < 1:
            raise InvalidInput("n, p and M must be positive")
        if not 0 <= self.rho < 1:
            raise InvalidInput("rho must lie in [0, 1)")
        if self.r_true < 0:
            raise InvalidInput("r_true must be nonnegative")
        if self.K_warp < 1:
            raise InvalidInput("K_warp must be at least 1")
        if self.scale_mode not in SCALE_MODES:
            raise InvalidInput(f"scale_mode must be one of {SCALE_MODES}")

    @property
    def scale(self) -> float:
        return 1.0 / self.p if self.scale_mode == "inv_p" else self.p ** -0.5


@dataclass(frozen=True)
class FactorConfig:
    n: int = 100
    p: int = 50
    m_quantiles: int = 100
    K_factors: int = 2
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.p, self.m_quantiles, self.K_factors) < 1:
            raise InvalidInput("n, p, m_quantiles and K_factors must be positive")
        if not self.noise_sd >= 0:
            raise InvalidInput("noise_sd must be nonnegative")


@dataclass(eq=False)
class SimulatedDataset:
    X: DesignMatrix
    Q: QuantileMatrix
    true_B: CoefficientMatrix
    true_intercept: np.ndarray
    latent: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.Q.grid

    def pseudo_errors(self) -> np.ndarray:
        """``Q_Y(u_m) - Q(u_m | X_i)`` for every observation."""
        if self.latent is None:
            raise InvalidInput("dataset carries no latent quantile functions")
        return self.Q.values - self.latent


def gen_copula_covariates(n: int, p: int, rho: float, seed=0) -> DesignMatrix:
    """Gaussian-copula covariates with AR(1) latent correlation ``rho^|j-k|``.

    ``Z_1 = eta_1``, ``Z_j = rho Z_{j-1} + sqrt(1 - rho^2) eta_j``, and the
    returned design is ``Phi(Z)``, uniform marginals on (0, 1).
    """
    return DesignMatrix(ndtr(_ar1_normals(n, p, rho, _rng(seed))))


def _ar1_normals(n, p, rho, rng):
    if n < 1 or p < 1:
        raise InvalidInput("n and p must be positive")
    if not -1 < rho < 1:
        raise InvalidInput("rho must lie in (-1, 1)")
    eta = rng.standard_normal((n, p))
    Z = np.empty_like(eta)
    Z[:, 0] = eta[:, 0]
    s = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        Z[:, j] = rho * Z[:, j - 1] + s * eta[:, j]
    return Z


def beta_basis(u, k: int, r: int):
    """``gamma_k(u) = I_u(k+1, r-k+1) - u``, the centred Beta(k+1, r-k+1) CDF."""
    if not 0 <= k <= r:
        raise InvalidInput(f"need 0 <= k <= r, got k={k}, r={r}")
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr < 0) | (u_arr > 1)) or np.any(np.isnan(u_arr)):
        raise InvalidInput("u must lie in [0, 1]")
    out = betainc(k + 1, r - k + 1, u_arr) - u_arr
    return float(out) if np.ndim(u) == 0 else out


def basis_matrix(u, r: int) -> np.ndarray:
    """Rows ``gamma_0 .. gamma_r`` evaluated at ``u``; shape (r+1, len(u))."""
    return np.vstack([beta_basis(np.asarray(u, dtype=float), k, r) for k in range(r + 1)])


def draw_warping_coefficients(p: int, r: int, seed=0) -> np.ndarray:
    """Mixing weights ``c_j ~ Dirichlet(1, ..., 1)`` on the (r+1)-simplex, p x (r+1).

    Draw once and pass to :func:`gen_warping_dataset` to hold the coefficient
    functions fixed across Monte Carlo replications.
    """
    return _rng(seed).dirichlet(np.ones(r + 1), size=p)


def warping_truth(cfg: WarpingConfig, coefs: np.ndarray, grid: QuantileGrid) -> np.ndarray:
    if coefs.shape != (cfg.p, cfg.r_true + 1):
        raise InvalidInput(f"coefficients must be {cfg.p} x {cfg.r_true + 1}")
    return cfg.scale * coefs @ basis_matrix(grid.points, cfg.r_true)


def bernstein_warp(s, weights):
    """``sum_k w_k I_s(k+1, K-k+1)`` for each row of ``s`` with its weight row.

    ``s`` is n x M with entries in [0, 1]; ``weights`` is n x (K+1).
    """
    K = weights.shape[1] - 1
    k = np.arange(K + 1)
    out = np.zeros_like(s)
    for kk in k:
        out += weights[:, kk:kk + 1] * betainc(kk + 1, K - kk + 1, s)
    return out


def gen_warping_dataset(cfg: WarpingConfig, coefs: np.ndarray | None = None,
                        grid: QuantileGrid | None = None) -> SimulatedDataset:
    """Draw one sample of the quantile-warping design.

    ``coefs`` fixes the coefficient functions; when omitted they are drawn
    from a stream derived from ``cfg.seed``. Covariates and warps always come
    from ``cfg.seed``, so a replication is identified by (coefs, seed).
    """
    grid = grid or QuantileGrid.midpoint(cfg.M)
    ss = np.random.SeedSequence(cfg.seed)
    coef_ss, data_ss = ss.spawn(2)
    if coefs is None:
        coefs = draw_warping_coefficients(cfg.p, cfg.r_true, np.random.default_rng(coef_ss))
    rng = np.random.default_rng(data_ss)
    B = warping_truth(cfg, np.asarray(coefs, dtype=float), grid)
    X = DesignMatrix(ndtr(_ar1_normals(cfg.n, cfg.p, cfg.rho, rng)))
    latent = grid.points + (X.X - 0.5) @ B

    ok = np.all(np.diff(latent, axis=1) >= 0, axis=1) & np.all((latent >= 0) & (latent <= 1), axis=1)
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise GenerationError(
            f"latent quantile function of observation {bad} is not monotone within [0, 1]",
            row=latent[bad],
        )
    w = rng.dirichlet(np.ones(cfg.K_warp + 1), size=cfg.n)
    Qy = bernstein_warp(latent, w)
    if not np.all(np.diff(Qy, axis=1) >= 0):
        bad = int(np.flatnonzero(~np.all(np.diff(Qy, axis=1) >= 0, axis=1))[0])
        raise GenerationError(f"warped response {bad} is not monotone", row=Qy[bad])
    meta = {"design": "warping", **asdict(cfg), "latent_center": 0.5,
            "coefficients": np.asarray(coefs).tolist()}
    return SimulatedDataset(
        X=X,
        Q=QuantileMatrix(grid, Qy),
        true_B=CoefficientMatrix(B, grid),
        true_intercept=np.array(grid.points),
        latent=latent,
        meta=meta,
    )


@dataclass(frozen=True, eq=False)
class FactorStructure:
    """Fixed parameters of the latent-factor design shared by train and test draws."""

    mu: np.ndarray          # (M,) sorted, a valid quantile vector
    loadings: np.ndarray    # (p, K) links covariates to factors
    weights: np.ndarray     # (K, M) factor-to-quantile weights

    @property
    def true_B(self):
        return self.loadings @ self.weights


def draw_factor_structure(cfg: FactorConfig, seed=None) -> FactorStructure:
    rng = _rng(cfg.seed if seed is None else seed)
    mu = np.sort(rng.standard_normal(cfg.m_quantiles))
    loadings = rng.standard_normal((cfg.p, cfg.K_factors)) / np.sqrt(cfg.p)
    weights = rng.standard_normal((cfg.K_factors, cfg.m_quantiles))
    return FactorStructure(mu, loadings, weights)


def gen_factor_dataset(cfg: FactorConfig, structure: FactorStructure | None = None,
                       grid: QuantileGrid | None = None, seed=None) -> SimulatedDataset:
    """Draw one sample of the latent-factor quantile design.

    Covariates are standard normal; factors are ``X @ loadings``; rows of
    ``mu + factors @ weights + noise`` are sorted into quantile vectors.
    ``structure`` defaults to :func:`draw_factor_structure` with ``cfg.seed``;
    the sample itself uses ``seed`` (default: a stream derived from ``cfg.seed``).
    """
    grid = grid or QuantileGrid.midpoint(cfg.m_quantiles)
    if grid.M != cfg.m_quantiles:
        raise InvalidInput("grid size does not match m_quantiles")
    if structure is None:
        structure = draw_factor_structure(cfg)
    if seed is None:
        seed = np.random.SeedSequence(cfg.seed).spawn(1)[0]
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((cfg.n, cfg.p))
    factors = X @ structure.loadings
    noise = cfg.noise_sd * rng.standard_normal((cfg.n, cfg.m_quantiles))
    raw = structure.mu + factors @ structure.weights + noise
    meta = {
        "design": "factor",
        **asdict(cfg),
        "latent_center": 0.0,
        "mu": "sorted standard normal draws",
        "loadings": "N(0, 1/p) entries, factors = X @ loadings",
        "weights": "standard normal",
        "covariates": "standard normal",
        "noise": "N(0, noise_sd^2)",
        "rows": "monotone rearrangement of mu + factors @ weights + noise",
    }
    return SimulatedDataset(
        X=DesignMatrix(X),
        Q=QuantileMatrix(grid, monotone_rearrange(raw)),
        true_B=CoefficientMatrix(structure.true_B, grid),
        true_intercept=np.array(structure.mu),
        latent=structure.mu + factors @ structure.weights,
        meta=meta,
    )
