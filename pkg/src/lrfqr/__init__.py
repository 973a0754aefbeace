"""Low-rank penalized global Frechet regression for distribution-valued responses."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    GenerationError,
    GridMismatch,
    InvalidInput,
    LrfqrError,
    NumericalError,
    SolverDiverged,
    TuningFailed,
)
from .quantile import (  # noqa: E402
    QuantileGrid,
    QuantileMatrix,
    QuantileVector,
    empirical_quantiles,
    monotone_rearrange,
    wasserstein2,
)
from .prox import ProxConfig, fused_prox, fused_prox_row, soft_threshold, svd_truncate  # noqa: E402
from .estimators import (  # noqa: E402
    CoefficientMatrix,
    DesignMatrix,
    FitResult,
    SolverConfig,
    fit_lowrank,
    fit_ols,
    numerical_rank,
    predict,
    rsc_diagnostic,
)
from .model_selection import TuningReport, gaussian_loglik, smoothed_weights, tune  # noqa: E402
from .metrics import MonteCarloSummary, coeff_mse, prediction_error, residual_rmse  # noqa: E402
