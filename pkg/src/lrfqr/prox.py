"""Proximal operators and the rank projection used by the low-rank solver.

* :func:`soft_threshold` -- prox of ``gamma * ||x||_1``.
* :func:`fused_prox_row` / :func:`fused_prox` -- exact 1-D total variation
  denoising, applied row-wise to a coefficient matrix.
* :func:`svd_truncate` -- Frobenius-nearest matrix of rank at most ``r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidInput, NumericalError


@dataclass(frozen=True)
class ProxConfig:
    lambda_l1: float = 0.0
    lambda_fused: float = 0.0
    rank: int = 1

    def __post_init__(self):
        if not (self.lambda_l1 >= 0 and np.isfinite(self.lambda_l1)):
            raise InvalidInput(f"lambda_l1 must be finite and >= 0, got {self.lambda_l1}")
        if not (self.lambda_fused >= 0 and np.isfinite(self.lambda_fused)):
            raise InvalidInput(f"lambda_fused must be finite and >= 0, got {self.lambda_fused}")
        if int(self.rank) != self.rank or self.rank < 1:
            raise InvalidInput(f"rank must be a positive integer, got {self.rank}")

    def validate_shape(self, p: int, M: int):
        if self.rank > min(p, M):
            raise InvalidInput(f"rank {self.rank} exceeds min(p, M) = {min(p, M)}")


def _check_gamma(gamma):
    if not gamma >= 0:
        raise InvalidInput(f"threshold must be nonnegative, got {gamma}")


def soft_threshold(v, gamma: float) -> np.ndarray:
    """Element-wise ``sign(v) * max(|v| - gamma, 0)``."""
    _check_gamma(gamma)
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)


@numba.njit(cache=True, nogil=True)
def _tv1d(y, lam, out):
    # Condat (2013), "A direct algorithm for 1D total variation denoising".
    n = y.shape[0]
    if n == 0:
        return
    if lam <= 0.0 or n == 1:
        for i in range(n):
            out[i] = y[i]
        return
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    twolam = 2.0 * lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus:
                        break
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = -lam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k:
                        break
                return
        umin += y[k + 1] - vmin
        if umin < -lam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus:
                    break
            k = k0
            kminus = k0
            kplus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = -lam
        else:
            umax += y[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus:
                        break
                k = k0
                kminus = k0
                kplus = k0
                vmax = y[k0]
                vmin = vmax - twolam
                umin = lam
                umax = -lam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= -lam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = -lam


@numba.njit(cache=True, nogil=True)
def _tv1d_rows(Y, lam, out):
    for j in range(Y.shape[0]):
        _tv1d(Y[j], lam, out[j])


def fused_prox_row(v, gamma: float) -> np.ndarray:
    """Exact minimizer of ``0.5 * ||x - v||^2 + gamma * sum |x[m] - x[m-1]|``."""
    _check_gamma(gamma)
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 1:
        raise InvalidInput("fused_prox_row expects a 1-D vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("fused_prox_row input must be finite")
    out = np.empty_like(v)
    _tv1d(v, float(gamma), out)
    return out


def fused_prox(B, gamma: float) -> np.ndarray:
    """Apply :func:`fused_prox_row` independently to every row of ``B``."""
    _check_gamma(gamma)
    B = np.ascontiguousarray(B, dtype=float)
    if B.ndim != 2:
        raise InvalidInput("fused_prox expects a 2-D matrix")
    if not np.all(np.isfinite(B)):
        raise InvalidInput("fused_prox input must be finite")
    out = np.empty_like(B)
    _tv1d_rows(B, float(gamma), out)
    return out


def total_variation(B) -> float:
    """Sum over rows of absolute first differences along the grid axis."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return float(np.abs(np.diff(B, axis=1)).sum())


def svd_truncate(B, r: int) -> np.ndarray:
    """Best rank-``r`` approximation ``U_r D_r V_r^T`` of ``B``."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise InvalidInput("svd_truncate expects a 2-D matrix")
    if int(r) != r or not 1 <= r <= min(B.shape):
        raise InvalidInput(f"rank must be in [1, {min(B.shape)}], got {r}")
    r = int(r)
    if r == min(B.shape):
        return B.copy()
    try:
        U, s, Vt = np.linalg.svd(B, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    return (U[:, :r] * s[:r]) @ Vt[:r]
