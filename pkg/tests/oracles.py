"""Independent reference computations used only by the tests.

None of these share code paths with the package implementation.
"""

import itertools

import numpy as np
from scipy.optimize import lsq_linear


def tv_objective(x, v, gamma):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sum((x - v) ** 2) + gamma * np.sum(np.abs(np.diff(x)))


def tv_enumeration(v, gamma):
    """Exact 1-D TV denoising by enumerating segmentations and jump signs.

    The solution is piecewise constant. For a fixed partition into contiguous
    segments and fixed signs of the jumps between them, stationarity gives
    ``c_s = mean_s - gamma * (sign_left - sign_right) / |s|``. The true optimum
    is one of these candidates, and every candidate is feasible, so the
    candidate of least objective is the optimum.
    """
    v = np.asarray(v, dtype=float)
    M = v.size
    best_x, best_f = v.copy(), np.inf
    for cuts in itertools.product((False, True), repeat=M - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [M]
        segs = list(zip(bounds[:-1], bounds[1:]))
        K = len(segs)
        means = np.array([v[a:b].mean() for a, b in segs])
        sizes = np.array([b - a for a, b in segs], dtype=float)
        for signs in itertools.product((-1.0, 1.0), repeat=K - 1):
            s = np.concatenate(([0.0], signs, [0.0]))
            c = means - gamma * (s[:K] - s[1:]) / sizes
            x = np.repeat(c, sizes.astype(int))
            f = tv_objective(x, v, gamma)
            if f < best_f:
                best_f, best_x = f, x
    return best_x, best_f


def tv_dual_qp(v, gamma):
    """TV denoising through its box-constrained dual, solved by BVLS.

    ``min_z 0.5 ||v - D^T z||^2  s.t. |z| <= gamma`` with ``x = v - D^T z``.
    """
    v = np.asarray(v, dtype=float)
    M = v.size
    if M == 1 or gamma == 0:
        return v.copy()
    D = np.diff(np.eye(M), axis=0)
    res = lsq_linear(D.T, v, bounds=(-gamma, gamma), method="bvls", tol=1e-15)
    return v - D.T @ res.x


def svd_tail_norm(B, r):
    """sqrt of the sum of squared singular values beyond ``r`` (LAPACK gesvd)."""
    from scipy.linalg import svd

    s = svd(B, compute_uv=False, lapack_driver="gesvd")
    return float(np.sqrt(np.sum(s[r:] ** 2)))


def central_difference_gradient(fun, B, h=1e-6):
    G = np.zeros_like(B)
    for idx in np.ndindex(B.shape):
        E = np.zeros_like(B)
        E[idx] = h
        G[idx] = (fun(B + E) - fun(B - E)) / (2 * h)
    return G


def normal_equations_fit(X, Q):
    """Least squares of column-centered ``Q`` on centered ``X`` with intercept."""
    X = np.asarray(X, dtype=float)
    Q = np.asarray(Q, dtype=float)
    Xc = X - X.mean(axis=0)
    Qc = Q - Q.mean(axis=0)
    B, *_ = np.linalg.lstsq(Xc, Qc, rcond=None)
    return Q.mean(axis=0), B


def coeff_mse_loops(estimates, truth):
    """Double-loop MSE / bias^2 / variance with 1/M quadrature weights."""
    Bn = len(estimates)
    p, M = len(truth), len(truth[0])
    mean = [[sum(est[j][m] for est in estimates) / Bn for m in range(M)] for j in range(p)]
    mse = bias = var = 0.0
    for est in estimates:
        for j in range(p):
            for m in range(M):
                mse += (est[j][m] - truth[j][m]) ** 2 / M / Bn
                var += (est[j][m] - mean[j][m]) ** 2 / M / Bn
    for j in range(p):
        for m in range(M):
            bias += (mean[j][m] - truth[j][m]) ** 2 / M
    return mse, bias, var
