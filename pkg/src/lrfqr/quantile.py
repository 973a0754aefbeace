"""Discretized quantile functions and the 2-Wasserstein metric.

A distribution on the real line is represented by its quantile function
evaluated on a fixed grid of levels in (0, 1). All quantile objects share a
:class:`QuantileGrid`; distances between distributions reduce to weighted
L2 distances between quantile vectors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InvalidInput

GRID_ATOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """Strictly increasing evaluation levels inside (0, 1).

    Use :meth:`midpoint` for the default equally spaced grid
    ``u_m = (m - 0.5) / M``; pass explicit ``points`` for a custom grid.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise InvalidInput("grid points must be a nonempty 1-D array")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("grid points must be finite")
        if pts[0] <= 0.0 or pts[-1] >= 1.0:
            raise InvalidInput("grid points must lie strictly inside (0, 1)")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInput("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))

    @classmethod
    def midpoint(cls, M: int) -> "QuantileGrid":
        if int(M) != M or M < 1:
            raise InvalidInput(f"grid size must be a positive integer, got {M!r}")
        M = int(M)
        return cls((np.arange(1, M + 1) - 0.5) / M)

    @property
    def M(self) -> int:
        return self.points.size

    def __len__(self):
        return self.M

    def matches(self, other: "QuantileGrid", atol: float = GRID_ATOL) -> bool:
        return (
            self.M == other.M
            and bool(np.all(np.abs(self.points - other.points) <= atol))
        )

    def __eq__(self, other):
        if not isinstance(other, QuantileGrid):
            return NotImplemented
        return self.matches(other)

    def __hash__(self):
        return hash(self.points.tobytes())


def check_same_grid(a: QuantileGrid, b: QuantileGrid):
    if not a.matches(b):
        raise GridMismatch(f"grids differ (M={a.M} vs M={b.M})")


@dataclass(frozen=True, eq=False)
class QuantileVector:
    """One quantile function evaluated on ``grid``."""

    grid: QuantileGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.M,):
            raise InvalidInput(
                f"expected {self.grid.M} quantile values, got shape {v.shape}"
            )
        object.__setattr__(self, "values", _frozen(v))

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


@dataclass(frozen=True, eq=False)
class QuantileMatrix:
    """``n`` quantile functions on one shared grid, stored row-wise (n x M)."""

    grid: QuantileGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.grid.M:
            raise InvalidInput(
                f"expected an n x {self.grid.M} matrix, got shape {v.shape}"
            )
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n

    def row(self, i: int) -> QuantileVector:
        return QuantileVector(self.grid, self.values[i])

    def rows(self):
        return [self.row(i) for i in range(self.n)]

    def monotone_rows(self) -> np.ndarray:
        """Boolean mask of rows that are nondecreasing."""
        return np.all(np.diff(self.values, axis=1) >= 0, axis=1)

    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @classmethod
    def stack(cls, vectors) -> "QuantileMatrix":
        vectors = list(vectors)
        if not vectors:
            raise InvalidInput("cannot stack an empty list of quantile vectors")
        grid = vectors[0].grid
        for v in vectors[1:]:
            check_same_grid(grid, v.grid)
        return cls(grid, np.vstack([v.values for v in vectors]))


def empirical_quantiles(samples, grid: QuantileGrid, interpolate: bool = False) -> QuantileMatrix:
    """Quantile functions of the empirical distributions of raw samples.

    By default row ``i`` holds the left-continuous generalized inverse of the
    empirical CDF of ``samples[i]``: the order statistic ``x_(ceil(n u))``.
    With ``interpolate=True`` the linearly interpolated sample quantile is
    used instead.
    """
    rows = []
    for i, s in enumerate(samples):
        x = np.asarray(s, dtype=float).ravel()
        if x.size == 0:
            raise InvalidInput(f"sample {i} is empty")
        if not np.all(np.isfinite(x)):
            raise InvalidInput(f"sample {i} contains NaN or infinite values")
        x = np.sort(x)
        if interpolate:
            rows.append(np.quantile(x, grid.points, method="linear"))
        else:
            # round before ceil so n*u landing a hair above an integer is not bumped
            k = np.ceil(np.round(x.size * grid.points, 10)).astype(int)
            rows.append(x[np.clip(k, 1, x.size) - 1])
    if not rows:
        raise InvalidInput("no samples given")
    return QuantileMatrix(grid, np.vstack(rows))


def monotone_rearrange(v) -> np.ndarray:
    """Nondecreasing rearrangement (sorting) of a vector of quantile values."""
    v = np.asarray(v, dtype=float)
    if np.any(np.isnan(v)):
        raise InvalidInput("cannot rearrange a vector containing NaN")
    return np.sort(v, axis=-1, kind="stable")


def rearrangement_count(v) -> int:
    """Number of positions a monotone rearrangement would change."""
    v = np.asarray(v, dtype=float)
    return int(np.count_nonzero(np.sort(v, axis=-1) != v))


def wasserstein2(a: QuantileVector, b: QuantileVector) -> float:
    """Midpoint-rule 2-Wasserstein distance between two quantile vectors."""
    check_same_grid(a.grid, b.grid)
    d = a.values - b.values
    return float(np.sqrt(np.mean(d * d)))


def wasserstein2_rows(A, B) -> np.ndarray:
    """Row-wise W2 distances between two n x M arrays of quantile values."""
    if isinstance(A, QuantileMatrix) and isinstance(B, QuantileMatrix):
        check_same_grid(A.grid, B.grid)
    A = getattr(A, "values", A)
    B = getattr(B, "values", B)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise GridMismatch(f"shape mismatch {A.shape} vs {B.shape}")
    return np.sqrt(np.mean((A - B) ** 2, axis=-1))


FLOAT_FMT = "%.17g"


def write_quantile_csv(Q: QuantileMatrix, path):
    """Write ``Q`` as CSV: a header of grid points, then one row per observation."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([FLOAT_FMT % u for u in Q.grid.points])
        for row in Q.values:
            w.writerow([FLOAT_FMT % x for x in row])


def read_quantile_csv(path, grid: QuantileGrid | None = None) -> QuantileMatrix:
    """Read a quantile CSV; if ``grid`` is given the header must match it."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInput(f"{path} is empty")
    try:
        header = np.array([float(x) for x in rows[0]])
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidInput(f"{path}: non-numeric entry ({exc})") from None
    file_grid = QuantileGrid(header)
    if grid is not None:
        check_same_grid(grid, file_grid)
    if data.size == 0:
        data = data.reshape(0, file_grid.M)
    if data.shape[1] != file_grid.M:
        raise InvalidInput(f"{path}: rows have {data.shape[1]} columns, header has {file_grid.M}")
    return QuantileMatrix(file_grid, data)
