"""Uniform B-spline grids, basis evaluation, derivatives and least-squares fits.

Every function accepts either a scalar or an array of abscissae; array inputs
return an array with one trailing axis of length ``grid.num_basis``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RIDGE = 1e-8
REFINE_STEPS = 2


class SplineError(ValueError):
    pass


class SingularSystemError(SplineError):
    pass


@dataclass(frozen=True)
class SplineGrid:
    degree: int
    num_intervals: int
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise SplineError(f"degree must be >= 0, got {self.degree}")
        if self.num_intervals < 1:
            raise SplineError(f"need at least one interval, got {self.num_intervals}")
        if not self.lo < self.hi:
            raise SplineError(f"empty range [{self.lo}, {self.hi}]")
        k, g = self.degree, self.num_intervals
        knots = self.lo + self.step * np.arange(-k, g + k + 1, dtype=float)
        # pin the interior ends exactly so clamped inputs hit them
        knots[k] = self.lo
        knots[k + g] = self.hi
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.num_intervals

    @property
    def num_basis(self) -> int:
        return self.num_intervals + self.degree

    @property
    def num_knots(self) -> int:
        return self.num_intervals + 2 * self.degree + 1

    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)


def make_grid(degree: int, num_intervals: int, lo: float = -1.0, hi: float = 1.0) -> SplineGrid:
    return SplineGrid(int(degree), int(num_intervals), float(lo), float(hi))


def _bases(grid: SplineGrid, x: np.ndarray, degree: int) -> np.ndarray:
    """Cox-de Boor recursion up to ``degree`` on the grid's full knot vector.

    ``x`` must already lie in [lo, hi]. The degree-0 layer selects the interior
    interval containing x, with x == hi assigned to the last one so the basis
    stays a partition of unity on the closed range.
    """
    t = grid.knots
    k, g = grid.degree, grid.num_intervals
    n0 = len(t) - 1
    span = np.floor((x - grid.lo) / grid.step).astype(np.int64)
    span = np.clip(span, 0, g - 1) + k
    # the division can round across a knot; settle the span against the knots themselves
    span = np.where((x < t[span]) & (span > k), span - 1, span)
    span = np.where((x >= t[np.minimum(span + 1, len(t) - 1)]) & (span < k + g - 1), span + 1, span)
    b = np.zeros(x.shape + (n0,))
    np.put_along_axis(b, span[..., None], 1.0, axis=-1)
    xe = x[..., None]
    for p in range(1, degree + 1):
        left = (xe - t[: n0 - p]) / (t[p:n0] - t[: n0 - p])
        right = (t[p + 1 : n0 + 1] - xe) / (t[p + 1 : n0 + 1] - t[1 : n0 - p + 1])
        b = left * b[..., :-1] + right * b[..., 1:]
    return b


def basis_eval(grid: SplineGrid, x):
    """Values of all ``G + k`` basis functions at ``x`` (clamped to the grid)."""
    xa = grid.clamp(np.asarray(x, dtype=float))
    return _bases(grid, xa, grid.degree)


def basis_derivative(grid: SplineGrid, x):
    """d/dx of every basis function, via the degree ``k - 1`` difference identity."""
    k = grid.degree
    if k < 1:
        raise SplineError("degree-0 splines have no usable derivative")
    xa = grid.clamp(np.asarray(x, dtype=float))
    t = grid.knots
    low = _bases(grid, xa, k - 1)
    n = grid.num_basis
    left = k / (t[k : k + n] - t[:n])
    right = k / (t[k + 1 : k + 1 + n] - t[1 : 1 + n])
    return left * low[..., :n] - right * low[..., 1 : n + 1]


def spline_eval(grid: SplineGrid, coeffs, x):
    return basis_eval(grid, x) @ np.asarray(coeffs, dtype=float)


def fit_coefficients(grid: SplineGrid, xs, ys, ridge: float = RIDGE) -> np.ndarray:
    """Ridge-stabilised least squares for ``sum_i c_i B_i(x) ~ y``.

    Raises ``SingularSystemError`` when the samples leave basis functions
    essentially unconstrained even after the ridge.
    """
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape != ys.shape:
        raise SplineError(f"length mismatch: {xs.size} abscissae, {ys.size} values")
    if xs.size < grid.num_basis:
        raise SplineError(f"need at least {grid.num_basis} samples, got {xs.size}")
    design = basis_eval(grid, xs)
    gram = design.T @ design
    gram[np.diag_indices_from(gram)] += ridge
    if np.linalg.cond(gram) > 1e14:
        raise SingularSystemError("design matrix is rank deficient; samples do not cover the grid")
    coeffs = np.linalg.solve(gram, design.T @ ys)
    # iterated Tikhonov: strips the ridge bias while keeping the stabilised solve
    for _ in range(REFINE_STEPS):
        coeffs = coeffs + np.linalg.solve(gram, design.T @ (ys - design @ coeffs))
    return coeffs
