"""B-spline grids and basis evaluation on uniformly extended knot vectors.

A grid with G intervals and degree k covers [t_min, t_max] with G + 2k + 1
uniformly spaced knots; the k knots added beyond each end make the basis
well defined slightly outside the nominal domain, so inputs that drift past
the sampled range extrapolate smoothly instead of being clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


def stable_sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(x):
    """x * sigmoid(x), the fixed base function of every edge activation."""
    return np.asarray(x, dtype=float) * stable_sigmoid(x)


def silu_derivative(x):
    s = stable_sigmoid(x)
    return s * (1.0 + np.asarray(x, dtype=float) * (1.0 - s))


def uniform_knots(t_min: float, t_max: float, num_intervals: int, degree: int) -> np.ndarray:
    """Uniform knot vector extended `degree` steps beyond each domain end."""
    h = (t_max - t_min) / num_intervals
    j = np.arange(num_intervals + 2 * degree + 1)
    return t_min + (j - degree) * h


@dataclass(frozen=True)
class SplineGrid:
    """Knot layout of one spline edge: G intervals, degree k, G+k basis functions."""

    t_min: float
    t_max: float
    num_intervals: int
    degree: int
    knots: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (math.isfinite(self.t_min) and math.isfinite(self.t_max)):
            raise DomainError("grid bounds must be finite")
        if not self.t_min < self.t_max:
            raise DomainError(f"t_min={self.t_min} must be < t_max={self.t_max}")
        if self.num_intervals < 1:
            raise DomainError("num_intervals must be >= 1")
        if self.degree < 0:
            raise DomainError("degree must be >= 0")
        if self.knots is None:
            object.__setattr__(
                self,
                "knots",
                uniform_knots(self.t_min, self.t_max, self.num_intervals, self.degree),
            )
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        expected = self.num_intervals + 2 * self.degree + 1
        if knots.shape != (expected,):
            raise ShapeError(f"knot vector must have {expected} entries, got {knots.shape}")
        if np.any(np.diff(knots) <= 0):
            raise DomainError("knots must be strictly increasing (simple knots only)")
        h = (self.t_max - self.t_min) / self.num_intervals
        interior = self.t_min + np.arange(self.num_intervals + 1) * h
        if not np.allclose(knots[self.degree : self.degree + self.num_intervals + 1], interior,
                           rtol=0.0, atol=1e-12 * max(1.0, abs(self.t_max - self.t_min))):
            raise DomainError("interior knots must be uniform over [t_min, t_max]")

    @property
    def num_bases(self) -> int:
        return self.num_intervals + self.degree

    @classmethod
    def uniform(cls, t_min: float, t_max: float, num_intervals: int, degree: int) -> "SplineGrid":
        return cls(t_min=t_min, t_max=t_max, num_intervals=num_intervals, degree=degree)


def basis_matrix(x, knots, degree: int) -> np.ndarray:
    """All B-spline basis values at x via the Cox-de Boor recursion.

    x may have any shape; knots may carry leading broadcast axes (per-edge
    knot stacks), its last axis being the knot vector. Returns an array of
    shape broadcast(x, knots[...,0]) + (n_bases,).
    """
    x = np.asarray(x, dtype=float)
    knots = np.asarray(knots, dtype=float)
    xe = x[..., None]
    # Degree-0 seed: half-open indicator per interval, closed at the topmost knot
    # so that exact evaluation at the upper boundary stays inside the basis.
    b = ((xe >= knots[..., :-1]) & (xe < knots[..., 1:])).astype(float)
    top = xe[..., 0] == knots[..., -1]
    if np.any(top):
        b[..., -1] = np.where(top, 1.0, b[..., -1])
    n_knots = knots.shape[-1]
    for d in range(1, degree + 1):
        left = (xe - knots[..., : n_knots - d - 1]) / (
            knots[..., d : n_knots - 1] - knots[..., : n_knots - d - 1]
        )
        right = (knots[..., d + 1 :] - xe) / (
            knots[..., d + 1 :] - knots[..., 1 : n_knots - d]
        )
        b = left * b[..., :-1] + right * b[..., 1:]
    return b


def basis_derivative_matrix(x, knots, degree: int) -> np.ndarray:
    """First derivatives of all basis functions at x (zero for degree 0)."""
    x = np.asarray(x, dtype=float)
    knots = np.asarray(knots, dtype=float)
    n_bases = knots.shape[-1] - 1 - degree
    if degree == 0:
        shape = np.broadcast_shapes(x.shape, knots.shape[:-1])
        return np.zeros(shape + (n_bases,))
    lower = basis_matrix(x, knots, degree - 1)  # n_bases + 1 functions
    d1 = knots[..., degree:-1] - knots[..., : -degree - 1]
    d2 = knots[..., degree + 1 :] - knots[..., 1:-degree]
    return degree * (lower[..., :-1] / d1[..., :n_bases] - lower[..., 1:] / d2[..., :n_bases])


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Vector of all G+k basis values at a single point x.

    Values outside [t_min, t_max] are evaluated against the extended knots
    (they decay to zero beyond the extension), never clamped.
    """
    if not math.isfinite(x):
        raise DomainError(f"x must be finite, got {x!r}")
    return basis_matrix(np.float64(x), grid.knots, grid.degree)


def evaluate_spline(x, knots, degree: int, coeffs) -> np.ndarray:
    """Spline value sum_i c_i B_i(x); coeffs last axis must match the basis count."""
    b = basis_matrix(x, knots, degree)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != b.shape[-1]:
        raise ShapeError(
            f"got {coeffs.shape[-1]} coefficients for {b.shape[-1]} basis functions"
        )
    return np.einsum("...b,...b->...", b, coeffs)


def fit_coeffs(grid: SplineGrid, x, y, rcond: float = None):
    """Least-squares spline coefficients so that sum_i c_i B_i(x) ~ y.

    Falls back to a small ridge penalty when the design matrix is
    rank-deficient (e.g. samples missing from some interval). Returns
    (coeffs, used_ridge).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"x and y must have the same length, got {x.shape} vs {y.shape}")
    if x.size == 0:
        raise DomainError("cannot fit spline coefficients to an empty sample set")
    a = basis_matrix(x, grid.knots, grid.degree)
    coeffs, _, rank, _ = np.linalg.lstsq(a, y, rcond=rcond)
    if rank == grid.num_bases:
        return coeffs, False
    ata = a.T @ a
    lam = 1e-9 * (np.trace(ata) / grid.num_bases + 1.0)
    coeffs = np.linalg.solve(ata + lam * np.eye(grid.num_bases), a.T @ y)
    return coeffs, True
