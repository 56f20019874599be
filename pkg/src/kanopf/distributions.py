"""Weighted empirical distributions: PDF/CDF queries, moments, intervals, distances.

The CDF is the right-continuous step function of the (sorted) samples. KS and
W1 are computed exactly on the merged sample grid; no binning or quadrature
is involved, so identical distributions give exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class EmpiricalDistribution:
    values: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size == 0:
            raise DomainError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("samples must be finite")
        if np.any(np.diff(self.values) < 0):
            raise DomainError("values must be sorted ascending (use from_samples)")
        if self.weights is None:
            self.weights = np.full(self.values.size, 1.0 / self.values.size)
        else:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.shape != self.values.shape:
                raise ShapeError("weights must align with values")
            if np.any(self.weights < 0):
                raise DomainError("weights must be non-negative")
            total = self.weights.sum()
            if not np.isclose(total, 1.0, rtol=0, atol=1e-9):
                raise DomainError(f"weights must sum to 1, got {total}")
        self._cumw = np.cumsum(self.weights)
        self._cumw[-1] = 1.0

    @classmethod
    def from_samples(cls, samples, weights=None) -> "EmpiricalDistribution":
        samples = np.asarray(samples, dtype=float).ravel()
        order = np.argsort(samples, kind="stable")
        w = None if weights is None else np.asarray(weights, dtype=float).ravel()[order]
        return cls(samples[order], w)

    @property
    def n(self) -> int:
        return self.values.size


def cdf(d: EmpiricalDistribution, x) -> np.ndarray:
    """Right-continuous empirical CDF at x (scalar or array)."""
    scalar = np.ndim(x) == 0
    idx = np.searchsorted(d.values, np.asarray(x, dtype=float), side="right")
    out = np.where(idx > 0, d._cumw[np.maximum(idx - 1, 0)], 0.0)
    return float(out) if scalar else out


def pdf_histogram(d: EmpiricalDistribution, bins: int):
    """Density histogram spanning [min, max]; densities integrate to exactly 1.

    All-equal samples get a single bin of machine-scaled width centered on the
    value, with density 1/width.
    """
    if bins < 1:
        raise DomainError("bins must be >= 1")
    if d.n < 2:
        raise DomainError("histogram needs at least two samples")
    lo, hi = float(d.values[0]), float(d.values[-1])
    if hi <= lo:
        width = max(np.spacing(abs(lo)) * 8.0, 1e-300)
        edges = np.array([lo - width / 2.0, lo + width / 2.0])
        return edges, np.array([1.0 / width])
    edges = np.linspace(lo, hi, bins + 1)
    mass, _ = np.histogram(d.values, bins=edges, weights=d.weights)
    widths = np.diff(edges)
    return edges, mass / widths


def moments(d: EmpiricalDistribution):
    """(mean, unbiased variance); variance needs at least two samples."""
    mean = float(d.weights @ d.values)
    if d.n < 2:
        raise DomainError("variance needs at least two samples")
    # Reliability-weight correction; equals the n/(n-1) factor for uniform weights.
    denom = 1.0 - float(d.weights @ d.weights)
    if denom <= 0:
        return mean, 0.0
    var = float(d.weights @ (d.values - mean) ** 2) / denom
    return mean, var


def _weighted_quantile(d: EmpiricalDistribution, q):
    # Midpoint-position interpolation on the cumulative weights; only used for
    # non-uniform weights (the uniform path goes through numpy's quantile).
    positions = d._cumw - d.weights / 2.0
    return np.interp(q, positions, d.values, left=d.values[0], right=d.values[-1])


def confidence_interval(d: EmpiricalDistribution, level: float):
    """Central empirical percentile interval at the given coverage level."""
    if not 0.0 < level < 1.0:
        raise DomainError("level must be in (0, 1)")
    alpha = (1.0 - level) / 2.0
    uniform = np.allclose(d.weights, 1.0 / d.n, rtol=0, atol=1e-15)
    if uniform:
        lo, hi = np.quantile(d.values, [alpha, 1.0 - alpha])
        return float(lo), float(hi)
    lo, hi = _weighted_quantile(d, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _merged_grid(d1, d2):
    return np.union1d(d1.values, d2.values)


def ks_statistic(d1: EmpiricalDistribution, d2: EmpiricalDistribution) -> float:
    """sup |F1 - F2|, evaluated exactly at the pooled sample points."""
    grid = _merged_grid(d1, d2)
    return float(np.abs(cdf(d1, grid) - cdf(d2, grid)).max())


def wasserstein1(d1: EmpiricalDistribution, d2: EmpiricalDistribution) -> float:
    """Integral of |F1 - F2|: exact step-function integration on the pooled grid."""
    grid = _merged_grid(d1, d2)
    if grid.size == 1:
        return 0.0
    diff = np.abs(cdf(d1, grid) - cdf(d2, grid))[:-1]
    return float(diff @ np.diff(grid))
