"""Scenario sampling for the declared uncertainty model.

Draws come from a PCG64 stream seeded explicitly; dimensions are sampled one
after another (n values each), so a (model, n, seed) triple fully determines
the scenario matrix. Truncated gaussians are redrawn until in-bounds for up
to 100 vectorized rounds, then clamped; clamps are counted in the set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acdc import UncertaintyModel
from .errors import DomainError, ShapeError


@dataclass
class ScenarioSet:
    """Sampled scenario matrix (n, N0) plus provenance."""

    matrix: np.ndarray
    seed: int
    fingerprint: str
    names: list
    clamped: int = 0

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if self.matrix.shape[1] != len(self.names):
            raise ShapeError("scenario matrix width must match dimension names")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __len__(self):
        return self.matrix.shape[0]


def _sample_gaussian(dim, n, rng):
    vals = rng.normal(dim.mean, dim.std, size=n)
    clamped = 0
    for _ in range(100):
        bad = (vals < dim.lo) | (vals > dim.hi)
        if not bad.any():
            break
        vals[bad] = rng.normal(dim.mean, dim.std, size=int(bad.sum()))
    else:
        bad = (vals < dim.lo) | (vals > dim.hi)
        clamped = int(bad.sum())
        vals = np.clip(vals, dim.lo, dim.hi)
    return vals, clamped


def sample_scenarios(model: UncertaintyModel, n: int, seed: int) -> ScenarioSet:
    """n independent draws of the uncertainty vector."""
    if n < 1:
        raise DomainError("need at least one scenario")
    rng = np.random.Generator(np.random.PCG64(seed))
    cols = []
    clamped = 0
    for dim in model.dims:
        if dim.kind == "gaussian":
            vals, c = _sample_gaussian(dim, n, rng)
            clamped += c
        elif dim.kind == "beta":
            vals = dim.lo + (dim.hi - dim.lo) * rng.beta(dim.alpha, dim.beta, size=n)
        else:  # bernoulli
            vals = (rng.random(n) < dim.p).astype(float)
        cols.append(vals)
    matrix = np.column_stack(cols)
    return ScenarioSet(matrix=matrix, seed=int(seed), fingerprint=model.fingerprint(),
                       names=model.names, clamped=clamped)


def check_bounds(model: UncertaintyModel, scenario_set: ScenarioSet):
    """Every sampled entry must respect its declared support."""
    for j, dim in enumerate(model.dims):
        lo, hi = dim.bounds
        col = scenario_set.matrix[:, j]
        if col.min() < lo - 1e-12 or col.max() > hi + 1e-12:
            raise DomainError(f"dimension {dim.name}: samples escape [{lo}, {hi}]")
