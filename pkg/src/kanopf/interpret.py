"""Human-readable views of a trained network.

Activation snapshots sample each edge's learned phi over the input range it
actually sees; symbolic fitting matches snapshots against a small library of
closed-form candidates c*g(a*x + b) + d and ranks them by R^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError
from .network import KanNetwork
from .splines import basis_matrix, silu


@dataclass
class ActivationSnapshot:
    layer: int
    out_index: int
    in_index: int
    x: np.ndarray
    values: np.ndarray
    tag: str = "after"  # "before" (at initialization) or "after" (trained)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.shape != self.values.shape:
            raise ShapeError("snapshot x and values must align")
        if np.any(np.diff(self.x) <= 0):
            raise DomainError("snapshot x grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("snapshot values must be finite")


def snapshot_activations(net: KanNetwork, layer: int, sample_inputs, n_points: int = 101,
                         tag: str = "after"):
    """Evaluate every edge activation of one layer on a uniform x grid.

    The grid spans the observed input range of the edge's input node under
    `sample_inputs` (a pure read; network outputs are not perturbed).
    """
    x = np.atleast_2d(np.asarray(sample_inputs, dtype=float))
    if x.shape[0] < 1 or x.size == 0:
        raise DomainError("need at least one sample to define input ranges")
    if not 0 <= layer < len(net.layers):
        raise DomainError(f"layer {layer} out of range (network has {len(net.layers)})")
    if n_points < 2:
        raise DomainError("n_points must be >= 2")
    layer_in = net.layer_inputs(x)[layer]
    lay = net.layers[layer]
    snaps = []
    for i in range(lay.n_in):
        lo, hi = float(layer_in[:, i].min()), float(layer_in[:, i].max())
        if hi <= lo:
            pad = max(1e-6, 1e-6 * abs(lo))
            lo, hi = lo - pad, hi + pad
        grid = np.linspace(lo, hi, n_points)
        base = silu(grid)
        for j in range(lay.n_out):
            b = basis_matrix(grid, lay.knots[j, i], lay.degree)
            phi = lay.base_w[j, i] * base + lay.spline_w[j, i] * (b @ lay.coeffs[j, i])
            snaps.append(ActivationSnapshot(layer=layer, out_index=j, in_index=i,
                                            x=grid, values=phi, tag=tag))
    return snaps


# --- symbolic candidate fitting --------------------------------------------

def _safe_log(z):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(z)


def _safe_sqrt(z):
    with np.errstate(invalid="ignore"):
        return np.sqrt(z)


CANDIDATES = (
    ("linear", lambda z: z, None),
    ("quadratic", np.square, None),
    ("cubic", lambda z: z ** 3, None),
    ("sine", np.sin, None),
    ("exponential", np.exp, None),
    ("logarithm", _safe_log, lambda z: np.all(z > 0)),
    ("absolute-value", np.abs, None),
    ("hyperbolic-tangent", np.tanh, None),
    ("square-root", _safe_sqrt, lambda z: np.all(z >= 0)),
)


@dataclass
class SymbolicFit:
    """Best-fitting candidate y ~ c * g(a*x + b) + d."""

    name: str
    a: float
    b: float
    c: float
    d: float
    r_squared: float

    def predict(self, x):
        g = dict((n, f) for n, f, _ in CANDIDATES)[self.name]
        return self.c * g(self.a * np.asarray(x, dtype=float) + self.b) + self.d


def _fit_cd(gz, y):
    """Closed-form least squares for y ~ c*gz + d; returns (c, d, ss_res)."""
    n = y.size
    gm = gz.mean()
    ym = y.mean()
    var_g = float(gz @ gz) / n - gm * gm
    if var_g <= 1e-15 * max(1.0, gm * gm):
        d = ym
        resid = y - d
        return 0.0, float(d), float(resid @ resid)
    cov = float(gz @ y) / n - gm * ym
    c = cov / var_g
    d = ym - c * gm
    resid = y - (c * gz + d)
    return float(c), float(d), float(resid @ resid)


def _score_combo(g, domain_ok, a, b, x, y):
    with np.errstate(over="ignore", invalid="ignore"):
        z = a * x + b
        if domain_ok is not None and not domain_ok(z):
            return None
        gz = g(z)
    if not np.all(np.isfinite(gz)):
        return None
    return _fit_cd(gz, y)


def fit_symbolic(snapshot: ActivationSnapshot) -> SymbolicFit:
    """Best candidate over the fixed library by R^2.

    (a, b) come from a coarse grid (a = +-{0.25,0.5,1,2,4} * 2*pi/x-range,
    b over 11 uniform offsets in [-pi, pi]) refined by two rounds of
    neighborhood halving; (c, d) are closed-form per combination. Parameter
    combinations that violate a candidate's domain are skipped.
    """
    x, y = snapshot.x, snapshot.values
    if x.size < 10:
        raise DomainError("symbolic fitting needs at least 10 points")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot <= 0.0:
        # Constant snapshot: an exact degenerate linear fit.
        return SymbolicFit("linear", a=1.0, b=0.0, c=0.0, d=float(y.mean()), r_squared=1.0)

    scale = 2.0 * math.pi / (float(x[-1]) - float(x[0]))
    a_coarse = [sign * u * scale for u in (0.25, 0.5, 1.0, 2.0, 4.0) for sign in (1.0, -1.0)]
    b_spacing = 2.0 * math.pi / 10.0
    b_coarse = np.linspace(-math.pi, math.pi, 11)

    best = None  # (ss_res, name, a, b, c, d)
    for name, g, dom in CANDIDATES:
        cand_best = None
        for a in a_coarse:
            for b in b_coarse:
                fit = _score_combo(g, dom, a, b, x, y)
                if fit is None:
                    continue
                c, d, ss_res = fit
                if cand_best is None or ss_res < cand_best[0]:
                    cand_best = (ss_res, a, b, c, d)
        if cand_best is None:
            continue
        # Two rounds of neighborhood halving around the best (a, b).
        ss_res, a, b, c, d = cand_best
        for round_idx in range(2):
            fa = 2.0 ** (0.5 / (2 ** round_idx))
            db = b_spacing / (2.0 * (2 ** round_idx))
            for a_try in (a / fa, a, a * fa):
                for b_try in (b - db, b, b + db):
                    fit = _score_combo(g, dom, a_try, b_try, x, y)
                    if fit is None:
                        continue
                    c_t, d_t, ss_t = fit
                    if ss_t < ss_res:
                        ss_res, a, b, c, d = ss_t, a_try, b_try, c_t, d_t
        if best is None or ss_res < best[0]:
            best = (ss_res, name, a, b, c, d)
    ss_res, name, a, b, c, d = best
    return SymbolicFit(name, a=a, b=b, c=c, d=d, r_squared=1.0 - ss_res / ss_tot)
