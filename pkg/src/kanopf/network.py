"""Spline-edge network data model and deterministic forward pass.

Every edge carries its own activation phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x);
nodes are plain summations. Layers store the edge parameters as stacked arrays
(out x in x ...) so batched forward/backward passes stay vectorized; `SplineEdge`
views are materialized on demand for single-edge work.

All edges within one layer share the interval count and degree (their domains
may differ per edge); this keeps the coefficient tensor rectangular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .splines import SplineGrid, basis_derivative_matrix, basis_matrix, silu, uniform_knots


@dataclass
class SplineEdge:
    """One learnable edge activation."""

    grid: SplineGrid
    coeffs: np.ndarray
    base_weight: float
    spline_weight: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.grid.num_bases,):
            raise ShapeError(
                f"edge needs {self.grid.num_bases} coefficients, got {self.coeffs.shape}"
            )
        if not (np.all(np.isfinite(self.coeffs))
                and math.isfinite(self.base_weight)
                and math.isfinite(self.spline_weight)):
            raise DomainError("edge parameters must be finite")


def edge_activation(edge: SplineEdge, x):
    """phi(x) for one edge; scalar in, scalar out (arrays pass through)."""
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise DomainError("edge activation input must be finite")
    b = basis_matrix(xa, edge.grid.knots, edge.grid.degree)
    val = edge.base_weight * silu(xa) + edge.spline_weight * (b @ edge.coeffs)
    return float(val) if scalar else val


class KanLayer:
    """n_in -> n_out layer; output j is the sum of phi_{j,i}(x_i) over inputs i."""

    def __init__(self, knots, degree, coeffs, base_w, spline_w):
        self.knots = np.asarray(knots, dtype=float)
        self.degree = int(degree)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.base_w = np.asarray(base_w, dtype=float)
        self.spline_w = np.asarray(spline_w, dtype=float)
        if self.knots.ndim != 3:
            raise ShapeError("knots must be (n_out, n_in, n_knots)")
        n_out, n_in, n_knots = self.knots.shape
        self.n_out, self.n_in = n_out, n_in
        self.num_intervals = n_knots - 1 - 2 * self.degree
        if self.num_intervals < 1:
            raise ShapeError("knot vector too short for the declared degree")
        n_bases = self.num_intervals + self.degree
        if self.coeffs.shape != (n_out, n_in, n_bases):
            raise ShapeError(
                f"coeffs must be {(n_out, n_in, n_bases)}, got {self.coeffs.shape}"
            )
        if self.base_w.shape != (n_out, n_in) or self.spline_w.shape != (n_out, n_in):
            raise ShapeError("base/spline weights must be (n_out, n_in)")
        # Per-edge grids are usually identical along the output axis (they see the
        # same input node); detect that once so forward passes can share bases.
        self.shared_column_grids = bool(
            np.all(self.knots == self.knots[:1, :, :])
        )

    @property
    def num_bases(self) -> int:
        return self.num_intervals + self.degree

    def edge(self, j: int, i: int) -> SplineEdge:
        """Materialize the (output j, input i) edge as a standalone view copy."""
        k = self.degree
        knots = self.knots[j, i]
        grid = SplineGrid(
            t_min=float(knots[k]),
            t_max=float(knots[len(knots) - 1 - k]),
            num_intervals=self.num_intervals,
            degree=k,
            knots=knots.copy(),
        )
        return SplineEdge(
            grid=grid,
            coeffs=self.coeffs[j, i].copy(),
            base_weight=float(self.base_w[j, i]),
            spline_weight=float(self.spline_w[j, i]),
        )

    @property
    def edges(self):
        """Matrix of SplineEdge copies, n_out rows by n_in columns."""
        return [[self.edge(j, i) for i in range(self.n_in)] for j in range(self.n_out)]

    @classmethod
    def from_edges(cls, edges) -> "KanLayer":
        n_out = len(edges)
        if n_out == 0 or len({len(row) for row in edges}) != 1:
            raise ShapeError("edges must be a non-empty rectangular matrix")
        first = edges[0][0]
        degree, g = first.grid.degree, first.grid.num_intervals
        for row in edges:
            for e in row:
                if e.grid.degree != degree or e.grid.num_intervals != g:
                    raise ShapeError("all edges in a layer must share degree and interval count")
        knots = np.stack([np.stack([e.grid.knots for e in row]) for row in edges])
        coeffs = np.stack([np.stack([e.coeffs for e in row]) for row in edges])
        base_w = np.array([[e.base_weight for e in row] for row in edges], dtype=float)
        spline_w = np.array([[e.spline_weight for e in row] for row in edges], dtype=float)
        return cls(knots, degree, coeffs, base_w, spline_w)

    def copy(self) -> "KanLayer":
        return KanLayer(
            self.knots.copy(), self.degree, self.coeffs.copy(),
            self.base_w.copy(), self.spline_w.copy(),
        )

    def basis_values(self, x_batch: np.ndarray, derivative: bool = False):
        """Basis values (and optionally derivatives) for a batch of inputs.

        Returns arrays shaped (n, n_in, n_bases) when all rows share column
        grids, else (n, n_out, n_in, n_bases).
        """
        fn = basis_derivative_matrix if derivative else basis_matrix
        if self.shared_column_grids:
            return fn(x_batch, self.knots[0], self.degree)
        return fn(x_batch[:, None, :], self.knots, self.degree)

    def spline_values(self, phi_basis) -> np.ndarray:
        """Per-edge spline term sum_b c_b B_b(x_i), shaped (n, n_out, n_in)."""
        if phi_basis.ndim == 3:
            return np.einsum("oib,nib->noi", self.coeffs, phi_basis)
        return np.einsum("oib,noib->noi", self.coeffs, phi_basis)

    def forward(self, x_batch: np.ndarray, with_cache: bool = False):
        """Batched forward pass; x_batch is (n, n_in), output (n, n_out)."""
        x_batch = np.asarray(x_batch, dtype=float)
        if x_batch.ndim != 2 or x_batch.shape[1] != self.n_in:
            raise ShapeError(f"layer expects (n, {self.n_in}) inputs, got {x_batch.shape}")
        phi_basis = self.basis_values(x_batch)
        sv = self.spline_values(phi_basis)
        base = silu(x_batch)
        act = self.base_w[None, :, :] * base[:, None, :] + self.spline_w[None, :, :] * sv
        out = act.sum(axis=2)
        if with_cache:
            return out, {"x": x_batch, "basis": phi_basis, "spline": sv,
                         "base": base, "act": act}
        return out


class KanNetwork:
    """Stack of KanLayers; widths[0] inputs, widths[-1] outputs."""

    def __init__(self, layers):
        if not layers:
            raise ShapeError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(
                    f"layer output width {a.n_out} does not match next input width {b.n_in}"
                )
        self.layers = list(layers)

    @property
    def widths(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def copy(self) -> "KanNetwork":
        return KanNetwork([layer.copy() for layer in self.layers])

    def forward_batch(self, x_batch: np.ndarray) -> np.ndarray:
        x_batch = np.asarray(x_batch, dtype=float)
        if x_batch.ndim != 2 or x_batch.shape[1] != self.n_in:
            raise ShapeError(f"network expects (n, {self.n_in}) inputs, got {x_batch.shape}")
        out = x_batch
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def layer_inputs(self, x_batch: np.ndarray):
        """Inputs seen by each layer for a batch (list of length L, then final output)."""
        x_batch = np.asarray(x_batch, dtype=float)
        outs = [x_batch]
        for layer in self.layers:
            outs.append(layer.forward(outs[-1]))
        return outs


def layer_forward(layer: KanLayer, x) -> np.ndarray:
    """Single-vector layer application (spec operation)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.n_in,):
        raise ShapeError(f"expected input of length {layer.n_in}, got {x.shape}")
    return layer.forward(x[None, :])[0]


def network_forward(net: KanNetwork, xi) -> np.ndarray:
    """Deterministic full forward pass for one input vector."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (net.n_in,):
        raise ShapeError(f"expected input of length {net.n_in}, got {xi.shape}")
    return net.forward_batch(xi[None, :])[0]


@dataclass
class PruneMask:
    """Per-edge keep flags, one boolean matrix per layer."""

    keep: list = field(default_factory=list)

    def validate_against(self, net: KanNetwork):
        if len(self.keep) != len(net.layers):
            raise ShapeError("mask layer count does not match network")
        for mask, layer in zip(self.keep, net.layers):
            if np.asarray(mask).shape != (layer.n_out, layer.n_in):
                raise ShapeError("mask shape does not match layer edge matrix")


def apply_prune_mask(net: KanNetwork, mask: PruneMask) -> KanNetwork:
    """Zero both weights of dropped edges; kept edges are untouched."""
    mask.validate_against(net)
    pruned = net.copy()
    for layer, keep in zip(pruned.layers, mask.keep):
        keep = np.asarray(keep, dtype=bool)
        layer.base_w[~keep] = 0.0
        layer.spline_w[~keep] = 0.0
    return pruned


def build_layer(n_in, n_out, num_intervals, degree, ranges, rng,
                sigma_coeff=0.1, sigma_base=0.1) -> KanLayer:
    """Randomly initialized layer; `ranges` is one (lo, hi) per input node."""
    if len(ranges) != n_in:
        raise ShapeError("need one domain range per input node")
    knots = np.stack(
        [np.stack([uniform_knots(lo, hi, num_intervals, degree) for lo, hi in ranges])] * n_out
    )
    n_bases = num_intervals + degree
    coeffs = rng.normal(0.0, sigma_coeff, size=(n_out, n_in, n_bases))
    base_w = rng.normal(0.0, sigma_base, size=(n_out, n_in))
    spline_w = np.ones((n_out, n_in))
    return KanLayer(knots, degree, coeffs, base_w, spline_w)


def build_network(widths, num_intervals=5, degree=3, input_ranges=None,
                  hidden_range=(-2.0, 2.0), seed=0,
                  sigma_coeff=0.1, sigma_base=0.1) -> KanNetwork:
    """Random network with layer-0 grids on the given input ranges.

    `input_ranges` is a list of (lo, hi) per input dimension (default (-1, 1));
    hidden layers start on `hidden_range` and rely on grid extension to adapt.
    Initialization draws are ordered layer by layer (coeffs then base weights)
    from a PCG64 stream, so a seed fully determines the network.
    """
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ShapeError(f"widths must have >= 2 positive entries, got {widths}")
    if input_ranges is None:
        input_ranges = [(-1.0, 1.0)] * widths[0]
    if len(input_ranges) != widths[0]:
        raise ShapeError("need one input range per input dimension")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    ranges = list(input_ranges)
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        layers.append(build_layer(n_in, n_out, num_intervals, degree, ranges, rng,
                                  sigma_coeff=sigma_coeff, sigma_base=sigma_base))
        ranges = [hidden_range] * n_out
    return KanNetwork(layers)


def pack_parameters(net: KanNetwork) -> np.ndarray:
    """Flatten all trainable parameters (coeffs, base_w, spline_w per layer)."""
    parts = []
    for layer in net.layers:
        parts.extend([layer.coeffs.ravel(), layer.base_w.ravel(), layer.spline_w.ravel()])
    return np.concatenate(parts)


def unpack_parameters(net: KanNetwork, vec: np.ndarray):
    """Write a flat parameter vector back into the network arrays (in place)."""
    vec = np.asarray(vec, dtype=float)
    pos = 0
    for layer in net.layers:
        for arr in (layer.coeffs, layer.base_w, layer.spline_w):
            n = arr.size
            arr[...] = vec[pos : pos + n].reshape(arr.shape)
            pos += n
    if pos != vec.size:
        raise ShapeError(f"parameter vector has {vec.size} entries, network needs {pos}")


def parameter_count(net: KanNetwork) -> int:
    return sum(l.coeffs.size + l.base_w.size + l.spline_w.size for l in net.layers)
