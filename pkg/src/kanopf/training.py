"""Supervised training of spline-edge networks.

Analytic backpropagation through the edge activations (the spline term is
linear in its coefficients; the chain rule through layer inputs uses the
B-spline derivative basis), an Adam optimizer, activation-magnitude
regularization, grid extension, and importance-based pruning.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError, TrainingDivergedError
from .network import KanLayer, KanNetwork, PruneMask
from .splines import SplineGrid, basis_matrix, fit_coeffs, silu, silu_derivative

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Paired (input, target) samples with column names."""

    inputs: np.ndarray
    targets: np.ndarray
    feature_names: list
    target_names: list

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows vs {self.targets.shape[0]} target rows"
            )
        if self.inputs.shape[0] < 1:
            raise ShapeError("dataset needs at least one row")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise DomainError("dataset contains non-finite values")
        if len(self.feature_names) != self.inputs.shape[1]:
            raise ShapeError("feature_names length must match input columns")
        if len(self.target_names) != self.targets.shape[1]:
            raise ShapeError("target_names length must match target columns")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.inputs[rows], self.targets[rows],
                       list(self.feature_names), list(self.target_names))


@dataclass
class TargetScaler:
    """Per-target z-score transform; zero-variance targets get std 1.0."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetScaler":
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        mean = targets.mean(axis=0)
        std = targets.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def transform(self, targets):
        return (np.asarray(targets, dtype=float) - self.mean) / self.std

    def inverse(self, standardized):
        return np.asarray(standardized, dtype=float) * self.std + self.mean


@dataclass
class TrainConfig:
    steps: int
    learning_rate: float = 0.01
    batch_size: int = None  # None means full batch
    l1_penalty: float = 0.0
    entropy_penalty: float = 0.0
    seed: int = 0
    grid_update_schedule: tuple = ()
    eval_every: int = 100
    lr_schedule: str = "constant"  # "constant" | "cosine"

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise DomainError("learning_rate must be in (0, 1]")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be positive or None for full batch")
        if self.l1_penalty < 0 or self.entropy_penalty < 0:
            raise DomainError("penalties must be non-negative")
        self.grid_update_schedule = tuple((int(s), int(g)) for s, g in self.grid_update_schedule)
        steps = [s for s, _ in self.grid_update_schedule]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise DomainError("grid_update_schedule steps must be strictly increasing")
        if self.lr_schedule not in ("constant", "cosine"):
            raise DomainError(f"unknown lr_schedule {self.lr_schedule!r}")


@dataclass
class TrainReport:
    train_loss: np.ndarray        # loss before each update, length = steps
    test_steps: np.ndarray        # steps at which the test set was evaluated
    test_rmse: np.ndarray         # overall RMSE on standardized targets
    per_output_test_rmse: np.ndarray
    final_parameter_count: int
    wall_seconds: float
    scaler: TargetScaler
    grid_updates: list = field(default_factory=list)
    ridge_fallbacks: int = 0


@dataclass
class LayerGradients:
    coeffs: np.ndarray
    base_w: np.ndarray
    spline_w: np.ndarray


@dataclass
class NetworkGradients:
    layers: list

    def to_vector(self) -> np.ndarray:
        parts = []
        for g in self.layers:
            parts.extend([g.coeffs.ravel(), g.base_w.ravel(), g.spline_w.ravel()])
        return np.concatenate(parts)


def _forward_caches(net: KanNetwork, x_batch: np.ndarray, basis0=None):
    """Forward pass keeping per-layer intermediates for backprop."""
    caches = []
    x = x_batch
    for idx, layer in enumerate(net.layers):
        phi_basis = basis0 if (idx == 0 and basis0 is not None) else layer.basis_values(x)
        sv = layer.spline_values(phi_basis)
        base = silu(x)
        act = layer.base_w[None, :, :] * base[:, None, :] + layer.spline_w[None, :, :] * sv
        out = act.sum(axis=2)
        caches.append({"x": x, "basis": phi_basis, "spline": sv, "base": base, "act": act})
        x = out
    return x, caches


def mse_loss(net: KanNetwork, batch: Dataset) -> float:
    """Mean over samples and outputs of the squared prediction error."""
    _check_batch(net, batch)
    pred = net.forward_batch(batch.inputs)
    return float(np.mean((pred - batch.targets) ** 2))


def _check_batch(net: KanNetwork, batch: Dataset):
    if batch.inputs.shape[1] != net.n_in:
        raise ShapeError(
            f"batch has {batch.inputs.shape[1]} features, network expects {net.n_in}"
        )
    if batch.targets.shape[1] != net.n_out:
        raise ShapeError(
            f"batch has {batch.targets.shape[1]} targets, network expects {net.n_out}"
        )


def _entropy_and_dm(mean_abs: np.ndarray):
    """Entropy of the normalized activation-magnitude distribution and dH/dm.

    Edges with zero mean activation contribute nothing and get zero gradient
    (the same convention as the |.| subgradient at 0).
    """
    total = mean_abs.sum()
    if total <= 0.0:
        return 0.0, np.zeros_like(mean_abs)
    p = mean_abs / total
    pos = p > 0
    ent = -float(np.sum(p[pos] * np.log(p[pos])))
    dm = np.zeros_like(mean_abs)
    dm[pos] = (-np.log(p[pos]) - ent) / total
    return ent, dm


def regularization_loss(net: KanNetwork, batch_inputs, l1_penalty: float,
                        entropy_penalty: float) -> float:
    """l1 * sum of per-edge mean |phi| plus entropy of the per-layer magnitude profile."""
    x = np.atleast_2d(np.asarray(batch_inputs, dtype=float))
    if x.shape[1] != net.n_in:
        raise ShapeError(f"inputs have {x.shape[1]} features, network expects {net.n_in}")
    _, caches = _forward_caches(net, x)
    total = 0.0
    for cache in caches:
        mean_abs = np.abs(cache["act"]).mean(axis=0)
        total += l1_penalty * float(mean_abs.sum())
        ent, _ = _entropy_and_dm(mean_abs)
        total += entropy_penalty * ent
    return total


def _loss_and_gradients(net, inputs, targets, l1_penalty, entropy_penalty, basis0=None):
    n = inputs.shape[0]
    pred, caches = _forward_caches(net, inputs, basis0=basis0)
    err = pred - targets
    loss = float(np.mean(err ** 2))
    grad_out = 2.0 * err / err.size

    reg_terms = []
    if l1_penalty > 0 or entropy_penalty > 0:
        for cache in caches:
            act = cache["act"]
            mean_abs = np.abs(act).mean(axis=0)
            loss += l1_penalty * float(mean_abs.sum())
            ent, dm = _entropy_and_dm(mean_abs)
            loss += entropy_penalty * ent
            # d(reg)/d(act[n,o,i]) via mean_abs; sign(0) := 0
            coef = l1_penalty + entropy_penalty * dm
            reg_terms.append(np.sign(act) * coef[None, :, :] / n)
    else:
        reg_terms = [None] * len(caches)

    layer_grads = [None] * len(net.layers)
    upstream = grad_out  # dL/d(layer output), shape (n, n_out)
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        cache = caches[idx]
        g_act = np.broadcast_to(upstream[:, :, None], cache["act"].shape).copy()
        if reg_terms[idx] is not None:
            g_act += reg_terms[idx]
        d_base_w = np.einsum("noi,ni->oi", g_act, cache["base"])
        d_spline_w = np.einsum("noi,noi->oi", g_act, cache["spline"])
        phi_basis = cache["basis"]
        if phi_basis.ndim == 3:
            d_coeffs = np.einsum("noi,nib->oib", g_act, phi_basis) * layer.spline_w[:, :, None]
        else:
            d_coeffs = np.einsum("noi,noib->oib", g_act, phi_basis) * layer.spline_w[:, :, None]
        layer_grads[idx] = LayerGradients(d_coeffs, d_base_w, d_spline_w)
        if idx > 0:
            dbasis = layer.basis_values(cache["x"], derivative=True)
            if dbasis.ndim == 3:
                dsv = np.einsum("oib,nib->noi", layer.coeffs, dbasis)
            else:
                dsv = np.einsum("oib,noib->noi", layer.coeffs, dbasis)
            dphi_dx = layer.base_w[None, :, :] * silu_derivative(cache["x"])[:, None, :] \
                + layer.spline_w[None, :, :] * dsv
            upstream = np.einsum("noi,noi->ni", g_act, dphi_dx)
    return loss, NetworkGradients(layer_grads)


def total_loss(net: KanNetwork, batch: Dataset, config: TrainConfig) -> float:
    """mse_loss plus regularization_loss under the given config."""
    value = mse_loss(net, batch)
    if config.l1_penalty > 0 or config.entropy_penalty > 0:
        value += regularization_loss(net, batch.inputs, config.l1_penalty,
                                     config.entropy_penalty)
    return value


def gradients(net: KanNetwork, batch: Dataset, config: TrainConfig) -> NetworkGradients:
    """Exact analytic gradient of the total loss w.r.t. every parameter."""
    _check_batch(net, batch)
    for layer in net.layers:
        if layer.degree < 1:
            raise DomainError("gradients require spline degree >= 1")
    _, grads = _loss_and_gradients(net, batch.inputs, batch.targets,
                                   config.l1_penalty, config.entropy_penalty)
    return grads


class _Adam:
    def __init__(self, net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.reset(net)

    def reset(self, net):
        self.m = [LayerGradients(np.zeros_like(l.coeffs), np.zeros_like(l.base_w),
                                 np.zeros_like(l.spline_w)) for l in net.layers]
        self.v = [LayerGradients(np.zeros_like(l.coeffs), np.zeros_like(l.base_w),
                                 np.zeros_like(l.spline_w)) for l in net.layers]

    def step(self, net, grads: NetworkGradients, lr_scale=1.0):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        lr = self.lr * lr_scale
        for layer, g, m, v in zip(net.layers, grads.layers, self.m, self.v):
            for name in ("coeffs", "base_w", "spline_w"):
                garr = getattr(g, name)
                marr = getattr(m, name)
                varr = getattr(v, name)
                marr *= b1
                marr += (1 - b1) * garr
                varr *= b2
                varr += (1 - b2) * garr * garr
                param = getattr(layer, name)
                param -= lr * (marr / c1) / (np.sqrt(varr / c2) + self.eps)


def _observed_ranges(x_col: np.ndarray):
    lo, hi = float(x_col.min()), float(x_col.max())
    span = hi - lo
    if span <= 0.0:
        pad = max(1e-3, 1e-3 * abs(hi))
        return lo - pad, hi + pad
    return lo - 0.1 * span, hi + 0.1 * span


def _extend_grid_internal(net: KanNetwork, new_g: int, sample_inputs: np.ndarray):
    x = np.atleast_2d(np.asarray(sample_inputs, dtype=float))
    if x.shape[0] < 1:
        raise DomainError("grid extension needs at least one sample")
    if x.shape[1] != net.n_in:
        raise ShapeError(f"samples have {x.shape[1]} features, network expects {net.n_in}")
    for layer in net.layers:
        if new_g <= layer.num_intervals:
            raise DomainError(
                f"new interval count {new_g} must exceed current {layer.num_intervals}"
            )
    layer_ins = net.layer_inputs(x)
    new_layers = []
    ridge_count = 0
    for layer, xin in zip(net.layers, layer_ins[:-1]):
        k = layer.degree
        n_knots = new_g + 2 * k + 1
        knots = np.empty((layer.n_out, layer.n_in, n_knots))
        coeffs = np.empty((layer.n_out, layer.n_in, new_g + k))
        for i in range(layer.n_in):
            col = xin[:, i]
            lo, hi = _observed_ranges(col)
            grid = SplineGrid.uniform(lo, hi, new_g, k)
            # Fit against the old spline on the observed samples plus a dense
            # uniform sweep of the observed range (not the +-10% margin: the
            # margin is headroom for future inputs, and the old activation is
            # only meaningful where it actually saw data).
            xs_fit = np.concatenate(
                [col, np.linspace(col.min(), col.max(), 8 * (new_g + k) + 1)])
            if layer.shared_column_grids:
                old_b = basis_matrix(xs_fit, layer.knots[0, i], k)
                targets = old_b @ layer.coeffs[:, i, :].T  # (n_fit, n_out)
            else:
                targets = np.stack(
                    [basis_matrix(xs_fit, layer.knots[j, i], k) @ layer.coeffs[j, i]
                     for j in range(layer.n_out)], axis=1)
            for j in range(layer.n_out):
                c, ridge = fit_coeffs(grid, xs_fit, targets[:, j])
                coeffs[j, i] = c
                knots[j, i] = grid.knots
                ridge_count += int(ridge)
        new_layers.append(KanLayer(knots, k, coeffs, layer.base_w.copy(),
                                   layer.spline_w.copy()))
    if ridge_count:
        log.warning("grid extension used ridge fallback on %d edge fits", ridge_count)
    return KanNetwork(new_layers), ridge_count


def extend_grid(net: KanNetwork, new_g: int, sample_inputs) -> KanNetwork:
    """Refit every edge on a finer grid spanning its observed input range (+10%).

    Coefficients are least-squares fit so the new activation matches the old
    one on the samples; rank-deficient fits fall back to a small ridge penalty
    (logged, not fatal).
    """
    extended, _ = _extend_grid_internal(net, new_g, sample_inputs)
    return extended


def importance_scores(net: KanNetwork, sample_inputs):
    """Per-edge mean |phi| over the samples; one (n_out, n_in) matrix per layer."""
    x = np.atleast_2d(np.asarray(sample_inputs, dtype=float))
    if x.shape[0] < 1:
        raise DomainError("importance scores need at least one sample")
    if x.shape[1] != net.n_in:
        raise ShapeError(f"samples have {x.shape[1]} features, network expects {net.n_in}")
    _, caches = _forward_caches(net, x)
    return [np.abs(c["act"]).mean(axis=0) for c in caches]


def prune_by_threshold(net: KanNetwork, sample_inputs, threshold: float) -> PruneMask:
    """Mask dropping exactly the edges whose importance score is below threshold."""
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    scores = importance_scores(net, sample_inputs)
    keep = [s >= threshold for s in scores]
    dead_outputs = np.flatnonzero(~keep[-1].any(axis=1))
    if dead_outputs.size:
        log.warning("pruning disconnects output node(s) %s of the final layer",
                    dead_outputs.tolist())
    return PruneMask(keep=keep)


def _lr_scale(schedule: str, step: int, steps: int) -> float:
    if schedule == "cosine":
        return 0.5 * (1.0 + np.cos(np.pi * step / max(1, steps)))
    return 1.0


def train(net: KanNetwork, data: Dataset, test: Dataset, config: TrainConfig):
    """Adam training on standardized targets; deterministic given the seed.

    Returns (trained network, TrainReport). The report's loss curve holds the
    batch loss evaluated before each update; test RMSE (standardized) is
    recorded every `eval_every` steps and at the last step. Grid updates from
    the schedule reset the Adam moments (the parameter count changes).
    """
    _check_batch(net, data)
    _check_batch(net, test)
    for s, g in config.grid_update_schedule:
        if not 0 <= s < config.steps:
            raise DomainError(f"grid update step {s} outside [0, {config.steps})")
    t_start = time.perf_counter()
    scaler = TargetScaler.fit(data.targets)
    y_train = scaler.transform(data.targets)
    y_test = scaler.transform(test.targets)
    x_train, x_test = data.inputs, test.inputs
    n = x_train.shape[0]

    net = net.copy()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    adam = _Adam(net, config.learning_rate)
    basis0_full = net.layers[0].basis_values(x_train)
    schedule = dict(config.grid_update_schedule)

    full_batch = config.batch_size is None or config.batch_size >= n
    perm = None
    pos = 0

    train_curve = np.empty(config.steps)
    test_steps, test_curve = [], []
    grid_updates_applied = []
    ridge_total = 0

    def eval_test():
        pred = net.forward_batch(x_test)
        return float(np.sqrt(np.mean((pred - y_test) ** 2)))

    for step in range(config.steps):
        if step in schedule:
            net, ridge = _extend_grid_internal(net, schedule[step], x_train)
            ridge_total += ridge
            adam = _Adam(net, config.learning_rate)
            basis0_full = net.layers[0].basis_values(x_train)
            grid_updates_applied.append((step, schedule[step]))
        if full_batch:
            idx = slice(None)
            basis0 = basis0_full
        else:
            if perm is None or pos + config.batch_size > n:
                perm = rng.permutation(n)
                pos = 0
            idx = perm[pos : pos + config.batch_size]
            pos += config.batch_size
            basis0 = basis0_full[idx]
        loss, grads = _loss_and_gradients(net, x_train[idx], y_train[idx],
                                          config.l1_penalty, config.entropy_penalty,
                                          basis0=basis0)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became non-finite at step {step}", step=step)
        train_curve[step] = loss
        adam.step(net, grads, lr_scale=_lr_scale(config.lr_schedule, step, config.steps))
        if step % config.eval_every == 0 or step == config.steps - 1:
            test_steps.append(step)
            test_curve.append(eval_test())

    pred = net.forward_batch(x_test)
    per_output = np.sqrt(np.mean((pred - y_test) ** 2, axis=0))
    report = TrainReport(
        train_loss=train_curve,
        test_steps=np.asarray(test_steps),
        test_rmse=np.asarray(test_curve),
        per_output_test_rmse=per_output,
        final_parameter_count=sum(
            l.coeffs.size + l.base_w.size + l.spline_w.size for l in net.layers
        ),
        wall_seconds=time.perf_counter() - t_start,
        scaler=scaler,
        grid_updates=grid_updates_applied,
        ridge_fallbacks=ridge_total,
    )
    return net, report
