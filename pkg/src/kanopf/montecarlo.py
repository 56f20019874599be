"""Monte Carlo oracle runs, surrogate propagation, and distribution comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .acdc import PowerSystem
from .distributions import (EmpiricalDistribution, confidence_interval, ks_statistic,
                            moments, wasserstein1)
from .errors import KanopfError, NumericError, ShapeError
from .network import KanNetwork
from .opf import OutputSpec, extract_outputs, solve_opf
from .training import Dataset, TargetScaler
from .uncertainty import ScenarioSet

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.05


@dataclass
class ScenarioFailure:
    index: int
    reason: str


def run_monte_carlo(sys: PowerSystem, scenario_set: ScenarioSet, spec: OutputSpec,
                    opf_options=None):
    """Solve the OPF for every scenario; returns (Dataset, failure log).

    Failed scenarios are recorded (index + reason) and their rows dropped;
    more than 5% failures aborts, since that means the case is mis-sized for
    its uncertainty model.
    """
    if sys.uncertainty is None:
        raise NumericError("system declares no uncertainty model")
    if scenario_set.fingerprint != sys.uncertainty.fingerprint():
        raise ShapeError("scenario set was sampled from a different uncertainty model")
    spec.validate(sys)
    n = scenario_set.n
    rows = np.empty((n, len(spec)))
    ok = np.zeros(n, dtype=bool)
    failures = []
    for i in range(n):
        try:
            sol = solve_opf(sys, scenario_set.matrix[i], options=opf_options)
            rows[i] = extract_outputs(sol, spec)
            ok[i] = True
        except KanopfError as exc:
            failures.append(ScenarioFailure(index=i, reason=str(exc)))
    if failures:
        log.warning("%d of %d scenarios failed", len(failures), n)
        if len(failures) > MAX_FAILURE_FRACTION * n:
            raise NumericError(
                f"{len(failures)}/{n} scenarios failed (> {MAX_FAILURE_FRACTION:.0%}): "
                f"first failure: {failures[0].reason}")
    dataset = Dataset(
        inputs=scenario_set.matrix[ok],
        targets=rows[ok],
        feature_names=list(scenario_set.names),
        target_names=spec.names,
    )
    return dataset, failures


def propagate_surrogate(net: KanNetwork, scenarios, spec: OutputSpec,
                        scaler: TargetScaler, names=None) -> Dataset:
    """De-standardized network predictions per scenario; deterministic.

    `scenarios` may be a ScenarioSet or a plain (n, N0) matrix.
    """
    if isinstance(scenarios, ScenarioSet):
        matrix = scenarios.matrix
        names = list(scenarios.names)
    else:
        matrix = np.atleast_2d(np.asarray(scenarios, dtype=float))
        names = list(names) if names is not None else [f"xi{i}" for i in range(matrix.shape[1])]
    if matrix.shape[1] != net.n_in:
        raise ShapeError(f"scenarios have {matrix.shape[1]} dims, network expects {net.n_in}")
    if net.n_out != len(spec):
        raise ShapeError(f"network has {net.n_out} outputs, spec lists {len(spec)}")
    pred = scaler.inverse(net.forward_batch(matrix))
    return Dataset(inputs=matrix, targets=pred, feature_names=names,
                   target_names=spec.names)


@dataclass
class OutputComparison:
    rmse: float            # pointwise, standardized by the baseline std
    rmse_raw: float
    ks: float
    wasserstein: float
    mean_surrogate: float
    mean_baseline: float
    var_surrogate: float
    var_baseline: float
    ci_surrogate: tuple
    ci_baseline: tuple


@dataclass
class ComparisonReport:
    outputs: dict = field(default_factory=dict)
    n_samples: int = 0
    ci_level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "ci_level": self.ci_level,
            "outputs": {
                name: {
                    "rmse": c.rmse, "rmse_raw": c.rmse_raw, "ks": c.ks,
                    "wasserstein": c.wasserstein,
                    "mean_surrogate": c.mean_surrogate, "mean_baseline": c.mean_baseline,
                    "var_surrogate": c.var_surrogate, "var_baseline": c.var_baseline,
                    "ci_surrogate": list(c.ci_surrogate), "ci_baseline": list(c.ci_baseline),
                } for name, c in self.outputs.items()
            },
        }


def compare(surrogate_ds: Dataset, baseline_ds: Dataset, ci_level: float = 0.95) -> ComparisonReport:
    """Paired and distributional agreement metrics per output.

    The datasets must cover the same scenarios in the same order (their input
    matrices are required to match), so pointwise RMSE is meaningful on top of
    the distribution distances.
    """
    if surrogate_ds.target_names != baseline_ds.target_names:
        raise ShapeError("datasets disagree on output names")
    if surrogate_ds.inputs.shape != baseline_ds.inputs.shape or \
            not np.array_equal(surrogate_ds.inputs, baseline_ds.inputs):
        raise ShapeError("datasets are not scenario-aligned")
    report = ComparisonReport(n_samples=baseline_ds.n_samples, ci_level=ci_level)
    for j, name in enumerate(baseline_ds.target_names):
        ys = surrogate_ds.targets[:, j]
        yb = baseline_ds.targets[:, j]
        std = yb.std()
        scale = std if std > 1e-12 else 1.0
        rmse_raw = float(np.sqrt(np.mean((ys - yb) ** 2)))
        ds = EmpiricalDistribution.from_samples(ys)
        db = EmpiricalDistribution.from_samples(yb)
        mean_s, var_s = moments(ds)
        mean_b, var_b = moments(db)
        report.outputs[name] = OutputComparison(
            rmse=rmse_raw / scale,
            rmse_raw=rmse_raw,
            ks=ks_statistic(ds, db),
            wasserstein=wasserstein1(ds, db),
            mean_surrogate=mean_s, mean_baseline=mean_b,
            var_surrogate=var_s, var_baseline=var_b,
            ci_surrogate=confidence_interval(ds, ci_level),
            ci_baseline=confidence_interval(db, ci_level),
        )
    return report
