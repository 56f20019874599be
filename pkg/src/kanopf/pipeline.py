"""Experiment pipeline: config parsing, model files, and the runnable stages.

Every stage is a pure function of (config, input files, global seed): reruns
produce byte-identical outputs. The global seed fans out to stage seeds by
adding a fixed per-stage constant (mod 2^64); no file ever embeds a
timestamp (logs may).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .acdc import PowerSystem, UncertaintyDim, UncertaintyModel, builtin_case5, load_case
from .datafiles import load_dataset, save_dataset, save_table
from .distributions import EmpiricalDistribution, pdf_histogram, cdf
from .errors import ConfigError, DataFileError
from .interpret import fit_symbolic, snapshot_activations
from .montecarlo import compare, propagate_surrogate, run_monte_carlo
from .network import KanLayer, KanNetwork, apply_prune_mask, build_network
from .opf import OutputSpec
from .splines import basis_matrix, silu
from .training import (Dataset, TargetScaler, TrainConfig, importance_scores,
                       prune_by_threshold, train)
from .uncertainty import sample_scenarios

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
MODEL_SCHEMA_VERSION = 1

# Documented seed-splitting constants: stage seed = (global seed + constant) mod 2^64.
SEED_GEN_TRAIN = 1
SEED_GEN_TEST = 2
SEED_NET_INIT = 3
SEED_TRAIN = 4

_U64 = 2 ** 64


def stage_seed(global_seed: int, offset: int) -> int:
    return (int(global_seed) + offset) % _U64


# --- configuration ----------------------------------------------------------

@dataclass
class NetworkSettings:
    num_intervals: int = 5
    degree: int = 3
    sigma_coeff: float = 0.1
    sigma_base: float = 0.1
    hidden_range: tuple = (-2.0, 2.0)


@dataclass
class PipelineConfig:
    case: str
    output_spec: OutputSpec
    n_train: int
    n_test: int
    seed: int
    out_dir: str
    widths: list = None
    train: TrainConfig = None
    network: NetworkSettings = field(default_factory=NetworkSettings)
    sweep_sizes: list = field(default_factory=list)
    sweep_widths: list = field(default_factory=list)
    uncertainty_override: UncertaintyModel = None

    def load_system(self) -> PowerSystem:
        if self.case == "builtin:case5":
            sys = builtin_case5()
        else:
            sys = load_case(self.case)
        if self.uncertainty_override is not None:
            sys = replace(sys, uncertainty=self.uncertainty_override)
        if sys.uncertainty is None:
            raise ConfigError("case: system declares no uncertainty model")
        self.output_spec.validate(sys)
        return sys


def _require(data, key, types, path):
    if key not in data:
        raise ConfigError(f"{path}{key}: missing required key")
    value = data[key]
    if not isinstance(value, types):
        raise ConfigError(f"{path}{key}: expected {types}, got {type(value).__name__}")
    return value


def _widths_ok(widths, path):
    if (not isinstance(widths, list) or len(widths) < 2
            or not all(isinstance(w, int) and w >= 1 for w in widths)):
        raise ConfigError(f"{path}: widths must be a list of >= 2 positive integers")
    return widths


def parse_config(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    version = _require(data, "schema_version", int, "")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version}")
    case = _require(data, "case", str, "")
    spec_list = _require(data, "output_spec", list, "")
    if not all(isinstance(s, str) for s in spec_list):
        raise ConfigError("output_spec: entries must be strings")
    n_train = _require(data, "n_train", int, "")
    n_test = _require(data, "n_test", int, "")
    if n_train < 1 or n_test < 1:
        raise ConfigError("n_train/n_test: sample sizes must be >= 1")
    seed = _require(data, "seed", int, "")
    if seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    out_dir = _require(data, "out_dir", str, "")

    widths = data.get("widths")
    if widths is not None:
        widths = _widths_ok(widths, "widths")

    tr = data.get("train", {})
    if not isinstance(tr, dict):
        raise ConfigError("train: must be an object")
    batch = tr.get("batch_size", "full")
    if batch == "full":
        batch = None
    elif not isinstance(batch, int) or batch < 1:
        raise ConfigError("train.batch_size: must be a positive integer or \"full\"")
    try:
        train_cfg = TrainConfig(
            steps=tr.get("steps", 2000),
            learning_rate=tr.get("learning_rate", 0.01),
            batch_size=batch,
            l1_penalty=tr.get("l1_penalty", 0.0),
            entropy_penalty=tr.get("entropy_penalty", 0.0),
            seed=stage_seed(seed, SEED_TRAIN),
            grid_update_schedule=tuple(map(tuple, tr.get("grid_update_schedule", []))),
            eval_every=tr.get("eval_every", 100),
            lr_schedule=tr.get("lr_schedule", "constant"),
        )
    except Exception as exc:
        raise ConfigError(f"train: {exc}") from exc

    nw = data.get("network", {})
    if not isinstance(nw, dict):
        raise ConfigError("network: must be an object")
    net_cfg = NetworkSettings(
        num_intervals=nw.get("num_intervals", 5),
        degree=nw.get("degree", 3),
        sigma_coeff=nw.get("sigma_coeff", 0.1),
        sigma_base=nw.get("sigma_base", 0.1),
        hidden_range=tuple(nw.get("hidden_range", (-2.0, 2.0))),
    )
    if net_cfg.num_intervals < 1 or net_cfg.degree < 0:
        raise ConfigError("network: num_intervals must be >= 1 and degree >= 0")

    sw = data.get("sweep", {})
    if not isinstance(sw, dict):
        raise ConfigError("sweep: must be an object")
    sweep_sizes = sw.get("sample_sizes", [])
    if not all(isinstance(s, int) and s >= 1 for s in sweep_sizes):
        raise ConfigError("sweep.sample_sizes: must be positive integers")
    sweep_widths = [_widths_ok(w, f"sweep.widths_list[{i}]")
                    for i, w in enumerate(sw.get("widths_list", []))]

    unc = None
    if "uncertainty" in data:
        try:
            unc = UncertaintyModel(tuple(UncertaintyDim(**d) for d in data["uncertainty"]))
        except Exception as exc:
            raise ConfigError(f"uncertainty: {exc}") from exc

    try:
        spec = OutputSpec(tuple(spec_list))
    except Exception as exc:
        raise ConfigError(f"output_spec: {exc}") from exc
    return PipelineConfig(
        case=case, output_spec=spec, n_train=n_train, n_test=n_test, seed=seed,
        out_dir=out_dir, widths=widths, train=train_cfg, network=net_cfg,
        sweep_sizes=list(sweep_sizes), sweep_widths=sweep_widths,
        uncertainty_override=unc,
    )


def load_config(path) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise DataFileError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    return parse_config(data)


# --- model files -------------------------------------------------------------

def _network_to_dict(net: KanNetwork) -> list:
    return [
        {
            "degree": layer.degree,
            "knots": layer.knots.tolist(),
            "coeffs": layer.coeffs.tolist(),
            "base_w": layer.base_w.tolist(),
            "spline_w": layer.spline_w.tolist(),
        }
        for layer in net.layers
    ]


def _network_from_dict(layers: list) -> KanNetwork:
    return KanNetwork([
        KanLayer(np.array(l["knots"]), l["degree"], np.array(l["coeffs"]),
                 np.array(l["base_w"]), np.array(l["spline_w"]))
        for l in layers
    ])


@dataclass
class ModelFile:
    """On-disk surrogate: network, target standardization, and provenance."""

    network: KanNetwork
    scaler: TargetScaler
    output_spec: OutputSpec
    feature_names: list
    uncertainty_fingerprint: str
    provenance: dict

    def save(self, path):
        payload = {
            "schema_version": MODEL_SCHEMA_VERSION,
            "widths": self.network.widths,
            "layers": _network_to_dict(self.network),
            "target_mean": self.scaler.mean.tolist(),
            "target_std": self.scaler.std.tolist(),
            "output_spec": list(self.output_spec.selectors),
            "output_fingerprint": self.output_spec.fingerprint(),
            "feature_names": list(self.feature_names),
            "uncertainty_fingerprint": self.uncertainty_fingerprint,
            "provenance": self.provenance,
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ModelFile":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise DataFileError(f"model file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model {path}: invalid JSON at line {exc.lineno}") from exc
        if data.get("schema_version") != MODEL_SCHEMA_VERSION:
            raise ConfigError(f"model {path}: unsupported schema_version")
        return cls(
            network=_network_from_dict(data["layers"]),
            scaler=TargetScaler(np.array(data["target_mean"]), np.array(data["target_std"])),
            output_spec=OutputSpec(tuple(data["output_spec"])),
            feature_names=list(data["feature_names"]),
            uncertainty_fingerprint=data["uncertainty_fingerprint"],
            provenance=data["provenance"],
        )

    def untrained_twin(self) -> KanNetwork:
        """Rebuild the freshly initialized network from recorded provenance."""
        init = self.provenance["init"]
        return build_network(
            self.provenance["widths"],
            num_intervals=init["num_intervals"], degree=init["degree"],
            input_ranges=[tuple(r) for r in init["input_ranges"]],
            hidden_range=tuple(init["hidden_range"]),
            seed=init["seed"],
            sigma_coeff=init["sigma_coeff"], sigma_base=init["sigma_base"],
        )


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- pipeline stages ---------------------------------------------------------

def cmd_gen_data(config: PipelineConfig):
    """Sample scenarios and solve the oracle; writes train/test dataset files."""
    sys = config.load_system()
    model = sys.uncertainty
    os.makedirs(config.out_dir, exist_ok=True)
    paths = {}
    jobs = [("train", config.n_train, stage_seed(config.seed, SEED_GEN_TRAIN)),
            ("test", config.n_test, stage_seed(config.seed, SEED_GEN_TEST))]
    for tag, n, seed in jobs:
        scen = sample_scenarios(model, n, seed)
        log.info("solving %d %s scenarios", n, tag)
        ds, failures = run_monte_carlo(sys, scen, config.output_spec)
        path = os.path.join(config.out_dir, f"{tag}.csv")
        save_dataset(ds, path, meta={
            "global_seed": config.seed,
            "stage_seed": seed,
            "n_requested": n,
            "n_converged": ds.n_samples,
            "failures": [{"index": f.index, "reason": f.reason} for f in failures],
            "clamped_draws": scen.clamped,
            "uncertainty_fingerprint": scen.fingerprint,
            "output_fingerprint": config.output_spec.fingerprint(),
            "case": config.case,
        })
        log.info("wrote %s (%d rows, %d failures)", path, ds.n_samples, len(failures))
        paths[tag] = path
    return paths


def _check_dataset(config: PipelineConfig, ds: Dataset, meta, path):
    if ds.target_names != config.output_spec.names:
        raise ConfigError(
            f"dataset {path}: outputs {ds.target_names} do not match the configured "
            f"output_spec {config.output_spec.names}")
    if meta is not None and meta.get("output_fingerprint") not in (
            None, config.output_spec.fingerprint()):
        raise ConfigError(f"dataset {path}: output fingerprint mismatch")


def _input_ranges(sys) -> list:
    return [d.bounds for d in sys.uncertainty.dims]


def _build_initial_network(config: PipelineConfig, widths, sys, init_seed):
    nw = config.network
    return build_network(
        widths, num_intervals=nw.num_intervals, degree=nw.degree,
        input_ranges=_input_ranges(sys), hidden_range=nw.hidden_range,
        seed=init_seed, sigma_coeff=nw.sigma_coeff, sigma_base=nw.sigma_base,
    )


def _resolve_widths(config: PipelineConfig, widths, n_in, n_out):
    if widths is None:
        widths = [n_in, 5, 5, n_out]
    if widths[0] != n_in or widths[-1] != n_out:
        raise ConfigError(
            f"widths: {widths} inconsistent with {n_in} inputs / {n_out} outputs")
    return list(widths)


def cmd_train(config: PipelineConfig, train_path, test_path, model_name="model.json"):
    """Train the surrogate; writes the model file and a loss-curve table."""
    sys = config.load_system()
    train_ds, train_meta = load_dataset(train_path)
    test_ds, _ = load_dataset(test_path)
    _check_dataset(config, train_ds, train_meta, train_path)
    widths = _resolve_widths(config, config.widths, train_ds.inputs.shape[1],
                             train_ds.targets.shape[1])
    init_seed = stage_seed(config.seed, SEED_NET_INIT)
    net0 = _build_initial_network(config, widths, sys, init_seed)
    trained, report = train(net0, train_ds, test_ds, config.train)
    os.makedirs(config.out_dir, exist_ok=True)
    model_path = os.path.join(config.out_dir, model_name)
    nw = config.network
    ModelFile(
        network=trained,
        scaler=report.scaler,
        output_spec=config.output_spec,
        feature_names=list(train_ds.feature_names),
        uncertainty_fingerprint=sys.uncertainty.fingerprint(),
        provenance={
            "widths": widths,
            "global_seed": config.seed,
            "train_seed": config.train.seed,
            "steps": config.train.steps,
            "data_sha256": _sha256_file(train_path),
            "final_test_rmse": float(report.test_rmse[-1]),
            "init": {
                "seed": init_seed,
                "num_intervals": nw.num_intervals,
                "degree": nw.degree,
                "sigma_coeff": nw.sigma_coeff,
                "sigma_base": nw.sigma_base,
                "input_ranges": [list(r) for r in _input_ranges(sys)],
                "hidden_range": list(nw.hidden_range),
            },
        },
    ).save(model_path)
    curve_path = os.path.join(config.out_dir, model_name.replace(".json", "") + "_loss.csv")
    rows = [(int(s), float(report.train_loss[s]), float(r))
            for s, r in zip(report.test_steps, report.test_rmse)]
    save_table(curve_path, ["step", "train_loss", "test_rmse"], rows)
    log.info("trained %s: final test RMSE %.4g (%.1fs)", model_path,
             report.test_rmse[-1], report.wall_seconds)
    return model_path, curve_path, report


def cmd_sweep(config: PipelineConfig, train_path, test_path):
    """Train across (sample size, widths) cells; writes one consolidated table.

    Cells reuse leading subsets of the master training dataset, so a sweep is
    a pure function of the same inputs as a single training run.
    """
    if not config.sweep_sizes or not config.sweep_widths:
        raise ConfigError("sweep: needs sample_sizes and widths_list")
    sys = config.load_system()
    train_ds, train_meta = load_dataset(train_path)
    test_ds, _ = load_dataset(test_path)
    _check_dataset(config, train_ds, train_meta, train_path)
    header = ["n_train", "widths", "status", "train_loss", "test_rmse"]
    header += [f"rmse:{n}" for n in config.output_spec.names]
    rows = []
    results = {}
    for widths in config.sweep_widths:
        widths = _resolve_widths(config, widths, train_ds.inputs.shape[1],
                                 train_ds.targets.shape[1])
        for size in config.sweep_sizes:
            if size > train_ds.n_samples:
                raise ConfigError(
                    f"sweep: size {size} exceeds dataset rows {train_ds.n_samples}")
            subset = train_ds.subset(np.arange(size))
            tag = "x".join(map(str, widths))
            try:
                net0 = _build_initial_network(config, widths, sys,
                                              stage_seed(config.seed, SEED_NET_INIT))
                trained, report = train(net0, subset, test_ds, config.train)
                rows.append([size, tag, "ok", float(report.train_loss[-1]),
                             float(report.test_rmse[-1])]
                            + [float(v) for v in report.per_output_test_rmse])
                results[(size, tag)] = (trained, report)
                log.info("sweep cell n=%d widths=%s: test RMSE %.4g",
                         size, tag, report.test_rmse[-1])
            except Exception as exc:  # record and continue per contract
                log.warning("sweep cell n=%d widths=%s failed: %s", size, tag, exc)
                rows.append([size, tag, f"error({type(exc).__name__})", "", ""]
                            + [""] * len(config.output_spec.names))
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "sweep.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
    return path, results


def _slug(name: str) -> str:
    return name.replace(":", "_").replace("/", "_")


def cmd_compare(config: PipelineConfig, model_path, test_path, bins: int = 30):
    """Surrogate vs oracle on a held-out dataset; report + PDF/CDF tables."""
    mf = ModelFile.load(model_path)
    test_ds, meta = load_dataset(test_path)
    if mf.output_spec.selectors != tuple(config.output_spec.selectors):
        raise ConfigError("model output spec does not match the configuration")
    _check_dataset(config, test_ds, meta, test_path)
    sys = config.load_system()
    if mf.uncertainty_fingerprint != sys.uncertainty.fingerprint():
        raise ConfigError("model was trained against a different uncertainty model")
    surrogate = propagate_surrogate(mf.network, test_ds.inputs, mf.output_spec,
                                    mf.scaler, names=test_ds.feature_names)
    report = compare(surrogate, test_ds)
    os.makedirs(config.out_dir, exist_ok=True)
    report_path = os.path.join(config.out_dir, "comparison.json")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    for j, name in enumerate(test_ds.target_names):
        ys, yb = surrogate.targets[:, j], test_ds.targets[:, j]
        lo = min(ys.min(), yb.min())
        hi = max(ys.max(), yb.max())
        edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo, lo + 1e-12])
        dens_s, _ = np.histogram(ys, bins=edges, density=True)
        dens_b, _ = np.histogram(yb, bins=edges, density=True)
        save_table(os.path.join(config.out_dir, f"pdf_{_slug(name)}.csv"),
                   ["bin_lo", "bin_hi", "density_surrogate", "density_baseline"],
                   np.column_stack([edges[:-1], edges[1:], dens_s, dens_b]))
        grid = np.union1d(ys, yb)
        ds = EmpiricalDistribution.from_samples(ys)
        db = EmpiricalDistribution.from_samples(yb)
        save_table(os.path.join(config.out_dir, f"cdf_{_slug(name)}.csv"),
                   ["x", "cdf_surrogate", "cdf_baseline"],
                   np.column_stack([grid, cdf(ds, grid), cdf(db, grid)]))
    return report_path, report


def cmd_export_activations(config: PipelineConfig, model_path, data_path, layer: int,
                           n_points: int = 101):
    """Per-edge tables (x, phi before training, phi after training)."""
    mf = ModelFile.load(model_path)
    ds, _ = load_dataset(data_path)
    twin = mf.untrained_twin()
    snaps = snapshot_activations(mf.network, layer, ds.inputs, n_points=n_points)
    os.makedirs(config.out_dir, exist_ok=True)
    paths = []
    lay0 = twin.layers[layer]
    for snap in snaps:
        j, i = snap.out_index, snap.in_index
        before = (lay0.base_w[j, i] * silu(snap.x)
                  + lay0.spline_w[j, i]
                  * (basis_matrix(snap.x, lay0.knots[j, i], lay0.degree) @ lay0.coeffs[j, i]))
        path = os.path.join(config.out_dir, f"activations_l{layer}_o{j}_i{i}.csv")
        save_table(path, ["x", "phi_before", "phi_after"],
                   np.column_stack([snap.x, before, snap.values]))
        paths.append(path)
    return paths


def cmd_symbolic(config: PipelineConfig, model_path, data_path):
    """Symbolic candidate fits for every non-pruned edge, sorted by importance."""
    mf = ModelFile.load(model_path)
    ds, _ = load_dataset(data_path)
    scores = importance_scores(mf.network, ds.inputs)
    rows = []
    skipped = []
    for layer_idx, layer in enumerate(mf.network.layers):
        snaps = snapshot_activations(mf.network, layer_idx, ds.inputs)
        by_edge = {(s.out_index, s.in_index): s for s in snaps}
        for j in range(layer.n_out):
            for i in range(layer.n_in):
                if layer.base_w[j, i] == 0.0 and layer.spline_w[j, i] == 0.0:
                    skipped.append([layer_idx, j, i])
                    continue
                fit = fit_symbolic(by_edge[(j, i)])
                rows.append([float(scores[layer_idx][j, i]), layer_idx, j, i,
                             fit.name, fit.a, fit.b, fit.c, fit.d, fit.r_squared])
    rows.sort(key=lambda r: -r[0])
    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "symbolic.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("importance,layer,out,in,candidate,a,b,c,d,r_squared\n")
        for r in rows:
            fh.write(f"{r[0]!r},{r[1]},{r[2]},{r[3]},{r[4]},"
                     f"{r[5]!r},{r[6]!r},{r[7]!r},{r[8]!r},{r[9]!r}\n")
    with open(path + ".meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"skipped_pruned_edges": skipped, "rows": len(rows)}, fh, indent=1,
                  sort_keys=True)
        fh.write("\n")
    return path


def cmd_prune(config: PipelineConfig, model_path, data_path, threshold: float):
    """Drop low-importance edges; writes the pruned model and a score report."""
    mf = ModelFile.load(model_path)
    ds, _ = load_dataset(data_path)
    mask = prune_by_threshold(mf.network, ds.inputs, threshold)
    pruned = apply_prune_mask(mf.network, mask)
    scores = importance_scores(mf.network, ds.inputs)
    os.makedirs(config.out_dir, exist_ok=True)
    out_model = os.path.join(config.out_dir, "model_pruned.json")
    ModelFile(network=pruned, scaler=mf.scaler, output_spec=mf.output_spec,
              feature_names=mf.feature_names,
              uncertainty_fingerprint=mf.uncertainty_fingerprint,
              provenance={**mf.provenance, "pruned_threshold": threshold}).save(out_model)
    rows = []
    for layer_idx, (score, keep) in enumerate(zip(scores, mask.keep)):
        for j in range(score.shape[0]):
            for i in range(score.shape[1]):
                rows.append([layer_idx, j, i, float(score[j, i]), int(keep[j, i])])
    report_path = os.path.join(config.out_dir, "prune_report.csv")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,out,in,score,kept\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]!r},{r[4]}\n")
    return out_model, report_path
