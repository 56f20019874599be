"""Hybrid AC/DC network model, scenario application, and case file I/O.

All quantities are per-unit on the system MVA base. The DC overlay couples to
the AC network through converters; converters are P-controlled on the DC side
except one per DC network that regulates DC voltage (the DC slack). Converters
exchange active power only (unity power factor on the AC side).
"""

from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import ConfigError, DataFileError, DisconnectedSystemError, DomainError, ShapeError

SLACK, PV, PQ = "slack", "pv", "pq"


@dataclass(frozen=True)
class AcBus:
    id: int
    type: str
    v_min: float = 0.95
    v_max: float = 1.05
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class AcBranch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    s_max: float = 99.0
    in_service: bool = True


@dataclass(frozen=True)
class DcBus:
    id: int
    v_min: float = 0.95
    v_max: float = 1.05


@dataclass(frozen=True)
class DcBranch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    p_max: float = 99.0


@dataclass(frozen=True)
class Converter:
    """VSC coupling one AC bus to one DC bus; loss = a + b*|p_ac| + c*p_ac**2."""

    id: str
    ac_bus: int
    dc_bus: int
    p_max: float
    loss_a: float = 0.0
    loss_b: float = 0.0
    loss_c: float = 0.0
    dc_slack: bool = False


@dataclass(frozen=True)
class Generator:
    """Dispatchable unit with quadratic cost c0 + c1*P + c2*P**2 ($/h, P in p.u.)."""

    id: str
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0


@dataclass(frozen=True)
class ResUnit:
    """Renewable injection: p_injection = capacity * scenario factor in [0, 1]."""

    id: str
    bus: int
    capacity: float
    p_injection: float = 0.0


@dataclass(frozen=True)
class UncertaintyDim:
    """One scenario dimension and the system quantity it drives.

    Targets: "load:<ac bus id>" (multiplicative factor on that bus's load),
    "res:<unit id>" (output factor clamped to [0, 1]), "branch:<ac branch id>"
    (outage flag, value >= 0.5 takes the branch out of service).
    """

    name: str
    kind: str  # gaussian | beta | bernoulli
    target: str
    mean: float = None
    std: float = None
    lo: float = None
    hi: float = None
    alpha: float = None
    beta: float = None
    p: float = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.std is None or self.std <= 0:
                raise DomainError(f"dimension {self.name}: gaussian std must be > 0")
            if self.mean is None or self.lo is None or self.hi is None:
                raise DomainError(f"dimension {self.name}: gaussian needs mean/lo/hi")
            if not self.lo < self.hi:
                raise DomainError(f"dimension {self.name}: lo must be < hi")
        elif self.kind == "beta":
            if self.alpha is None or self.beta is None or self.alpha <= 0 or self.beta <= 0:
                raise DomainError(f"dimension {self.name}: beta needs alpha, beta > 0")
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise DomainError(f"dimension {self.name}: beta needs lo < hi scale bounds")
        elif self.kind == "bernoulli":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise DomainError(f"dimension {self.name}: bernoulli needs p in [0, 1]")
        else:
            raise DomainError(f"dimension {self.name}: unknown kind {self.kind!r}")

    @property
    def bounds(self):
        """Support of the sampled values (post truncation/clamping)."""
        if self.kind == "bernoulli":
            return 0.0, 1.0
        return float(self.lo), float(self.hi)

    def nominal(self) -> float:
        if self.kind == "gaussian":
            return float(np.clip(self.mean, self.lo, self.hi))
        if self.kind == "beta":
            frac = self.alpha / (self.alpha + self.beta)
            return float(self.lo + (self.hi - self.lo) * frac)
        return 0.0  # bernoulli: no outage


@dataclass(frozen=True)
class UncertaintyModel:
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise DomainError("uncertainty dimension names must be unique")

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def names(self):
        return [d.name for d in self.dims]

    def nominal_scenario(self) -> np.ndarray:
        return np.array([d.nominal() for d in self.dims])

    def fingerprint(self) -> str:
        payload = json.dumps([vars(d) for d in self.dims], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _connected(nodes, edges) -> bool:
    if not nodes:
        return True
    adj = {n: [] for n in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {next(iter(nodes))}
    stack = list(seen)
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return len(seen) == len(nodes)


@dataclass(frozen=True)
class PowerSystem:
    name: str
    base_mva: float
    ac_buses: tuple
    ac_branches: tuple
    generators: tuple
    dc_buses: tuple = ()
    dc_branches: tuple = ()
    converters: tuple = ()
    res_units: tuple = ()
    uncertainty: UncertaintyModel = None

    def __post_init__(self):
        for name in ("ac_buses", "ac_branches", "generators", "dc_buses",
                     "dc_branches", "converters", "res_units"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        bus_ids = [b.id for b in self.ac_buses]
        if len(set(bus_ids)) != len(bus_ids):
            raise DomainError("duplicate AC bus ids")
        slacks = [b for b in self.ac_buses if b.type == SLACK]
        if len(slacks) != 1:
            raise DomainError(f"exactly one slack bus required, found {len(slacks)}")
        for b in self.ac_buses:
            if b.type not in (SLACK, PV, PQ):
                raise DomainError(f"bus {b.id}: unknown type {b.type!r}")
            if not b.v_min < b.v_max:
                raise DomainError(f"bus {b.id}: v_min must be < v_max")
        bus_set = set(bus_ids)
        br_ids = [br.id for br in self.ac_branches]
        if len(set(br_ids)) != len(br_ids):
            raise DomainError("duplicate AC branch ids")
        for br in self.ac_branches:
            if br.from_bus not in bus_set or br.to_bus not in bus_set:
                raise DomainError(f"branch {br.id}: endpoint bus missing")
            if br.r < 0 or br.x <= 0:
                raise DomainError(f"branch {br.id}: need r >= 0 and x > 0")
        dc_ids = [b.id for b in self.dc_buses]
        if len(set(dc_ids)) != len(dc_ids):
            raise DomainError("duplicate DC bus ids")
        dc_set = set(dc_ids)
        for br in self.dc_branches:
            if br.from_bus not in dc_set or br.to_bus not in dc_set:
                raise DomainError(f"DC branch {br.id}: endpoint bus missing")
            if br.r <= 0:
                raise DomainError(f"DC branch {br.id}: resistance must be > 0")
        conv_ids = [c.id for c in self.converters]
        if len(set(conv_ids)) != len(conv_ids):
            raise DomainError("duplicate converter ids")
        for c in self.converters:
            if c.ac_bus not in bus_set or c.dc_bus not in dc_set:
                raise DomainError(f"converter {c.id}: endpoint bus missing")
            if min(c.loss_a, c.loss_b, c.loss_c) < 0:
                raise DomainError(f"converter {c.id}: loss coefficients must be >= 0")
            if c.loss_b >= 1.0:
                raise DomainError(f"converter {c.id}: linear loss must be < 1")
        if self.dc_buses:
            if sum(1 for c in self.converters if c.dc_slack) != 1:
                raise DomainError("exactly one converter must be the DC slack")
            if not _connected(dc_set, [(b.from_bus, b.to_bus) for b in self.dc_branches]):
                raise DomainError("DC network must be a single connected island")
        gen_ids = [g.id for g in self.generators]
        if len(set(gen_ids)) != len(gen_ids):
            raise DomainError("duplicate generator ids")
        gen_buses = [g.bus for g in self.generators]
        if len(set(gen_buses)) != len(gen_buses):
            raise DomainError("at most one generator per bus supported")
        for g in self.generators:
            if g.bus not in bus_set:
                raise DomainError(f"generator {g.id}: bus missing")
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise DomainError(f"generator {g.id}: inverted limits")
        bus_types = {b.id: b.type for b in self.ac_buses}
        for g in self.generators:
            if bus_types[g.bus] == PQ:
                raise DomainError(f"generator {g.id}: generators must sit on slack or PV buses")
        gen_bus_set = set(gen_buses)
        for b in self.ac_buses:
            if b.type in (SLACK, PV) and b.id not in gen_bus_set:
                raise DomainError(f"bus {b.id} is {b.type} but has no generator")
        for r in self.res_units:
            if r.bus not in bus_set:
                raise DomainError(f"res unit {r.id}: bus missing")
            if r.capacity < 0:
                raise DomainError(f"res unit {r.id}: capacity must be >= 0")
        # Whole electrical graph (AC + converters + DC) must be connected.
        nodes = {("ac", i) for i in bus_ids} | {("dc", i) for i in dc_ids}
        edges = [(("ac", br.from_bus), ("ac", br.to_bus))
                 for br in self.ac_branches if br.in_service]
        edges += [(("dc", br.from_bus), ("dc", br.to_bus)) for br in self.dc_branches]
        edges += [(("ac", c.ac_bus), ("dc", c.dc_bus)) for c in self.converters]
        if not _connected(nodes, edges):
            raise DisconnectedSystemError(
                f"system {self.name!r}: in-service network is not connected")
        if self.uncertainty is not None:
            res_ids = {r.id for r in self.res_units}
            for d in self.uncertainty.dims:
                kind, _, key = d.target.partition(":")
                if kind == "load":
                    if int(key) not in bus_set:
                        raise DomainError(f"dimension {d.name}: load bus {key} missing")
                elif kind == "res":
                    if key not in res_ids:
                        raise DomainError(f"dimension {d.name}: res unit {key} missing")
                elif kind == "branch":
                    if int(key) not in set(br_ids):
                        raise DomainError(f"dimension {d.name}: branch {key} missing")
                else:
                    raise DomainError(f"dimension {d.name}: bad target {d.target!r}")

    @property
    def slack_bus(self) -> AcBus:
        return next(b for b in self.ac_buses if b.type == SLACK)

    def generator(self, gen_id: str) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(f"no generator {gen_id!r}")

    def total_load(self) -> float:
        return sum(b.p_load for b in self.ac_buses)


def apply_scenario(sys: PowerSystem, xi) -> PowerSystem:
    """Realize one uncertainty vector: scale loads, set RES output, apply outages.

    Returns a new system; the input is never mutated. Raises
    DisconnectedSystemError if an outage splits the network.
    """
    if sys.uncertainty is None:
        raise DomainError("system declares no uncertainty mapping")
    xi = np.asarray(xi, dtype=float).ravel()
    if xi.shape != (sys.uncertainty.n_dims,):
        raise ShapeError(
            f"scenario has {xi.shape[0]} entries, model declares {sys.uncertainty.n_dims}")
    load_factor = {}
    res_factor = {}
    outages = set()
    for value, dim in zip(xi, sys.uncertainty.dims):
        kind, _, key = dim.target.partition(":")
        if kind == "load":
            load_factor[int(key)] = value
        elif kind == "res":
            res_factor[key] = min(max(value, 0.0), 1.0)
        else:
            if value >= 0.5:
                outages.add(int(key))
    buses = tuple(
        replace(b, p_load=b.p_load * load_factor[b.id], q_load=b.q_load * load_factor[b.id])
        if b.id in load_factor else b
        for b in sys.ac_buses
    )
    branches = tuple(
        replace(br, in_service=False) if br.id in outages else br
        for br in sys.ac_branches
    )
    res = tuple(
        replace(r, p_injection=r.capacity * res_factor[r.id]) if r.id in res_factor else r
        for r in sys.res_units
    )
    return replace(sys, ac_buses=buses, ac_branches=branches, res_units=res)


# --- case file I/O ---------------------------------------------------------

CASE_SCHEMA_VERSION = 1


def system_to_dict(sys: PowerSystem) -> dict:
    out = {
        "schema_version": CASE_SCHEMA_VERSION,
        "name": sys.name,
        "base_mva": sys.base_mva,
        "ac_buses": [vars(b) for b in sys.ac_buses],
        "ac_branches": [vars(b) for b in sys.ac_branches],
        "generators": [vars(g) for g in sys.generators],
        "dc_buses": [vars(b) for b in sys.dc_buses],
        "dc_branches": [vars(b) for b in sys.dc_branches],
        "converters": [vars(c) for c in sys.converters],
        "res_units": [vars(r) for r in sys.res_units],
    }
    if sys.uncertainty is not None:
        out["uncertainty"] = [
            {k: v for k, v in vars(d).items() if v is not None}
            for d in sys.uncertainty.dims
        ]
    return out


def system_from_dict(data: dict) -> PowerSystem:
    try:
        version = data["schema_version"]
        if version != CASE_SCHEMA_VERSION:
            raise ConfigError(f"unsupported case schema_version {version}")
        unc = None
        if "uncertainty" in data:
            unc = UncertaintyModel(tuple(UncertaintyDim(**d) for d in data["uncertainty"]))
        return PowerSystem(
            name=data["name"],
            base_mva=data["base_mva"],
            ac_buses=tuple(AcBus(**b) for b in data["ac_buses"]),
            ac_branches=tuple(AcBranch(**b) for b in data["ac_branches"]),
            generators=tuple(Generator(**g) for g in data["generators"]),
            dc_buses=tuple(DcBus(**b) for b in data.get("dc_buses", [])),
            dc_branches=tuple(DcBranch(**b) for b in data.get("dc_branches", [])),
            converters=tuple(Converter(**c) for c in data.get("converters", [])),
            res_units=tuple(ResUnit(**r) for r in data.get("res_units", [])),
            uncertainty=unc,
        )
    except KeyError as exc:
        raise ConfigError(f"case file missing key {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"case file field error: {exc}") from exc


def save_case(sys: PowerSystem, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(system_to_dict(sys), fh, indent=1)
        fh.write("\n")


def load_case(path) -> PowerSystem:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise DataFileError(f"case file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"case file {path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}") from exc
    return system_from_dict(data)


def builtin_case5() -> PowerSystem:
    """The bundled 5-bus hybrid AC/DC example case (see its JSON file for all numbers)."""
    ref = resources.files("kanopf.cases").joinpath("case5_acdc.json")
    with ref.open(encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))
