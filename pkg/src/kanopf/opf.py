"""Scenario-wise optimal power flow: the deterministic oracle behind the surrogate.

Minimizes total generation cost over the free decisions (non-slack generator
setpoints and P-controlled converter DC powers) with the network physics
enforced by nested Newton power flows. Inequality limits are handled by an
augmented-Lagrangian outer loop; each inner subproblem is solved by projected
gradient descent with an adaptive (Barzilai-Borwein) step on central
finite-difference gradients of the penalized objective.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .acdc import PowerSystem, apply_scenario
from .errors import ConfigError, DomainError, InfeasibleError
from .powerflow import (Dispatch, PfState, PfStructure, _gen_outputs, _solve_batch,
                        _violations_batch, newton_power_flow, constraint_violations)

_FAILED_EVAL = 1e12  # stands in for the objective when a power flow diverges


@dataclass
class OpfOptions:
    fd_step: float = 1e-6
    curvature_step: float = 1e-3  # coarser probe: second differences need headroom
    inner_tol: float = 2e-4       # projected-gradient infinity norm, $/p.u.
    max_inner: int = 120
    max_outer: int = 12
    rho0: float = 50.0
    rho_growth: float = 4.0
    rho_max: float = 1e7
    violation_tol: float = 1e-6
    tie_break: float = 1e-9       # tiny ordered load preference on exact cost ties


@dataclass
class OpfSolution:
    dispatch: Dispatch
    state: PfState
    objective: float
    violation_report: np.ndarray
    converged: bool
    iterations: int
    system: PowerSystem = field(repr=False, default=None)


class _Problem:
    """Decision-vector view of one applied system, with batched evaluation."""

    def __init__(self, sys: PowerSystem, options: OpfOptions):
        self.sys = sys
        self.opt = options
        self.st = PfStructure(sys)
        gens = sys.generators
        self.dec_gens = [g for g in range(len(gens)) if not self.st.gen_is_slack[g]]
        self.dec_convs = [k for k, c in enumerate(sys.converters) if not c.dc_slack]
        lb = [gens[g].p_min for g in self.dec_gens]
        ub = [gens[g].p_max for g in self.dec_gens]
        lb += [-sys.converters[k].p_max for k in self.dec_convs]
        ub += [sys.converters[k].p_max for k in self.dec_convs]
        self.lb, self.ub = np.array(lb), np.array(ub)
        self.ndec = len(lb)
        self.c0 = np.array([g.c0 for g in gens])
        self.c1 = np.array([g.c1 for g in gens])
        self.c2 = np.array([g.c2 for g in gens])
        self.tie_w = options.tie_break * np.arange(len(gens))
        self.n_gen = len(gens)
        self.n_conv = len(sys.converters)
        self.gen_v = np.ones(self.n_gen)

    def initial_point(self) -> np.ndarray:
        """Deterministic warm start: equal-marginal-cost split of the net load.

        Falls back to box midpoints for generators without quadratic cost.
        Converters start idle.
        """
        if not self.ndec:
            return np.zeros(0)
        gens = self.sys.generators
        net_load = (sum(b.p_load for b in self.sys.ac_buses)
                    - sum(r.p_injection for r in self.sys.res_units))
        split = {}
        if all(g.c2 > 0 for g in gens):
            inv = np.array([0.5 / g.c2 for g in gens])
            lam = (net_load + sum(g.c1 * 0.5 / g.c2 for g in gens)) / inv.sum()
            for g in gens:
                split[g.id] = np.clip((lam - g.c1) * 0.5 / g.c2, g.p_min, g.p_max)
        u0 = np.concatenate([
            [split.get(gens[g].id, 0.5 * (gens[g].p_min + gens[g].p_max))
             for g in self.dec_gens],
            np.zeros(len(self.dec_convs)),
        ])
        return np.clip(u0, self.lb, self.ub)

    def project(self, u):
        return np.clip(u, self.lb, self.ub)

    def full_dispatch(self, u_batch: np.ndarray):
        b = u_batch.shape[0]
        gen_p = np.zeros((b, self.n_gen))
        conv = np.zeros((b, self.n_conv))
        n_dg = len(self.dec_gens)
        for j, g in enumerate(self.dec_gens):
            gen_p[:, g] = u_batch[:, j]
        for j, k in enumerate(self.dec_convs):
            conv[:, k] = u_batch[:, n_dg + j]
        gen_v = np.broadcast_to(self.gen_v, (b, self.n_gen)).copy()
        return gen_p, gen_v, conv

    def evaluate(self, u_batch: np.ndarray):
        """Cost F, constraint values H, and success mask for a batch of decisions."""
        gen_p, gen_v, conv = self.full_dispatch(u_batch)
        arrays, ok, _ = _solve_batch(self.st, gen_p, gen_v, conv)
        p_g, _ = _gen_outputs(self.st, arrays, gen_p)
        cost = (self.c0[None, :] + self.c1[None, :] * p_g
                + self.c2[None, :] * p_g ** 2 + self.tie_w[None, :] * p_g).sum(axis=1)
        h = _violations_batch(self.st, arrays, gen_p)
        cost = np.where(ok, cost, _FAILED_EVAL)
        return cost, h, ok


def _penalty(h, mu, rho):
    """Powell-Hestenes-Rockafellar term for h <= 0 constraints."""
    t = np.maximum(0.0, mu + rho * h)
    return ((t * t).sum(axis=-1) - (mu * mu).sum()) / (2.0 * rho)


def _fd_batch(prob: _Problem, u, mu, rho, delta):
    """Penalized value at u and u +- delta*e_i in one batched power-flow call."""
    pts = np.empty((1 + 2 * prob.ndec, prob.ndec))
    pts[0] = u
    for i in range(prob.ndec):
        pts[1 + 2 * i] = u
        pts[1 + 2 * i, i] += delta
        pts[2 + 2 * i] = u
        pts[2 + 2 * i, i] -= delta
    cost, h, ok = prob.evaluate(pts)
    a_vals = np.where(ok, cost + _penalty(h, mu, rho), _FAILED_EVAL)
    grad = (a_vals[1::2] - a_vals[2::2]) / (2.0 * delta)
    return float(a_vals[0]), grad, a_vals


def _minimize_penalized(prob: _Problem, u0, mu, rho):
    """Projected gradient descent with adaptive steps on FD gradients.

    Steps are scaled by a per-coordinate curvature estimate (second
    differences from one coarse probe per call), which keeps the descent
    well conditioned when converter directions are much shallower than
    the generator-cost direction.
    """
    opt = prob.opt
    u = u0.copy()

    _, _, probe = _fd_batch(prob, u, mu, rho, opt.curvature_step)
    hdiag = (probe[1::2] - 2.0 * probe[0] + probe[2::2]) / opt.curvature_step ** 2
    floor = max(1e-6, 1e-3 * float(np.abs(hdiag).max())) if hdiag.size else 1.0
    hdiag = np.maximum(hdiag, floor)

    f, g, _ = _fd_batch(prob, u, mu, rho, opt.fd_step)
    evals = 2
    history = [f]
    best = f
    since_improved = 0
    alpha = 1.0
    rejects = 0
    for _ in range(opt.max_inner):
        if np.abs(u - prob.project(u - g)).max() <= opt.inner_tol:
            break
        cand = prob.project(u - alpha * g / hdiag)
        step_size = np.abs(cand - u).max()
        if step_size <= 1e-10:
            break  # step collapsed onto the box or below resolution
        f_cand, g_cand, _ = _fd_batch(prob, cand, mu, rho, opt.fd_step)
        evals += 1
        f_ref = max(history[-6:])
        if f_cand <= f_ref - 1e-12 * max(1.0, abs(f_ref)):
            u, f, g = cand, f_cand, g_cand
            history.append(f)
            alpha = min(alpha * 1.3, 4.0)
            rejects = 0
            if f < best - 1e-9 * max(1.0, abs(best)):
                best = f
                since_improved = 0
            else:
                since_improved += 1
            if step_size <= 1e-7 or since_improved >= 10:
                break  # churning at the finite-difference noise floor
        else:
            alpha = max(alpha * 0.35, 1e-8)
            rejects += 1
            if rejects >= 8:
                break
    return u, evals


def solve_opf(sys: PowerSystem, xi=None, options: OpfOptions = None) -> OpfSolution:
    """Solve the OPF for one scenario; deterministic given (system, scenario).

    Raises InfeasibleError when the augmented-Lagrangian rounds cannot drive
    the worst violation below tolerance, and propagates power-flow errors.
    """
    options = options or OpfOptions()
    applied = apply_scenario(sys, xi) if xi is not None else sys
    prob = _Problem(applied, options)
    u = prob.initial_point()
    mu = None
    rho = options.rho0
    total_evals = 0
    converged = False
    prev_viol = np.inf
    for _round in range(options.max_outer):
        if mu is None:
            cost, h, ok = prob.evaluate(u[None, :])
            if not ok[0]:
                from .errors import PowerFlowDivergedError
                raise PowerFlowDivergedError("power flow failed at the initial dispatch")
            mu = np.zeros(h.shape[1])
        if prob.ndec:
            u, evals = _minimize_penalized(prob, u, mu, rho)
            total_evals += evals
        cost, h, ok = prob.evaluate(u[None, :])
        viol = float(np.maximum(h[0], 0.0).max()) if h.size else 0.0
        if ok[0] and viol <= options.violation_tol:
            converged = True
            break
        mu = np.maximum(0.0, mu + rho * h[0])
        if viol > 0.25 * prev_viol:
            rho = min(rho * options.rho_growth, options.rho_max)
        prev_viol = viol
    if not converged:
        raise InfeasibleError(
            f"OPF failed to reach feasibility (worst violation {prev_viol:.3e})",
            worst_violation=prev_viol)

    gen_p, gen_v, conv = prob.full_dispatch(u[None, :])
    dispatch = Dispatch(gen_p=gen_p[0], gen_v=gen_v[0], conv_p_dc=conv[0])
    state = newton_power_flow(applied, dispatch)
    from .powerflow import realized_generator_outputs
    p_g, _ = realized_generator_outputs(applied, state, dispatch)
    objective = float((prob.c0 + prob.c1 * p_g + prob.c2 * p_g ** 2).sum())
    h_final = constraint_violations(applied, state, dispatch)
    return OpfSolution(
        dispatch=dispatch, state=state, objective=objective,
        violation_report=h_final, converged=True, iterations=total_evals,
        system=applied,
    )


@dataclass(frozen=True)
class OutputSpec:
    """Ordered output selectors defining the oracle's response vector.

    Selectors: "objective", "pg:<gen id>" (realized active power),
    "vm:<ac bus id>", "flow:<ac branch id>" (from-end apparent power),
    "conv:<converter id>" (DC-side power).
    """

    selectors: tuple

    def __post_init__(self):
        object.__setattr__(self, "selectors", tuple(self.selectors))
        if not self.selectors:
            raise ConfigError("output spec must name at least one output")

    @property
    def names(self):
        return list(self.selectors)

    def __len__(self):
        return len(self.selectors)

    def fingerprint(self) -> str:
        payload = json.dumps(list(self.selectors))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def validate(self, sys: PowerSystem):
        gen_ids = {g.id for g in sys.generators}
        bus_ids = {b.id for b in sys.ac_buses}
        branch_ids = {b.id for b in sys.ac_branches}
        conv_ids = {c.id for c in sys.converters}
        for sel in self.selectors:
            kind, _, key = sel.partition(":")
            ok = (sel == "objective"
                  or (kind == "pg" and key in gen_ids)
                  or (kind == "vm" and key.isdigit() and int(key) in bus_ids)
                  or (kind == "flow" and key.isdigit() and int(key) in branch_ids)
                  or (kind == "conv" and key in conv_ids))
            if not ok:
                raise ConfigError(f"output selector {sel!r} does not resolve on "
                                  f"system {sys.name!r}")


def extract_outputs(sol: OpfSolution, spec: OutputSpec) -> np.ndarray:
    """Response vector Y ordered exactly as the spec lists its selectors."""
    if not sol.converged:
        raise DomainError("cannot extract outputs from a non-converged solution")
    sys = sol.system
    spec.validate(sys)
    from .powerflow import realized_generator_outputs
    p_g, _ = realized_generator_outputs(sys, sol.state, sol.dispatch)
    gen_pos = {g.id: i for i, g in enumerate(sys.generators)}
    bus_pos = {b.id: i for i, b in enumerate(sys.ac_buses)}
    branch_pos = {b.id: i for i, b in enumerate(sys.ac_branches)}
    conv_pos = {c.id: i for i, c in enumerate(sys.converters)}
    out = np.empty(len(spec.selectors))
    for n, sel in enumerate(spec.selectors):
        kind, _, key = sel.partition(":")
        if sel == "objective":
            out[n] = sol.objective
        elif kind == "pg":
            out[n] = p_g[gen_pos[key]]
        elif kind == "vm":
            out[n] = sol.state.vm[bus_pos[int(key)]]
        elif kind == "flow":
            i = branch_pos[int(key)]
            out[n] = float(np.hypot(sol.state.branch_p_from[i], sol.state.branch_q_from[i]))
        else:  # conv
            out[n] = sol.state.conv_p_dc[conv_pos[key]]
    return out
