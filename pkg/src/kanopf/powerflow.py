"""Newton-Raphson power flow for the hybrid AC/DC model.

The solve is staged: the DC network is solved first (P-controlled converter
injections are independent of the AC state), converter AC-side powers follow
from the loss coupling in closed form, and the AC network is then solved by a
full Newton with an analytic polar Jacobian from a flat start.

Internals are batched: `_solve_batch` carries a leading batch axis over
dispatches of the same system so that finite-difference callers amortize the
per-call overhead. Converged members stop updating, so batch results match
one-at-a-time solves bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acdc import PQ, PV, SLACK, PowerSystem
from .errors import (DisconnectedSystemError, DomainError, NumericError,
                     PowerFlowDivergedError, ShapeError, SingularJacobianError)

AC_TOL = 1e-11
DC_TOL = 1e-12
MAX_ITER = 50


@dataclass
class Dispatch:
    """Controllable setpoints: generator P, generator bus voltage, converter DC power.

    Entries follow the system's generator/converter order. The slack
    generator's P entry and the DC-slack converter's power entry are ignored
    (both are outcomes of the solve).
    """

    gen_p: np.ndarray
    gen_v: np.ndarray
    conv_p_dc: np.ndarray

    def __post_init__(self):
        self.gen_p = np.atleast_1d(np.asarray(self.gen_p, dtype=float))
        self.gen_v = np.atleast_1d(np.asarray(self.gen_v, dtype=float))
        self.conv_p_dc = np.atleast_1d(np.asarray(self.conv_p_dc, dtype=float))
        if not (np.all(np.isfinite(self.gen_p)) and np.all(np.isfinite(self.gen_v))
                and np.all(np.isfinite(self.conv_p_dc))):
            raise DomainError("dispatch must be finite")


def nominal_dispatch(sys: PowerSystem) -> Dispatch:
    """Box midpoints for generator P, 1.0 voltage setpoints, idle converters."""
    gen_p = np.array([(g.p_min + g.p_max) / 2.0 for g in sys.generators])
    gen_v = np.ones(len(sys.generators))
    conv = np.zeros(len(sys.converters))
    return Dispatch(gen_p, gen_v, conv)


@dataclass
class PfState:
    """Solved electrical state; all quantities per-unit, angles in radians."""

    vm: np.ndarray
    va: np.ndarray
    v_dc: np.ndarray
    conv_p_ac: np.ndarray
    conv_p_dc: np.ndarray
    branch_p_from: np.ndarray
    branch_q_from: np.ndarray
    branch_p_to: np.ndarray
    branch_q_to: np.ndarray
    dc_branch_p_from: np.ndarray
    iterations: int


class PfStructure:
    """Index maps and admittance data precomputed from one (applied) system."""

    def __init__(self, sys: PowerSystem):
        self.sys = sys
        self.bus_ids = [b.id for b in sys.ac_buses]
        self.bus_idx = {bid: i for i, bid in enumerate(self.bus_ids)}
        self.n_bus = len(self.bus_ids)
        types = [b.type for b in sys.ac_buses]
        self.slack = types.index(SLACK)
        self.pv = np.array([i for i, t in enumerate(types) if t == PV], dtype=int)
        self.pq = np.array([i for i, t in enumerate(types) if t == PQ], dtype=int)
        self.pvpq = np.sort(np.concatenate([self.pv, self.pq])).astype(int)
        self.p_load = np.array([b.p_load for b in sys.ac_buses])
        self.q_load = np.array([b.q_load for b in sys.ac_buses])
        self.v_min = np.array([b.v_min for b in sys.ac_buses])
        self.v_max = np.array([b.v_max for b in sys.ac_buses])

        in_service = [br for br in sys.ac_branches if br.in_service]
        self._check_ac_connected(in_service)
        self.br_f = np.array([self.bus_idx[br.from_bus] for br in in_service], dtype=int)
        self.br_t = np.array([self.bus_idx[br.to_bus] for br in in_service], dtype=int)
        self.br_ys = np.array([1.0 / complex(br.r, br.x) for br in in_service])
        self.br_rows = np.array(
            [i for i, br in enumerate(sys.ac_branches) if br.in_service], dtype=int)
        self.n_branch_total = len(sys.ac_branches)
        self.s_max = np.array([br.s_max for br in sys.ac_branches])

        ybus = np.zeros((self.n_bus, self.n_bus), dtype=complex)
        for f, t, ys in zip(self.br_f, self.br_t, self.br_ys):
            ybus[f, f] += ys
            ybus[t, t] += ys
            ybus[f, t] -= ys
            ybus[t, f] -= ys
        self.ybus = ybus

        self.res_p = np.zeros(self.n_bus)
        for r in sys.res_units:
            self.res_p[self.bus_idx[r.bus]] += r.p_injection

        self.gen_bus = np.array([self.bus_idx[g.bus] for g in sys.generators], dtype=int)
        self.gen_is_slack = np.array(
            [self.bus_idx[g.bus] == self.slack for g in sys.generators])

        # DC side
        self.dc_ids = [b.id for b in sys.dc_buses]
        self.dc_idx = {bid: i for i, bid in enumerate(self.dc_ids)}
        self.n_dc = len(self.dc_ids)
        self.conv_ac = np.array([self.bus_idx[c.ac_bus] for c in sys.converters], dtype=int)
        self.conv_dc = np.array([self.dc_idx[c.dc_bus] for c in sys.converters], dtype=int)
        self.loss_a = np.array([c.loss_a for c in sys.converters])
        self.loss_b = np.array([c.loss_b for c in sys.converters])
        self.loss_c = np.array([c.loss_c for c in sys.converters])
        self.conv_p_max = np.array([c.p_max for c in sys.converters])
        slack_convs = [k for k, c in enumerate(sys.converters) if c.dc_slack]
        self.dc_slack_conv = slack_convs[0] if slack_convs else -1
        if self.n_dc:
            self.dc_slack_bus = self.conv_dc[self.dc_slack_conv]
            lap = np.zeros((self.n_dc, self.n_dc))
            self.dcbr_f = np.array([self.dc_idx[b.from_bus] for b in sys.dc_branches], dtype=int)
            self.dcbr_t = np.array([self.dc_idx[b.to_bus] for b in sys.dc_branches], dtype=int)
            self.dcbr_g = np.array([1.0 / b.r for b in sys.dc_branches])
            self.dcbr_p_max = np.array([b.p_max for b in sys.dc_branches])
            for f, t, g in zip(self.dcbr_f, self.dcbr_t, self.dcbr_g):
                lap[f, f] += g
                lap[t, t] += g
                lap[f, t] -= g
                lap[t, f] -= g
            self.dc_lap = lap
            self.dc_free = np.array(
                [i for i in range(self.n_dc) if i != self.dc_slack_bus], dtype=int)
            self.dc_v_min = np.array([b.v_min for b in sys.dc_buses])
            self.dc_v_max = np.array([b.v_max for b in sys.dc_buses])
        else:
            self.dcbr_f = self.dcbr_t = self.dcbr_g = np.array([], dtype=int)
            self.dcbr_p_max = np.array([])
            self.dc_v_min = self.dc_v_max = np.array([])

    def _check_ac_connected(self, branches):
        seen = {self.bus_ids[self.slack]}
        edges = [(br.from_bus, br.to_bus) for br in branches]
        grew = True
        while grew:
            grew = False
            for a, b in edges:
                if (a in seen) != (b in seen):
                    seen.update((a, b))
                    grew = True
        if len(seen) != self.n_bus:
            missing = sorted(set(self.bus_ids) - seen)
            raise DisconnectedSystemError(
                f"AC buses {missing} are disconnected from the slack")

    def check_dispatch(self, d: Dispatch):
        n_gen, n_conv = len(self.sys.generators), len(self.sys.converters)
        if d.gen_p.shape[-1] != n_gen or d.gen_v.shape[-1] != n_gen:
            raise ShapeError(f"dispatch needs {n_gen} generator entries")
        if d.conv_p_dc.shape[-1] != n_conv:
            raise ShapeError(f"dispatch needs {n_conv} converter entries")


def _solve_dc(st: PfStructure, conv_p_dc: np.ndarray):
    """DC network solve; returns (v_dc, full conv injections incl. slack, iters)."""
    b = conv_p_dc.shape[0]
    if st.n_dc == 0:
        return np.zeros((b, 0)), np.zeros((b, 0)), 0
    p_inj = np.zeros((b, st.n_dc))
    for k in range(conv_p_dc.shape[1]):
        if k != st.dc_slack_conv:
            p_inj[:, st.conv_dc[k]] += conv_p_dc[:, k]
    v = np.ones((b, st.n_dc))
    free = st.dc_free
    iters = 0
    active = np.ones(b, dtype=bool)
    while True:
        lv = v @ st.dc_lap.T
        mis = p_inj[:, free] - v[:, free] * lv[:, free]
        err = np.abs(mis).max(axis=1) if free.size else np.zeros(b)
        active = active & (err > DC_TOL)
        if not active.any() or free.size == 0:
            break
        if iters >= MAX_ITER:
            raise PowerFlowDivergedError("DC power flow did not converge", iterations=iters)
        jac = -(v[:, free, None] * st.dc_lap[None, free][:, :, free])
        jac[:, np.arange(free.size), np.arange(free.size)] -= lv[:, free]
        try:
            delta = np.linalg.solve(jac[active], -mis[active][..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError("singular DC Jacobian") from exc
        vnew = v.copy()
        vnew[np.ix_(active, free)] += delta
        v = vnew
        iters += 1
    lv = v @ st.dc_lap.T
    conv_full = conv_p_dc.copy()
    if st.dc_slack_conv >= 0:
        other = p_inj[:, st.dc_slack_bus]
        conv_full[:, st.dc_slack_conv] = v[:, st.dc_slack_bus] * lv[:, st.dc_slack_bus] - other
    return v, conv_full, iters


def converter_ac_power(p_dc, loss_a, loss_b, loss_c):
    """Solve p_ac + loss(p_ac) + p_dc = 0 for p_ac (vectorized closed form)."""
    p_dc = np.asarray(p_dc, dtype=float)
    c_term = loss_a + p_dc
    positive = c_term <= 0.0
    b_term = np.where(positive, 1.0 + loss_b, 1.0 - loss_b)
    disc = b_term ** 2 - 4.0 * loss_c * c_term
    if np.any(disc < 0):
        raise PowerFlowDivergedError("converter loss coupling has no real solution")
    return -2.0 * c_term / (b_term + np.sqrt(disc))


def _solve_batch(st: PfStructure, gen_p, gen_v, conv_p_dc):
    """Batched staged solve. Returns (state arrays dict, ok mask, iterations)."""
    b = gen_p.shape[0]
    v_dc, conv_p_dc_full, dc_iters = _solve_dc(st, conv_p_dc)
    conv_p_ac = (converter_ac_power(conv_p_dc_full, st.loss_a, st.loss_b, st.loss_c)
                 if len(st.sys.converters) else np.zeros((b, 0)))

    p_spec = np.broadcast_to(st.res_p - st.p_load, (b, st.n_bus)).copy()
    for k in range(conv_p_ac.shape[1]):
        p_spec[:, st.conv_ac[k]] += conv_p_ac[:, k]
    for g in range(gen_p.shape[1]):
        if not st.gen_is_slack[g]:
            p_spec[:, st.gen_bus[g]] += gen_p[:, g]
    q_spec = np.broadcast_to(-st.q_load, (b, st.n_bus)).copy()

    vm = np.ones((b, st.n_bus))
    for g in range(gen_v.shape[1]):
        vm[:, st.gen_bus[g]] = gen_v[:, g]
    va = np.zeros((b, st.n_bus))

    pvpq, pq = st.pvpq, st.pq
    npvpq, npq = pvpq.size, pq.size
    m = npvpq + npq
    active = np.ones(b, dtype=bool)
    ok = np.ones(b, dtype=bool)
    iters = 0
    ar = np.arange(st.n_bus)
    while m:
        v = vm * np.exp(1j * va)
        ibus = v @ st.ybus.T
        s = v * np.conj(ibus)
        mis = np.concatenate(
            [s.real[:, pvpq] - p_spec[:, pvpq], s.imag[:, pq] - q_spec[:, pq]], axis=1)
        err = np.abs(mis).max(axis=1)
        active &= err > AC_TOL
        if not active.any():
            break
        if iters >= MAX_ITER:
            ok &= ~active
            break
        cyv = np.conj(st.ybus[None, :, :] * v[:, None, :])
        ds_dva = -cyv
        ds_dva[:, ar, ar] += np.conj(ibus)
        ds_dva = 1j * v[:, :, None] * ds_dva
        vnorm = v / np.abs(v)
        ds_dvm = v[:, :, None] * np.conj(st.ybus[None, :, :] * vnorm[:, None, :])
        ds_dvm[:, ar, ar] += np.conj(ibus) * vnorm
        jac = np.empty((b, m, m))
        jac[:, :npvpq, :npvpq] = ds_dva[:, pvpq][:, :, pvpq].real
        jac[:, :npvpq, npvpq:] = ds_dvm[:, pvpq][:, :, pq].real
        jac[:, npvpq:, :npvpq] = ds_dva[:, pq][:, :, pvpq].imag
        jac[:, npvpq:, npvpq:] = ds_dvm[:, pq][:, :, pq].imag
        try:
            delta = np.linalg.solve(jac[active], -mis[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            # Isolate the singular members instead of failing the whole batch.
            delta_rows = []
            for row in np.flatnonzero(active):
                try:
                    delta_rows.append(np.linalg.solve(jac[row], -mis[row]))
                except np.linalg.LinAlgError:
                    delta_rows.append(None)
            for row, d in zip(np.flatnonzero(active), delta_rows):
                if d is None:
                    ok[row] = False
                    active[row] = False
                else:
                    va[row, pvpq] += d[:npvpq]
                    vm[row, pq] += d[npvpq:]
            iters += 1
            continue
        va[np.ix_(active, pvpq)] += delta[:, :npvpq]
        vm[np.ix_(active, pq)] += delta[:, npvpq:]
        iters += 1

    v = vm * np.exp(1j * va)
    vf, vt = v[:, st.br_f], v[:, st.br_t]
    sf = vf * np.conj((vf - vt) * st.br_ys[None, :])
    st_flow = vt * np.conj((vt - vf) * st.br_ys[None, :])
    p_from = np.zeros((b, st.n_branch_total))
    q_from = np.zeros((b, st.n_branch_total))
    p_to = np.zeros((b, st.n_branch_total))
    q_to = np.zeros((b, st.n_branch_total))
    p_from[:, st.br_rows] = sf.real
    q_from[:, st.br_rows] = sf.imag
    p_to[:, st.br_rows] = st_flow.real
    q_to[:, st.br_rows] = st_flow.imag
    if st.n_dc:
        dc_flow = v_dc[:, st.dcbr_f] * (v_dc[:, st.dcbr_f] - v_dc[:, st.dcbr_t]) * st.dcbr_g
    else:
        dc_flow = np.zeros((b, 0))
    s_calc = v * np.conj(v @ st.ybus.T)
    arrays = {
        "vm": vm, "va": va, "v_dc": v_dc,
        "conv_p_ac": conv_p_ac, "conv_p_dc": conv_p_dc_full,
        "p_from": p_from, "q_from": q_from, "p_to": p_to, "q_to": q_to,
        "dc_flow": dc_flow, "s_calc": s_calc,
    }
    return arrays, ok, iters + dc_iters


def _gen_outputs(st: PfStructure, arrays, gen_p):
    """Realized generator P and Q from the solved state (B, n_gen)."""
    s_calc = arrays["s_calc"]
    conv_inj = np.zeros_like(s_calc.real)
    for k in range(arrays["conv_p_ac"].shape[1]):
        conv_inj[:, st.conv_ac[k]] += arrays["conv_p_ac"][:, k]
    p_g = gen_p.copy()
    for g in range(gen_p.shape[1]):
        bus = st.gen_bus[g]
        if st.gen_is_slack[g]:
            p_g[:, g] = s_calc.real[:, bus] + st.p_load[bus] - st.res_p[bus] - conv_inj[:, bus]
    q_g = s_calc.imag[:, st.gen_bus] + st.q_load[None, st.gen_bus]
    return p_g, q_g


def newton_power_flow(sys: PowerSystem, dispatch: Dispatch) -> PfState:
    """Flat-start Newton solve; raises on divergence or a singular Jacobian.

    The returned state is re-checked against `pf_residuals` (infinity norm
    <= 1e-8) before being handed back.
    """
    st = PfStructure(sys)
    st.check_dispatch(dispatch)
    arrays, ok, iters = _solve_batch(
        st, dispatch.gen_p[None, :], dispatch.gen_v[None, :], dispatch.conv_p_dc[None, :])
    if not ok[0]:
        raise PowerFlowDivergedError(
            f"power flow did not converge within {MAX_ITER} iterations", iterations=iters)
    state = PfState(
        vm=arrays["vm"][0], va=arrays["va"][0], v_dc=arrays["v_dc"][0],
        conv_p_ac=arrays["conv_p_ac"][0], conv_p_dc=arrays["conv_p_dc"][0],
        branch_p_from=arrays["p_from"][0], branch_q_from=arrays["q_from"][0],
        branch_p_to=arrays["p_to"][0], branch_q_to=arrays["q_to"][0],
        dc_branch_p_from=arrays["dc_flow"][0], iterations=iters,
    )
    resid = pf_residuals(sys, dispatch, state)
    if np.abs(resid).max() > 1e-8:
        raise NumericError(
            f"solved state failed the residual check ({np.abs(resid).max():.2e})")
    return state


def pf_residuals(sys: PowerSystem, dispatch: Dispatch, state: PfState) -> np.ndarray:
    """Unified residual vector, zero iff the state solves the network.

    Order: AC active balance at non-slack buses, AC reactive balance at PQ
    buses, DC bus balance, converter coupling p_ac + loss(p_ac) + p_dc.
    """
    st = PfStructure(sys)
    st.check_dispatch(dispatch)
    vm = np.asarray(state.vm, dtype=float)
    va = np.asarray(state.va, dtype=float)
    if vm.shape != (st.n_bus,) or va.shape != (st.n_bus,):
        raise ShapeError("state voltage arrays do not match the bus count")
    v = vm * np.exp(1j * va)
    s_calc = v * np.conj(st.ybus @ v)
    conv_p_ac = np.asarray(state.conv_p_ac, dtype=float)
    conv_p_dc = np.asarray(state.conv_p_dc, dtype=float)
    p_spec = st.res_p - st.p_load
    p_spec = p_spec.copy()
    for k in range(conv_p_ac.size):
        p_spec[st.conv_ac[k]] += conv_p_ac[k]
    for g, gen in enumerate(sys.generators):
        if not st.gen_is_slack[g]:
            p_spec[st.gen_bus[g]] += dispatch.gen_p[g]
    q_spec = -st.q_load
    res = [p_spec[st.pvpq] - s_calc.real[st.pvpq], q_spec[st.pq] - s_calc.imag[st.pq]]
    if st.n_dc:
        v_dc = np.asarray(state.v_dc, dtype=float)
        p_inj = np.zeros(st.n_dc)
        for k in range(conv_p_dc.size):
            p_inj[st.conv_dc[k]] += conv_p_dc[k]
        res.append(p_inj - v_dc * (st.dc_lap @ v_dc))
    if len(sys.converters):
        loss = st.loss_a + st.loss_b * np.abs(conv_p_ac) + st.loss_c * conv_p_ac ** 2
        res.append(conv_p_ac + conv_p_dc + loss)
    return np.concatenate(res) if res else np.zeros(0)


def _violations_batch(st: PfStructure, arrays, gen_p):
    """Constraint values h (positive = violated), batched; fixed layout."""
    p_g, q_g = _gen_outputs(st, arrays, gen_p)
    vm = arrays["vm"]
    parts = [vm - st.v_max[None, :], st.v_min[None, :] - vm]
    s_from = np.hypot(arrays["p_from"], arrays["q_from"])
    s_to = np.hypot(arrays["p_to"], arrays["q_to"])
    parts.append(np.maximum(s_from, s_to) - st.s_max[None, :])
    gens = st.sys.generators
    p_min = np.array([g.p_min for g in gens])
    p_max = np.array([g.p_max for g in gens])
    q_min = np.array([g.q_min for g in gens])
    q_max = np.array([g.q_max for g in gens])
    parts += [p_g - p_max[None, :], p_min[None, :] - p_g,
              q_g - q_max[None, :], q_min[None, :] - q_g]
    if len(st.sys.converters):
        parts.append(np.abs(arrays["conv_p_ac"]) - st.conv_p_max[None, :])
        parts.append(np.abs(arrays["conv_p_dc"]) - st.conv_p_max[None, :])
    if st.n_dc:
        v_dc = arrays["v_dc"]
        parts += [v_dc - st.dc_v_max[None, :], st.dc_v_min[None, :] - v_dc]
        parts.append(np.abs(arrays["dc_flow"]) - st.dcbr_p_max[None, :])
    return np.concatenate(parts, axis=1)


def violation_labels(sys: PowerSystem):
    """Names aligned with the constraint_violations vector."""
    labels = [f"v_max:bus{b.id}" for b in sys.ac_buses]
    labels += [f"v_min:bus{b.id}" for b in sys.ac_buses]
    labels += [f"s_max:branch{br.id}" for br in sys.ac_branches]
    for tag in ("p_max", "p_min", "q_max", "q_min"):
        labels += [f"{tag}:gen{g.id}" for g in sys.generators]
    if sys.converters:
        labels += [f"p_ac_max:conv{c.id}" for c in sys.converters]
        labels += [f"p_dc_max:conv{c.id}" for c in sys.converters]
    if sys.dc_buses:
        labels += [f"v_max:dcbus{b.id}" for b in sys.dc_buses]
        labels += [f"v_min:dcbus{b.id}" for b in sys.dc_buses]
        labels += [f"p_max:dcbranch{b.id}" for b in sys.dc_branches]
    return labels


def constraint_violations(sys: PowerSystem, state: PfState, dispatch: Dispatch) -> np.ndarray:
    """Inequality constraint values for a solved state (positive = violated)."""
    st = PfStructure(sys)
    st.check_dispatch(dispatch)
    arrays = {
        "vm": state.vm[None, :], "va": state.va[None, :], "v_dc": state.v_dc[None, :],
        "conv_p_ac": state.conv_p_ac[None, :], "conv_p_dc": state.conv_p_dc[None, :],
        "p_from": state.branch_p_from[None, :], "q_from": state.branch_q_from[None, :],
        "p_to": state.branch_p_to[None, :], "q_to": state.branch_q_to[None, :],
        "dc_flow": state.dc_branch_p_from[None, :],
    }
    v = state.vm * np.exp(1j * state.va)
    arrays["s_calc"] = (v * np.conj(st.ybus @ v))[None, :]
    return _violations_batch(st, arrays, np.asarray(dispatch.gen_p, dtype=float)[None, :])[0]


def realized_generator_outputs(sys: PowerSystem, state: PfState, dispatch: Dispatch):
    """(P, Q) per generator with the slack generator's P taken from the solve."""
    st = PfStructure(sys)
    v = state.vm * np.exp(1j * state.va)
    arrays = {"s_calc": (v * np.conj(st.ybus @ v))[None, :],
              "conv_p_ac": state.conv_p_ac[None, :]}
    p_g, q_g = _gen_outputs(st, arrays, np.asarray(dispatch.gen_p, dtype=float)[None, :])
    return p_g[0], q_g[0]
