"""Nonlinear transient circuit solver based on modified nodal analysis.

Unknowns are the non-ground node voltages followed by one branch current per
voltage source.  Each Newton iteration assembles the KCL residual (current
leaving every node through its elements) together with the source constraint
rows, then solves the linearized system.  Time integration uses capacitor
companion models (backward Euler or trapezoidal) with step-doubling error
control on the capacitor terminal voltages.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np

from . import ofet
from .errors import ConfigurationError, ConvergenceError, InvalidInputError
from .ofet import HysteresisState, OfetParams

GROUND_NAMES = ("0", "gnd", "GND")


class Method(str, Enum):
    BACKWARD_EULER = "BackwardEuler"
    TRAPEZOIDAL = "Trapezoidal"

    @property
    def order(self) -> int:
        return 1 if self is Method.BACKWARD_EULER else 2


@dataclass(frozen=True)
class StepWaveform:
    """``v0`` before ``t0`` and ``v1`` from ``t0`` on (right-continuous)."""

    v1: float
    v0: float = 0.0
    t0: float = 0.0

    def value_at(self, t: float, left: bool = False) -> float:
        if t > self.t0 or (t == self.t0 and not left):
            return self.v1
        return self.v0

    def breakpoints(self) -> list[float]:
        return [self.t0]


Waveform = Union[float, StepWaveform, Callable[[float], float], object]


def waveform_value(wf, t: float, left: bool = False) -> float:
    if isinstance(wf, (int, float)):
        return float(wf)
    if hasattr(wf, "value_at"):
        return float(wf.value_at(t, left=left))
    return float(wf(t))


def waveform_breakpoints(wf) -> list[float]:
    bp = getattr(wf, "breakpoints", None)
    return list(bp()) if callable(bp) else []


# --- elements -------------------------------------------------------------


@dataclass(frozen=True)
class Transistor:
    name: str
    params: OfetParams
    gate: str
    drain: str
    source: str
    hysteresis: HysteresisState = ofet.NO_HYSTERESIS


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    capacitance: float


@dataclass(frozen=True)
class Resistor:
    name: str
    a: str
    b: str
    resistance: float


@dataclass(frozen=True)
class VoltageSource:
    name: str
    pos: str
    neg: str
    waveform: Waveform


@dataclass(frozen=True)
class CurrentSource:
    """Drives ``current`` from node ``a`` through the source into node ``b``."""

    name: str
    a: str
    b: str
    current: Waveform


@dataclass(frozen=True)
class CurrentProbe:
    """Reports the current flowing out of ``terminal`` of ``element`` into its node."""

    name: str
    element: str
    terminal: str = "drain"


Element = Union[Transistor, Capacitor, Resistor, VoltageSource, CurrentSource, CurrentProbe]


def _terminals(el) -> dict[str, str]:
    if isinstance(el, Transistor):
        return {"gate": el.gate, "drain": el.drain, "source": el.source}
    if isinstance(el, (Capacitor, Resistor)):
        return {"a": el.a, "b": el.b}
    if isinstance(el, VoltageSource):
        return {"pos": el.pos, "neg": el.neg}
    if isinstance(el, CurrentSource):
        return {"a": el.a, "b": el.b}
    return {}


class Netlist:
    """Immutable, validated circuit description."""

    def __init__(self, nodes: Sequence[str], elements: Sequence[Element], ground: str = "0"):
        nodes = list(nodes)
        if ground not in nodes:
            nodes.insert(0, ground)
        grounds = [n for n in nodes if n in GROUND_NAMES]
        if len(grounds) != 1 or grounds[0] != ground:
            raise ConfigurationError("netlist needs exactly one ground node")
        if len(set(nodes)) != len(nodes):
            raise ConfigurationError("duplicate node names")
        names = [e.name for e in elements]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate element names")
        self.ground = ground
        self.nodes = tuple(nodes)
        self.elements = tuple(elements)
        self.unknown_nodes = tuple(n for n in nodes if n != ground)
        self.index = {n: i for i, n in enumerate(self.unknown_nodes)}
        self.index[ground] = -1
        by_name = {e.name: e for e in elements}
        incident = {n: 0 for n in self.unknown_nodes}
        for el in elements:
            for term, node in _terminals(el).items():
                if node not in self.index:
                    raise ConfigurationError(f"{el.name}.{term} references unknown node {node!r}")
                if node != ground:
                    incident[node] += 1
            if isinstance(el, Capacitor) and not (el.capacitance > 0 and math.isfinite(el.capacitance)):
                raise ConfigurationError(f"capacitor {el.name} must have capacitance > 0")
            if isinstance(el, Resistor) and not (el.resistance > 0 and math.isfinite(el.resistance)):
                raise ConfigurationError(f"resistor {el.name} must have resistance > 0")
            if isinstance(el, CurrentProbe):
                target = by_name.get(el.element)
                if target is None or isinstance(target, CurrentProbe):
                    raise ConfigurationError(f"probe {el.name} references unknown element {el.element!r}")
                if el.terminal not in _terminals(target):
                    raise ConfigurationError(f"probe {el.name}: {el.element} has no terminal {el.terminal!r}")
        dangling = [n for n, c in incident.items() if c == 0]
        if dangling:
            raise ConfigurationError(f"nodes with no incident element: {dangling}")
        self.transistors = tuple(e for e in elements if isinstance(e, Transistor))
        self.capacitors = tuple(e for e in elements if isinstance(e, Capacitor))
        self.resistors = tuple(e for e in elements if isinstance(e, Resistor))
        self.vsources = tuple(e for e in elements if isinstance(e, VoltageSource))
        self.isources = tuple(e for e in elements if isinstance(e, CurrentSource))
        self.probes = tuple(e for e in elements if isinstance(e, CurrentProbe))
        self.by_name = by_name

    @property
    def size(self) -> int:
        return len(self.unknown_nodes) + len(self.vsources)

    def element(self, name: str):
        return self.by_name[name]

    def breakpoints(self) -> list[float]:
        pts = set()
        for src in (*self.vsources, *self.isources):
            wf = src.waveform if isinstance(src, VoltageSource) else src.current
            pts.update(waveform_breakpoints(wf))
        return sorted(pts)

    def count(self, kind) -> int:
        return sum(isinstance(e, kind) for e in self.elements)


# --- state and configuration ---------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.TRAPEZOIDAL
    dt_initial: float = 1e-4
    dt_min: float = 1e-9
    dt_max: float = 1e-2
    newton_abs_tol: float = 1e-12
    newton_rel_tol: float = 1e-6
    max_newton_iters: int = 50
    voltage_step_limit: float = 0.5
    lte_tol: float = 1e-4
    lte_control: bool = True
    vntol: float = 1e-6
    dc_gmin: float = 1e-15

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not (0 < self.dt_min <= self.dt_initial <= self.dt_max):
            raise ConfigurationError("need 0 < dt_min <= dt_initial <= dt_max")
        for name in ("newton_abs_tol", "newton_rel_tol", "voltage_step_limit", "lte_tol", "vntol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"SolverConfig.{name} must be > 0")
        if self.max_newton_iters < 1:
            raise ConfigurationError("max_newton_iters must be >= 1")

    @classmethod
    def fixed_step(cls, dt: float, method=Method.TRAPEZOIDAL, **kw) -> "SolverConfig":
        return cls(method=method, dt_initial=dt, dt_min=dt, dt_max=dt, lte_control=False, **kw)


@dataclass(frozen=True)
class CircuitState:
    time: float
    x: np.ndarray  # node voltages followed by voltage-source branch currents
    hysteresis: tuple[HysteresisState, ...]
    n_nodes: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise InvalidInputError("circuit state contains non-finite entries")

    @property
    def node_voltages(self) -> np.ndarray:
        return self.x[: self.n_nodes]

    def voltage(self, netlist: Netlist, node: str) -> float:
        i = netlist.index[node]
        return 0.0 if i < 0 else float(self.x[i])


def initial_state(netlist: Netlist, voltages: dict[str, float] | None = None, time: float = 0.0) -> CircuitState:
    """State with given node voltages (others 0) and the netlist's trap states."""
    x = np.zeros(netlist.size)
    for node, v in (voltages or {}).items():
        x[netlist.index[node]] = v
    return CircuitState(time, x, tuple(t.hysteresis for t in netlist.transistors), len(netlist.unknown_nodes))


# --- assembly ---------------------------------------------------------------


class _Assembler:
    """Precomputed index tables for fast stamping of one netlist."""

    def __init__(self, netlist: Netlist):
        idx = netlist.index
        self.netlist = netlist
        self.n = len(netlist.unknown_nodes)
        self.m = len(netlist.vsources)
        self.tr = [(t.params, idx[t.gate], idx[t.drain], idx[t.source]) for t in netlist.transistors]
        self.caps = [(c.capacitance, idx[c.a], idx[c.b]) for c in netlist.capacitors]
        self.vs = [(idx[v.pos], idx[v.neg], v.waveform) for v in netlist.vsources]
        self.cs = [(idx[c.a], idx[c.b], c.current) for c in netlist.isources]
        self.rs = [(1.0 / r.resistance, idx[r.a], idx[r.b]) for r in netlist.resistors]
        cap_nodes = sorted({i for _, a, b in self.caps for i in (a, b) if i >= 0})
        self.cap_nodes = np.array(cap_nodes, dtype=int)

    def assemble(self, x, t, left, hyst, cap_companion, scale=1.0, gmin=0.0):
        """Return residual f, Jacobian J and per-node current scale.

        ``cap_companion`` is None for DC (capacitors open) or a list of
        ``(g_eq, i_hist)`` per capacitor so that ``i = g_eq * v - i_hist``.
        """
        n = self.n
        size = n + self.m
        f = np.zeros(size)
        J = np.zeros((size, size))
        iscale = np.zeros(n)

        def v(i):
            return x[i] if i >= 0 else 0.0

        for k, (params, g, d, s) in enumerate(self.tr):
            vs = v(s)
            i_d, gm, gds = ofet.evaluate(params, hyst[k], v(g) - vs, v(d) - vs)
            a = abs(i_d)
            if d >= 0:
                f[d] += i_d
                iscale[d] = max(iscale[d], a)
                if g >= 0:
                    J[d, g] += gm
                J[d, d] += gds
                if s >= 0:
                    J[d, s] -= gm + gds
            if s >= 0:
                f[s] -= i_d
                iscale[s] = max(iscale[s], a)
                if g >= 0:
                    J[s, g] -= gm
                if d >= 0:
                    J[s, d] -= gds
                J[s, s] += gm + gds
        if cap_companion is not None:
            for (_, a, b), (geq, ihist) in zip(self.caps, cap_companion):
                i = geq * (v(a) - v(b)) - ihist
                if a >= 0:
                    f[a] += i
                    J[a, a] += geq
                    iscale[a] = max(iscale[a], abs(i))
                if b >= 0:
                    f[b] -= i
                    J[b, b] += geq
                    iscale[b] = max(iscale[b], abs(i))
                if a >= 0 and b >= 0:
                    J[a, b] -= geq
                    J[b, a] -= geq
        for g, a, b in self.rs:
            i = g * (v(a) - v(b))
            if a >= 0:
                f[a] += i
                J[a, a] += g
                iscale[a] = max(iscale[a], abs(i))
            if b >= 0:
                f[b] -= i
                J[b, b] += g
                iscale[b] = max(iscale[b], abs(i))
            if a >= 0 and b >= 0:
                J[a, b] -= g
                J[b, a] -= g
        for a, b, wf in self.cs:
            i = scale * waveform_value(wf, t, left)
            if a >= 0:
                f[a] += i
                iscale[a] = max(iscale[a], abs(i))
            if b >= 0:
                f[b] -= i
                iscale[b] = max(iscale[b], abs(i))
        for k, (a, b, wf) in enumerate(self.vs):
            row = n + k
            j = x[row]
            f[row] = v(a) - v(b) - scale * waveform_value(wf, t, left)
            if a >= 0:
                f[a] += j
                J[a, row] += 1.0
                J[row, a] += 1.0
                iscale[a] = max(iscale[a], abs(j))
            if b >= 0:
                f[b] -= j
                J[b, row] -= 1.0
                J[row, b] -= 1.0
                iscale[b] = max(iscale[b], abs(j))
        if gmin:
            for i in range(n):
                f[i] += gmin * x[i]
                J[i, i] += gmin
        return f, J, iscale

    def capacitor_currents(self, x, cap_companion):
        out = []
        for (_, a, b), (geq, ihist) in zip(self.caps, cap_companion):
            va = x[a] if a >= 0 else 0.0
            vb = x[b] if b >= 0 else 0.0
            out.append(geq * (va - vb) - ihist)
        return out

    def capacitor_voltages(self, x):
        return [(x[a] if a >= 0 else 0.0) - (x[b] if b >= 0 else 0.0) for _, a, b in self.caps]


def _newton(asm: _Assembler, x0, t, left, hyst, companion, config: SolverConfig, scale=1.0, gmin=0.0):
    """Damped Newton solve; returns ``(x, residual)`` or raises ConvergenceError."""
    n = asm.n
    x = np.array(x0, dtype=float)
    res = float("inf")
    last_step = float("inf")
    base_limit = np.full(n, config.voltage_step_limit)
    limit = base_limit
    prev_clip = np.zeros(n)
    for _ in range(config.max_newton_iters + 1):
        f, J, iscale = asm.assemble(x, t, left, hyst, companion, scale, gmin)
        kcl = np.abs(f[:n])
        res = float(kcl.max()) if n else 0.0
        cons = float(np.abs(f[n:]).max()) if asm.m else 0.0
        ok_kcl = bool(np.all(kcl <= config.newton_abs_tol + config.newton_rel_tol * iscale))
        if ok_kcl and cons <= 1e-9 and last_step <= config.vntol:
            return x, res
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular circuit matrix", residual=res, time=t) from None
        if not np.all(np.isfinite(dx)):
            raise ConvergenceError("non-finite Newton update", residual=res, time=t)
        dv = dx[:n]
        clipped = np.sign(dv) * (np.abs(dv) > limit)
        # trust region: a node clipped in the same direction again gets a doubled limit
        limit = np.where((clipped != 0) & (clipped == prev_clip), limit * 2.0, base_limit)
        np.clip(dv, -limit, limit, out=dv)
        prev_clip = clipped
        last_step = float(np.abs(dv).max()) if n else 0.0
        x += dx
    raise ConvergenceError(f"Newton did not converge at t={t:g}", residual=res, time=t)


# --- analyses ---------------------------------------------------------------


def dc_operating_point(
    netlist: Netlist,
    t: float = 0.0,
    left: bool = True,
    config: SolverConfig | None = None,
    guess: CircuitState | None = None,
) -> CircuitState:
    """Solve the circuit with capacitors open and sources evaluated at ``t``.

    ``left=True`` (default) takes the sources' left limits, i.e. the rest
    state just before any edge at ``t``.  Falls back to source stepping when
    plain Newton fails.
    """
    config = config or SolverConfig()
    asm = _Assembler(netlist)
    hyst = tuple(tr.hysteresis for tr in netlist.transistors) if guess is None else guess.hysteresis
    x0 = np.zeros(netlist.size) if guess is None else guess.x
    n = asm.n
    try:
        x, _ = _newton(asm, x0, t, left, hyst, None, config, gmin=config.dc_gmin)
        return CircuitState(t, x, hyst, n)
    except ConvergenceError:
        pass
    # source-stepping continuation
    x = np.zeros(netlist.size)
    lam, step = 0.0, 0.1
    last = ConvergenceError("source stepping failed")
    while lam < 1.0:
        target = min(1.0, lam + step)
        try:
            x_new, _ = _newton(asm, x, t, left, hyst, None, config, scale=target, gmin=config.dc_gmin)
        except ConvergenceError as exc:
            last = exc
            step /= 2
            if step < 1e-6:
                raise ConvergenceError(
                    "DC operating point failed after source stepping", residual=last.residual, time=t
                ) from exc
            continue
        x, lam = x_new, target
        step = min(step * 2, 0.25)
    return CircuitState(t, x, hyst, n)


@dataclass
class Trace:
    """Time record of all node voltages and probe currents."""

    t: np.ndarray
    node_names: tuple[str, ...]
    voltages: np.ndarray  # shape (len(t), len(node_names))
    currents: dict[str, np.ndarray]
    methods: list[str] = field(default_factory=list)
    exact_nodes: dict = field(default_factory=dict)  # node -> waveform for pinned nodes

    def v(self, node: str) -> np.ndarray:
        return self.voltages[:, self.node_names.index(node)]

    def i(self, probe: str) -> np.ndarray:
        return self.currents[probe]

    def resample(self, dt: float, t_start: float | None = None, t_end: float | None = None) -> "Trace":
        """Linear interpolation onto a uniform grid; pinned nodes use their exact waveform."""
        if not dt > 0:
            raise InvalidInputError("sample dt must be > 0")
        t0 = self.t[0] if t_start is None else t_start
        t1 = self.t[-1] if t_end is None else t_end
        n = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
        grid = t0 + dt * np.arange(n)
        volts = np.empty((n, len(self.node_names)))
        for j, name in enumerate(self.node_names):
            wf = self.exact_nodes.get(name)
            if wf is not None:
                volts[:, j] = [waveform_value(wf, tt) for tt in grid]
            else:
                volts[:, j] = np.interp(grid, self.t, self.voltages[:, j])
        cur = {k: np.interp(grid, self.t, v) for k, v in self.currents.items()}
        return Trace(grid, self.node_names, volts, cur, [], dict(self.exact_nodes))


def _probe_value(netlist: Netlist, asm: _Assembler, probe: CurrentProbe, x, hyst, cap_i, t):
    el = netlist.element(probe.element)

    def v(node):
        i = netlist.index[node]
        return 0.0 if i < 0 else x[i]

    if isinstance(el, Transistor):
        k = netlist.transistors.index(el)
        i_d = ofet.drain_current(el.params, hyst[k], v(el.gate) - v(el.source), v(el.drain) - v(el.source))
        # current into the drain terminal leaves through the source terminal
        return {"drain": -i_d, "source": i_d, "gate": 0.0}[probe.terminal]
    if isinstance(el, Capacitor):
        i = cap_i[netlist.capacitors.index(el)] if cap_i is not None else 0.0
        return -i if probe.terminal == "a" else i
    if isinstance(el, Resistor):
        i = (v(el.a) - v(el.b)) / el.resistance
        return -i if probe.terminal == "a" else i
    if isinstance(el, VoltageSource):
        j = x[asm.n + netlist.vsources.index(el)]
        return -j if probe.terminal == "pos" else j
    if isinstance(el, CurrentSource):
        i = waveform_value(el.current, t)
        return -i if probe.terminal == "a" else i
    raise ConfigurationError(f"cannot probe {el!r}")


def transient(
    netlist: Netlist,
    state0: CircuitState,
    config: SolverConfig,
    t_end: float,
    sample_dt: float | None = None,
) -> Trace:
    """Integrate from ``state0`` to ``t_end``.

    Returns raw adaptive points, or a uniform grid when ``sample_dt`` is set.
    Time points are forced at every source breakpoint; the first step after
    the start and after each breakpoint uses backward Euler and restarts the
    step size at ``dt_initial``.
    """
    if not t_end > state0.time:
        raise InvalidInputError("t_end must exceed the initial time")
    if state0.x.shape != (netlist.size,):
        raise InvalidInputError("state dimension does not match the netlist")
    asm = _Assembler(netlist)
    n = asm.n
    breakpoints = [b for b in netlist.breakpoints() if state0.time < b < t_end]
    bp_iter = iter(breakpoints + [t_end])
    next_bp = next(bp_iter)

    t = state0.time
    x = state0.x.copy()
    hyst = tuple(state0.hysteresis)
    caps = [c for c, _, _ in asm.caps]
    cap_v = asm.capacitor_voltages(x)
    cap_i = [0.0] * len(caps)

    times, volts, methods = [t], [x[:n].copy()], ["init"]
    probe_vals = {p.name: [_probe_value(netlist, asm, p, x, hyst, cap_i, t)] for p in netlist.probes}

    def companion(method, h, cv, ci):
        if method is Method.BACKWARD_EULER:
            return [(c / h, c / h * v0) for c, v0 in zip(caps, cv)]
        return [(2 * c / h, 2 * c / h * v0 + i0) for c, v0, i0 in zip(caps, cv, ci)]

    def advance(xs, t0, h, method, cv, ci, left):
        comp = companion(method, h, cv, ci)
        x_new, _ = _newton(asm, xs, t0 + h, left, hyst, comp, config)
        return x_new, asm.capacitor_voltages(x_new), asm.capacitor_currents(x_new, comp)

    def record(tt, xx, ci, method):
        times.append(tt)
        volts.append(xx[:n].copy())
        methods.append(method.value)
        for p in netlist.probes:
            probe_vals[p.name].append(_probe_value(netlist, asm, p, xx, hyst, ci, tt))

    h = config.dt_initial
    restart = True
    eps_t = 1e-12 * max(1.0, abs(t_end))
    while t < t_end - eps_t:
        method = Method.BACKWARD_EULER if restart else config.method
        land = t + h >= next_bp - eps_t
        h_eff = next_bp - t if land else h
        try:
            if config.lte_control and h_eff > config.dt_min * (1 + 1e-9):
                x_full, cv_full, _ = advance(x, t, h_eff, method, cap_v, cap_i, land)
                x_mid, cv_mid, ci_mid = advance(x, t, h_eff / 2, method, cap_v, cap_i, False)
                x_new, cv_new, ci_new = advance(x_mid, t + h_eff / 2, h_eff / 2, method, cv_mid, ci_mid, land)
                if len(asm.cap_nodes):
                    diff = np.abs(x_full[asm.cap_nodes] - x_new[asm.cap_nodes]).max()
                    err = diff / (2 ** method.order - 1)
                else:
                    err = 0.0
                if err > config.lte_tol and h_eff > config.dt_min:
                    h = max(h_eff / 2, config.dt_min)
                    continue
                record(t + h_eff / 2, x_mid, ci_mid, method)
            else:
                x_new, cv_new, ci_new = advance(x, t, h_eff, method, cap_v, cap_i, land)
                err = 0.0
        except ConvergenceError as exc:
            if h_eff <= config.dt_min * (1 + 1e-9):
                raise ConvergenceError(
                    f"time step underflow at t={t:.9g}", residual=exc.residual, time=t
                ) from exc
            h = max(h_eff / 2, config.dt_min)
            continue

        t_new = next_bp if land else t + h_eff
        if any(hs.enabled for hs in hyst):
            hyst = _update_hysteresis(netlist, x_new, hyst, h_eff)
        x, cap_v, cap_i, t = x_new, cv_new, ci_new, t_new
        record(t, x, cap_i, method)
        if land:
            restart = True
            h = config.dt_initial
            next_bp = next(bp_iter, t_end)
        else:
            restart = False
            if config.lte_control and err < config.lte_tol / 4:
                h = min(h_eff * 1.5, config.dt_max)
            else:
                h = min(max(h_eff, config.dt_min), config.dt_max)

    exact = {}
    for vsrc in netlist.vsources:
        if vsrc.neg == netlist.ground and vsrc.pos != netlist.ground:
            exact[vsrc.pos] = vsrc.waveform
    trace = Trace(
        np.array(times),
        tuple(netlist.unknown_nodes),
        np.array(volts).reshape(len(times), n),
        {k: np.array(v) for k, v in probe_vals.items()},
        methods,
        exact,
    )
    trace.final_state = CircuitState(t, x, hyst, n)
    if sample_dt is not None:
        sampled = trace.resample(sample_dt, state0.time, t_end)
        sampled.final_state = trace.final_state
        return sampled
    return trace


def _update_hysteresis(netlist: Netlist, x, hyst, dt):
    out = []
    for tr, hs in zip(netlist.transistors, hyst):
        if hs.enabled:
            vg = x[netlist.index[tr.gate]] if netlist.index[tr.gate] >= 0 else 0.0
            vs = x[netlist.index[tr.source]] if netlist.index[tr.source] >= 0 else 0.0
            v_ov = ofet.overdrive(tr.params, ofet.NO_HYSTERESIS, vg - vs)
            hs = ofet.step_hysteresis(hs, v_ov, dt)
        out.append(hs)
    return tuple(out)


def stamp(element, netlist: Netlist, state: CircuitState, dt: float | None = None, method=Method.BACKWARD_EULER, t: float = 0.0):
    """Return ``(J, f, nodes)``: the contributions of a single element at ``state``.

    Rows and columns follow ``nodes`` (the element's non-ground terminals in
    netlist order) followed by the branch current of a voltage source.

    Capacitors use the companion model for ``method`` with the history taken
    as ``state`` itself (zero history current), so ``f`` is zero and ``J``
    carries ``g_eq``.  Passing ``dt=None`` stamps capacitors as open circuits.
    """
    touched = {nd for nd in _terminals(element).values() if nd != netlist.ground}
    nodes = [netlist.ground] + [nd for nd in netlist.nodes if nd in touched]
    single = Netlist(nodes, [element], ground=netlist.ground)
    asm = _Assembler(single)
    x = np.zeros(single.size)
    x[: asm.n] = state.node_voltages[[netlist.index[nm] for nm in single.unknown_nodes]]
    hyst = tuple(
        state.hysteresis[netlist.transistors.index(tr)] for tr in single.transistors
    )
    comp = None
    if dt is not None and single.capacitors:
        c = single.capacitors[0].capacitance
        g = c / dt if Method(method) is Method.BACKWARD_EULER else 2 * c / dt
        vcap = asm.capacitor_voltages(x)[0]
        comp = [(g, g * vcap)]
    f, J, _ = asm.assemble(x, t, False, hyst, comp)
    return J, f, single.unknown_nodes


# --- CSV ------------------------------------------------------------------


def write_trace_csv(path, t, i_syn, v_pre, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write ``t_s,i_syn_A,v_pre_V[,v_node_*]`` with 15 significant digits."""
    extra = extra or {}
    header = ["t_s", "i_syn_A", "v_pre_V"] + [f"v_node_{k}" for k in extra]
    cols = [t, i_syn, v_pre] + list(extra.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([f"{float(v):.15g}" for v in row])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Parse a trace CSV into column arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidInputError(f"{path}: empty trace file")
    header = rows[0]
    if header[:2] != ["t_s", "i_syn_A"]:
        raise InvalidInputError(f"{path}: header must start with t_s,i_syn_A")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric value ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InvalidInputError(f"{path}: ragged rows")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError(f"{path}: non-finite value")
    return {h: data[:, j] for j, h in enumerate(header)}
