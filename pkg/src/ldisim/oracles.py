"""Closed-form checks of the solver and the fitter, shared by ``validate`` and the tests."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .circuit import (
    Capacitor,
    CurrentSource,
    Method,
    Netlist,
    Resistor,
    SolverConfig,
    StepWaveform,
    VoltageSource,
    initial_state,
    transient,
)
from .tau import CycleSegment, PsoConfig, SegmentPhase, fit_pso

RC_R = 1e9
RC_C = 10e-9
RC_TAU = RC_R * RC_C
RC_TOLERANCE = 1e-3  # fraction of the step amplitude
ORDER_MIN = {Method.BACKWARD_EULER: 0.9, Method.TRAPEZOIDAL: 1.8}
FIT_TAUS = (0.01, 0.1, 1.0)


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""


def rc_netlist(v_step: float = 1.0, r: float = RC_R, c: float = RC_C) -> Netlist:
    return Netlist(
        ["0", "in", "out"],
        [VoltageSource("V", "in", "0", StepWaveform(v_step)), Resistor("R", "in", "out", r), Capacitor("C", "out", "0", c)],
    )


def rc_step_error(method: Method, dt: float, t_end: float = 5 * RC_TAU) -> float:
    """Largest deviation from ``1 - exp(-t/RC)`` over a fixed-step run, per volt of step."""
    net = rc_netlist()
    tr = transient(net, initial_state(net), SolverConfig.fixed_step(dt, method=method), t_end)
    exact = 1.0 - np.exp(-tr.t / RC_TAU)
    return float(np.max(np.abs(tr.v("out") - exact)))


def rc_final_error(method: Method, dt: float, t_end: float = 2 * RC_TAU) -> float:
    net = rc_netlist()
    tr = transient(net, initial_state(net), SolverConfig.fixed_step(dt, method=method), t_end)
    return abs(float(tr.v("out")[-1]) - (1.0 - math.exp(-t_end / RC_TAU)))


def observed_order(method: Method, steps=(20, 40, 80, 160)) -> float:
    """Smallest log2 error ratio over successive dt halvings."""
    errs = [rc_final_error(method, RC_TAU / n) for n in steps]
    return float(min(math.log2(a / b) for a, b in zip(errs, errs[1:])))


def ramp_slope(method: Method, current: float = 1e-6, c: float = RC_C, dt: float = 1e-4, t_end: float = 1e-2) -> float:
    net = Netlist(["0", "n"], [CurrentSource("I", "0", "n", current), Capacitor("C", "n", "0", c)])
    tr = transient(net, initial_state(net), SolverConfig.fixed_step(dt, method=method), t_end)
    return float(np.polyfit(tr.t, tr.v("n"), 1)[0])


def synthesize(phase: SegmentPhase, t, tau: float, a: float = 0.0, b: float = 0.0, c: float = 0.0) -> np.ndarray:
    """Ideal first-order segment: ``a + b exp(-t/tau)`` (charge) or ``c exp(-t/tau)`` (discharge)."""
    t = np.asarray(t, dtype=float)
    if SegmentPhase(phase) is SegmentPhase.CHARGE:
        return a + b * np.exp(-t / tau)
    return c * np.exp(-t / tau)


def synthetic_segment(tau: float, noise: float = 0.0, seed: int = 0, phase=SegmentPhase.CHARGE,
                      span: float = 5.0, n: int = 500) -> CycleSegment:
    """Segment spanning ``span`` time constants; ``noise`` is relative to the amplitude."""
    t = np.linspace(0.0, span * tau, n)
    if SegmentPhase(phase) is SegmentPhase.CHARGE:
        i = synthesize(phase, t, tau, a=5e-6, b=-4e-6)
        amp = 4e-6
    else:
        i = synthesize(phase, t, tau, c=3e-6)
        amp = 3e-6
    if noise:
        i = i + np.random.default_rng(seed).normal(0.0, noise * amp, size=t.shape)
    return CycleSegment(phase, t, i, 0)


def run_all(solver: SolverConfig | None = None, pso: PsoConfig | None = None) -> list[OracleResult]:
    """Run every oracle.

    The RC step response is stepped at ``solver.dt_max``; with the default
    solver settings that is exactly RC/1000, so a larger ``dt_max`` makes the
    check fail.
    """
    solver = solver or SolverConfig()
    pso = pso or PsoConfig()
    out = []
    dt = solver.dt_max
    for m in Method:
        err = rc_step_error(m, dt)
        out.append(OracleResult(f"rc_step_{m.name.lower()}", err <= RC_TOLERANCE, err, RC_TOLERANCE,
                                f"dt={dt:g}s"))
    for m in Method:
        slope = ramp_slope(m)
        rel = abs(slope / (1e-6 / RC_C) - 1.0)
        out.append(OracleResult(f"ramp_{m.name.lower()}", rel <= 1e-9, rel, 1e-9, f"slope={slope:.12g} V/s"))
    for m in Method:
        order = observed_order(m)
        out.append(OracleResult(f"order_{m.name.lower()}", order >= ORDER_MIN[m], order, ORDER_MIN[m]))
    for tau in FIT_TAUS:
        t0 = time.perf_counter()
        est = fit_pso(synthetic_segment(tau), pso)
        rel = abs(est.tau / tau - 1.0)
        out.append(OracleResult(f"fit_recovery_{tau * 1e3:g}ms", rel <= 0.01, rel, 0.01,
                                f"{time.perf_counter() - t0:.2f}s"))
    return out


ORACLE_NAMES = (
    [f"rc_step_{m.name.lower()}" for m in Method]
    + [f"ramp_{m.name.lower()}" for m in Method]
    + [f"order_{m.name.lower()}" for m in Method]
    + [f"fit_recovery_{tau * 1e3:g}ms" for tau in FIT_TAUS]
)
