"""Experiment matrices: build, simulate, segment, fit, summarise, compare."""

from __future__ import annotations

import csv
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import SolverConfig, transient, write_trace_csv
from .errors import ConfigurationError, ConvergenceError, LdiError
from .ofet import C_DIEL_DEFAULT
from .presets import (
    I_SYN_PROBE,
    P_TYPE_CURRENT_SCALE,
    PRESETS,
    LdiConfig,
    bias_margin_check,
    build_ldi,
    rest_state,
)
from .stimulus import PulseTrain
from .tau import PsoConfig, SegmentPhase, TauEstimate, TauStats, fit_pso, segment, stats

DEFAULT_SAMPLE_DT = 1e-3

# Acceptance thresholds used by compare() and the cross-cell checks.
MEAN_TOLERANCE = 0.5
CAPACITANCE_RATIO_RANGE = (1.5, 2.2)
BENT_FLAT_RATIO_RANGE = (1.1, 2.0)
VW_SPREAD_MAX = 0.10
PERIOD_SPREAD_MAX = 0.15


@dataclass(frozen=True)
class ReferenceRecord:
    """Published box-plot statistics for one condition (milliseconds)."""

    bend: str
    period_s: float
    v_w: float
    c_syn_nf: float
    min: float
    max: float
    median: float
    mean: float
    source: str

    def key(self):
        return (self.bend, self.period_s, self.v_w, self.c_syn_nf)

    def to_dict(self) -> dict:
        return {
            "bend": self.bend, "period_s": self.period_s, "v_w": self.v_w, "c_syn_nf": self.c_syn_nf,
            "min_ms": self.min, "max_ms": self.max, "median_ms": self.median, "mean_ms": self.mean,
            "source": self.source,
        }


def _refs(source, c_nf, rows):
    return [ReferenceRecord(bend, per, vw, c_nf, lo, hi, med, mean, source) for vw, bend, per, lo, hi, med, mean in rows]


# Published measurements, transcribed verbatim; values read as milliseconds.
REFERENCES: tuple[ReferenceRecord, ...] = tuple(
    _refs("capacitance-4.7nF", 4.7, [
        (10.0, "Flat", 2.0, 67.15, 70.58, 68.21, 68.50),
        (10.0, "Bent", 2.0, 91.67, 105.19, 97.08, 97.28),
        (10.0, "Flat", 1.0, 66.45, 68.21, 67.03, 67.08),
        (10.0, "Bent", 1.0, 79.55, 97.28, 89.25, 89.15),
    ])
    + _refs("capacitance-10nF", 10.0, [
        (10.0, "Flat", 2.0, 121.01, 125.18, 122.97, 122.91),
        (10.0, "Bent", 2.0, 157.45, 221.84, 191.14, 189.33),
        (10.0, "Flat", 1.0, 107.15, 109.71, 108.40, 108.42),
        (10.0, "Bent", 1.0, 105.17, 169.02, 144.90, 140.85),
    ])
    + _refs("weighting-voltage", 10.0, [
        (9.5, "Flat", 2.0, 122.46, 126.38, 124.23, 124.12),
        (9.5, "Bent", 2.0, 155.40, 179.64, 167.66, 167.43),
        (9.8, "Flat", 2.0, 115.98, 121.09, 119.07, 118.84),
        (9.8, "Bent", 2.0, 158.64, 198.24, 170.57, 174.02),
        (9.5, "Flat", 4.0, 119.99, 125.01, 122.16, 122.25),
        (9.5, "Bent", 4.0, 172.68, 185.13, 177.82, 178.73),
        (9.8, "Flat", 4.0, 121.86, 125.29, 123.92, 123.71),
        (9.8, "Bent", 4.0, 160.99, 207.77, 180.75, 182.49),
    ])
)


def find_reference(condition: dict) -> ReferenceRecord | None:
    key = (condition["bend"], float(condition["period_s"]), float(condition["v_w"]), float(condition["c_syn_nf"]))
    for ref in REFERENCES:
        if all(math.isclose(a, b) if isinstance(a, float) else a == b for a, b in zip(ref.key(), key)):
            return ref
    return None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    configs: tuple[LdiConfig, ...]
    solver: SolverConfig = field(default_factory=SolverConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)
    sample_dt: float = DEFAULT_SAMPLE_DT
    discard_first: int = 1
    primary_phase: SegmentPhase = SegmentPhase.CHARGE

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        object.__setattr__(self, "primary_phase", SegmentPhase(self.primary_phase))
        if not self.name:
            raise ConfigurationError("experiment needs a name")
        if not self.configs:
            raise ConfigurationError("experiment matrix is empty")
        conds = [json.dumps(c.condition(), sort_keys=True) for c in self.configs]
        if len(set(conds)) != len(conds):
            raise ConfigurationError("experiment matrix contains duplicate cells")

    @classmethod
    def preset(cls, name: str, **kw) -> "ExperimentSpec":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown experiment preset {name!r}")
        n_cycles = kw.pop("n_cycles", None)
        configs = PRESETS[name]() if n_cycles is None else PRESETS[name](n_cycles)
        overrides = kw.pop("config_overrides", None)
        if overrides:
            configs = [c.with_(**overrides) for c in configs]
        return cls(name, tuple(configs), **kw)


@dataclass
class CellResult:
    index: int
    config: LdiConfig
    status: str = "ok"
    error: str | None = None
    error_kind: str | None = None  # "solver" or "data"
    estimates: list[TauEstimate] = field(default_factory=list)
    stats: dict[str, TauStats] = field(default_factory=dict)
    peak_i_syn: float = float("nan")
    rms_rel: dict[str, float] = field(default_factory=dict)
    bias_margin: dict = field(default_factory=dict)
    directory: str | None = None

    @property
    def condition(self) -> dict:
        return self.config.condition()

    @property
    def label(self) -> str:
        c = self.condition
        return (
            f"cell{self.index:02d}_{c['bend'].lower()}_c{c['c_syn_nf']:g}nF_"
            f"p{c['period_s']:g}s_vw{c['v_w']:g}"
        )


def segment_seed(base: int, cycle: int, phase: SegmentPhase) -> int:
    return base * 1000 + 2 * cycle + (phase is SegmentPhase.DISCHARGE)


def simulate_cell(config: LdiConfig, solver: SolverConfig, sample_dt: float = DEFAULT_SAMPLE_DT):
    """Simulate one configuration over its full pulse train on a uniform grid."""
    net = build_ldi(config)
    state = rest_state(config, solver)
    return transient(net, state, solver, config.pulse.duration, sample_dt=sample_dt)


def analyse_trace(t, i_syn, pulse, pso: PsoConfig, discard_first: int = 1):
    """Segment and fit a trace; returns estimates plus per-phase stats and fit RMS."""
    segs = segment(t, i_syn, pulse, discard_first)
    estimates, rms = [], {}
    for seg in segs:
        cfg = PsoConfig(**{**pso.__dict__, "seed": segment_seed(pso.seed, seg.source_cycle, seg.phase)})
        est = fit_pso(seg, cfg)
        estimates.append(est)
        rel = math.sqrt(est.sse / len(seg.t)) / float(np.ptp(seg.i))
        rms[seg.phase.value] = max(rms.get(seg.phase.value, 0.0), rel)
    st = {}
    for phase in SegmentPhase:
        sel = [e for e in estimates if e.phase is phase]
        if sel and any(e.converged for e in sel):
            st[phase.value] = stats(sel)
    return estimates, st, rms


def write_estimates_csv(path, estimates: list[TauEstimate]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "phase", "tau_s", "a_A", "b_A", "c_A", "sse", "converged", "seed"])
        for e in estimates:
            w.writerow([e.cycle, e.phase.value, f"{e.tau:.15g}", f"{e.a:.15g}", f"{e.b:.15g}",
                        f"{e.c:.15g}", f"{e.sse:.15g}", int(e.converged), e.seed])


STATS_HEADER = ["phase", "bend", "period_s", "v_w", "c_syn_nf", "min_ms", "max_ms", "median_ms",
                "mean_ms", "q1_ms", "q3_ms", "whisker_lo_ms", "whisker_hi_ms", "n"]


def write_stats_csv(path, rows: list[tuple[str, dict, TauStats]]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for phase, cond, s in rows:
            ms = s.scaled(1e3)
            w.writerow([phase, cond.get("bend", ""), cond.get("period_s", ""), cond.get("v_w", ""),
                        cond.get("c_syn_nf", "")]
                       + [f"{getattr(ms, k):.15g}" for k in
                          ("min", "max", "median", "mean", "q1", "q3", "whisker_lo", "whisker_hi")]
                       + [s.n])


def run_cell(index: int, config: LdiConfig, spec: ExperimentSpec, out_dir: str | None) -> CellResult:
    cell = CellResult(index, config)
    try:
        cell.bias_margin = bias_margin_check(config).to_dict()
        trace = simulate_cell(config, spec.solver, spec.sample_dt)
        i_syn = trace.i(I_SYN_PROBE)
        cell.peak_i_syn = float(np.max(i_syn))
        cell.estimates, cell.stats, cell.rms_rel = analyse_trace(
            trace.t, i_syn, config.pulse, spec.pso, spec.discard_first
        )
        if out_dir is not None:
            d = Path(out_dir) / cell.label
            d.mkdir(parents=True, exist_ok=True)
            cell.directory = str(d)
            write_trace_csv(d / "trace.csv", trace.t, i_syn, trace.v("pre"),
                            {"syn": trace.v("syn"), "x": trace.v("x")})
            write_estimates_csv(d / "estimates.csv", cell.estimates)
            write_stats_csv(d / "stats.csv", [(ph, cell.condition, s) for ph, s in cell.stats.items()])
    except LdiError as exc:
        cell.status = "failed"
        cell.error_kind = "solver" if isinstance(exc, ConvergenceError) else "data"
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def compare(sim: TauStats | None, reference: ReferenceRecord | None) -> dict:
    """Ratios simulated/reference per statistic plus pass flags; ``sim`` is in seconds."""
    if reference is None:
        return {"status": "no-reference", "reference": None, "ratios": {}, "passes": {}}
    if sim is None:
        return {"status": "no-simulation", "reference": reference.to_dict(), "ratios": {}, "passes": {}}
    ms = sim.scaled(1e3)
    ratios = {}
    for key in ("min", "max", "median", "mean"):
        ref = getattr(reference, key)
        ratios[key] = getattr(ms, key) / ref if ref > 0 else float("nan")
    passes = {"mean_within_50pct": bool(abs(ratios["mean"] - 1.0) <= MEAN_TOLERANCE)}
    return {"status": "ok", "reference": reference.to_dict(), "ratios": ratios, "passes": passes}


def _mean(cell: CellResult, phase: str) -> float | None:
    s = cell.stats.get(phase)
    return s.mean if s else None


def cross_checks(cells: list[CellResult], phase: str = SegmentPhase.CHARGE.value) -> list[dict]:
    """Orderings and ratios between cells that differ in exactly one factor."""
    ok = [c for c in cells if c.status == "ok" and _mean(c, phase) is not None]

    def key(c, drop):
        cond = dict(c.condition)
        cond.pop("width_s")
        for d in drop:
            cond.pop(d)
        return json.dumps(cond, sort_keys=True)

    def groups(drop):
        out = {}
        for c in ok:
            out.setdefault(key(c, drop), []).append(c)
        return out

    checks = []
    for grp in groups(["c_syn_nf"]).values():
        by_c = {c.condition["c_syn_nf"]: c for c in grp}
        if 10.0 in by_c and 4.7 in by_c:
            r = _mean(by_c[10.0], phase) / _mean(by_c[4.7], phase)
            cond = by_c[10.0].condition
            lo, hi = CAPACITANCE_RATIO_RANGE
            checks.append({"check": "tau(10nF) > tau(4.7nF)", "condition": cond, "value": r, "passed": r > 1.0})
            checks.append({"check": "capacitance_ratio_in_range", "condition": cond, "value": r,
                           "range": [lo, hi], "passed": lo <= r <= hi})
    for grp in groups(["bend"]).values():
        by_b = {c.condition["bend"]: c for c in grp}
        if "Flat" in by_b and "Bent" in by_b:
            r = _mean(by_b["Bent"], phase) / _mean(by_b["Flat"], phase)
            cond = by_b["Flat"].condition
            checks.append({"check": "bent_mean_exceeds_flat", "condition": cond, "value": r, "passed": r > 1.0})
            if math.isclose(cond["c_syn_nf"], 10.0):
                lo, hi = BENT_FLAT_RATIO_RANGE
                ref_f, ref_b = find_reference(cond), find_reference(by_b["Bent"].condition)
                ref_ratio = ref_b.mean / ref_f.mean if ref_f and ref_b else None
                checks.append({"check": "bent_flat_ratio_in_range", "condition": cond, "value": r,
                               "range": [lo, hi], "reference_value": ref_ratio, "passed": lo <= r <= hi})
    for grp in groups(["v_w"]).values():
        if len(grp) > 1:
            means = [_mean(c, phase) for c in grp]
            spread = (max(means) - min(means)) / min(means)
            checks.append({"check": "vw_independence", "condition": grp[0].condition, "value": spread,
                           "limit": VW_SPREAD_MAX, "passed": spread < VW_SPREAD_MAX})
            ordered = sorted(grp, key=lambda c: c.condition["v_w"])
            peaks = [c.peak_i_syn for c in ordered]
            checks.append({"check": "peak_decreasing_in_vw", "condition": grp[0].condition,
                           "value": peaks, "passed": all(a > b for a, b in zip(peaks, peaks[1:]))})
    for grp in groups(["period_s"]).values():
        if len(grp) > 1 and grp[0].condition["bend"] == "Flat":
            means = [_mean(c, phase) for c in grp]
            spread = (max(means) - min(means)) / min(means)
            checks.append({"check": "period_independence", "condition": grp[0].condition, "value": spread,
                           "limit": PERIOD_SPREAD_MAX, "passed": spread < PERIOD_SPREAD_MAX})
    return checks


@dataclass
class RunResult:
    spec: ExperimentSpec
    cells: list[CellResult]
    report: dict

    @property
    def all_completed(self) -> bool:
        return all(c.status == "ok" for c in self.cells)

    @property
    def all_passed(self) -> bool:
        flags = [v for cell in self.report["cells"] for v in cell["passes"].values()]
        flags += [c["passed"] for c in self.report["checks"]]
        return all(flags)


def _versions() -> dict:
    return {"ldisim": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _build_report(spec: ExperimentSpec, cells: list[CellResult]) -> dict:
    phase = spec.primary_phase.value
    entries = []
    for cell in cells:
        sim = cell.stats.get(phase)
        cmp = compare(sim, find_reference(cell.condition))
        entries.append({
            "index": cell.index,
            "label": cell.label,
            "condition": cell.condition,
            "status": cell.status,
            "error": cell.error,
            "error_kind": cell.error_kind,
            "stats": {ph: s.to_dict() for ph, s in cell.stats.items()},
            "fit_rms_rel": cell.rms_rel,
            "peak_i_syn_A": cell.peak_i_syn if math.isfinite(cell.peak_i_syn) else None,
            "bias_margin": cell.bias_margin,
            "reference": cmp["reference"],
            "comparison_status": cmp["status"],
            "ratios": cmp["ratios"],
            "passes": cmp["passes"],
        })
    return {
        "spec_name": spec.name,
        "primary_phase": phase,
        "cells": entries,
        "checks": cross_checks(cells, phase),
        "versions": _versions(),
        "seeds": {"pso_base_seed": spec.pso.seed,
                  "segment_seed_rule": "base*1000 + 2*cycle + (phase == Discharge)"},
    }


def _worker_count() -> int:
    env = os.environ.get("LDI_SIM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError("LDI_SIM_THREADS must be an integer") from None
    return os.cpu_count() or 1


def run(spec: ExperimentSpec, out_dir=None, workers: int | None = None) -> RunResult:
    """Run every matrix cell; failures are recorded per cell and do not stop siblings."""
    workers = workers or _worker_count()
    workers = min(workers, len(spec.configs))
    out = None if out_dir is None else str(out_dir)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
    if workers <= 1:
        cells = [run_cell(k, cfg, spec, out) for k, cfg in enumerate(spec.configs)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, k, cfg, spec, out) for k, cfg in enumerate(spec.configs)]
            cells = [f.result() for f in futures]
    report = _build_report(spec, cells)
    if out is not None:
        with open(Path(out) / "report.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
            fh.write("\n")
    return RunResult(spec, cells, report)


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def calibrate_current_scale(
    target_tau: float = 0.12291,
    start: float = P_TYPE_CURRENT_SCALE,
    n_cycles: int = 6,
    iterations: int = 3,
    solver: SolverConfig | None = None,
    pso: PsoConfig | None = None,
) -> float:
    """Find the p-type dielectric scale putting the flat 10 nF, 2 s charge-phase mean at ``target_tau``.

    The charge-phase time constant is close to inversely proportional to the
    p-type current scale, so a few multiplicative updates suffice.
    """
    solver = solver or SolverConfig()
    pso = pso or PsoConfig()
    base = LdiConfig(c_syn=10e-9, pulse=PulseTrain(2.0, 1.0, n_cycles=n_cycles))
    scale = start
    for _ in range(iterations):
        cfg = base.with_(p_c_diel=C_DIEL_DEFAULT * scale)
        trace = simulate_cell(cfg, solver)
        _, st, _ = analyse_trace(trace.t, trace.i(I_SYN_PROBE), cfg.pulse, pso)
        scale *= st[SegmentPhase.CHARGE.value].mean / target_tau
    return scale
