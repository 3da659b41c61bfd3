"""Command-line entry point: ``ldisim {characterize,step,fit,sweep,validate}``.

Exit codes: 0 success, 1 checks failed (``validate``, ``sweep --strict``),
2 usage or configuration error, 3 solver failure, 4 data or fit failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, harness, ofet, oracles
from .circuit import read_trace_csv, transient
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DegenerateTraceError,
    InsufficientDataError,
    InvalidInputError,
)
from .ofet import NO_HYSTERESIS
from .presets import I_SYN_PROBE, PRESETS, build_ldi, rest_state
from .stimulus import PulseTrain
from .tau import PsoConfig, SegmentPhase, fit_pso, segment, stats

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_DATA = 4

DEFAULT_SEED = 42


def _range(text: str) -> np.ndarray:
    """``start:stop:step`` inclusive of ``stop`` (within half a step)."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}") from None
    if step == 0 or (stop - start) * step < 0:
        raise argparse.ArgumentTypeError(f"step {step:g} does not move from {start:g} to {stop:g}")
    n = int(math.floor((stop - start) / step + 0.5))
    return start + step * np.arange(n + 1)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _load(args, extra=()) -> cfgmod.RunConfig:
    overrides = list(args.set or []) + list(extra) + [f"pso.seed={args.seed}"]
    return cfgmod.load(args.config, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out or f"ldisim_out/{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(out: Path, run: cfgmod.RunConfig) -> None:
    (out / "run_config.ini").write_text(run.dumps())


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


# --- characterize -----------------------------------------------------------


def cmd_characterize(args) -> int:
    extra = []
    if args.device:
        extra.append(f"device.polarity={args.device}")
    if args.bend:
        extra.append(f"device.bend={args.bend}")
    if args.hysteresis:
        extra.append("device.hysteresis=true")
    run = _load(args, extra)
    params, hyst0 = run.device, run.hysteresis
    s = params.polarity.sign
    vgs = args.vgs if args.vgs is not None else _range("-40:40:0.5")
    vds_values = args.vds_values or [s * 5.0, s * ofet.V_REF_OFF]
    vds = args.vds if args.vds is not None else _range(f"0:{s * 40}:{s * 0.5}")
    vgs_values = args.vgs_values or [s * v for v in (0.0, 10.0, 20.0, 30.0, 40.0)]
    out = _out_dir(args)

    def sweep(v_gs_seq, v_ds_seq, state):
        rows = []
        for v_gs, v_ds in zip(v_gs_seq, v_ds_seq):
            if state.enabled:
                state = ofet.step_hysteresis(state, ofet.overdrive(params, NO_HYSTERESIS, v_gs), args.sweep_dt)
            rows.append((v_gs, v_ds, ofet.drain_current(params, state, v_gs, v_ds)))
        return rows, state

    with open(out / "transfer.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["direction", "v_ds_V", "v_gs_V", "i_d_A"])
        for v_ds in vds_values:
            fwd, state = sweep(vgs, [v_ds] * len(vgs), hyst0)
            rev, _ = sweep(vgs[::-1], [v_ds] * len(vgs), state)
            for direction, rows in (("forward", fwd), ("reverse", rev)):
                for v_gs, v, i in rows:
                    w.writerow([direction, f"{v:.15g}", f"{v_gs:.15g}", f"{i:.15g}"])
    with open(out / "output.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["v_gs_V", "v_ds_V", "i_d_A"])
        for v_gs in vgs_values:
            rows, _ = sweep([v_gs] * len(vds), vds, hyst0)
            for g, v, i in rows:
                w.writerow([f"{g:.15g}", f"{v:.15g}", f"{i:.15g}"])
    _write_run_config(out, run)
    print(f"{params.polarity.value}-type {run.values['device']['bend']} device: wrote {out}/transfer.csv, {out}/output.csv")
    return EXIT_OK


# --- step ---------------------------------------------------------------------


def cmd_step(args) -> int:
    run = _load(args, [f"ldi.cycles={args.cycles}"] if args.cycles is not None else [])
    out = _out_dir(args)
    t_end = run.ldi.pulse.duration + args.tail
    columns, peaks, t, v_pre = {}, {}, None, None
    for vw in args.vw:
        cfg = run.ldi.with_(v_w=vw)
        net = build_ldi(cfg)
        trace = transient(net, rest_state(cfg, run.solver), run.solver, t_end, sample_dt=run.sample_dt)
        i_syn = trace.i(I_SYN_PROBE)
        t, v_pre = trace.t, trace.v("pre")
        columns[f"i_syn_vw{vw:g}_A"] = i_syn
        peaks[vw] = float(np.max(i_syn))
    with open(out / "step.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t_s", "v_pre_V", *columns])
        for row in zip(t, v_pre, *columns.values()):
            w.writerow([f"{float(v):.15g}" for v in row])
    with open(out / "peaks.csv", "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["v_w_V", "peak_i_syn_A"])
        for vw, pk in peaks.items():
            w.writerow([f"{vw:g}", f"{pk:.15g}"])
    _write_run_config(out, run)
    for vw, pk in peaks.items():
        print(f"V_W = {vw:5.2f} V  peak I_syn = {pk:.4e} A")
    return EXIT_OK


# --- fit ----------------------------------------------------------------------


def cmd_fit(args) -> int:
    run = _load(args)
    data = read_trace_csv(args.trace)
    t, i = data["t_s"], data["i_syn_A"]
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise InvalidInputError(f"{args.trace}: t_s must be strictly increasing with >= 2 rows")
    if args.pulse:
        pulse = PulseTrain.parse(args.pulse)
    else:
        p = run.ldi.pulse
        n = max(1, int(math.ceil(t[-1] / p.period)) + 1)
        pulse = PulseTrain(p.period, p.width, p.level_high, p.level_low, n, p.phase)
    phases = list(SegmentPhase) if args.phase == "both" else [SegmentPhase(args.phase.capitalize())]
    discard = run.discard_first if args.discard_first is None else args.discard_first
    segs = segment(t, i, pulse, discard, phases)
    estimates = []
    for seg in segs:
        seed = harness.segment_seed(run.pso.seed, seg.source_cycle, seg.phase)
        estimates.append(fit_pso(seg, PsoConfig(**{**run.pso.__dict__, "seed": seed})))
    rows = []
    for phase in phases:
        sel = [e for e in estimates if e.phase is phase]
        rows.append((phase.value, {}, stats(sel)))
    out = _out_dir(args)
    harness.write_estimates_csv(out / "estimates.csv", estimates)
    harness.write_stats_csv(out / "stats.csv", rows)
    _write_run_config(out, run)
    for phase, _, st in rows:
        ms = st.scaled(1e3)
        print(f"{phase:9s} n={st.n:3d}  min {ms.min:9.3f}  max {ms.max:9.3f}  "
              f"median {ms.median:9.3f}  mean {ms.mean:9.3f}  (ms)")
    return EXIT_OK


# --- sweep --------------------------------------------------------------------


def cmd_sweep(args) -> int:
    if args.spec in PRESETS:
        run = _load(args)
        configs = [cfgmod.apply_explicit_ldi(c, run) for c in PRESETS[args.spec]()]
        name = args.spec
    elif Path(args.spec).is_file():
        overrides = list(args.set or []) + [f"pso.seed={args.seed}"]
        run, configs = cfgmod.load_matrix(args.spec, overrides)
        name = Path(args.spec).stem
    else:
        raise ConfigurationError(
            f"unknown sweep {args.spec!r}; expected one of {sorted(PRESETS)} or a sweep file"
        )
    spec = harness.ExperimentSpec(name, tuple(configs), run.solver, run.pso, run.sample_dt, run.discard_first)
    out = Path(args.out or f"ldisim_out/sweep_{name}")
    result = harness.run(spec, out, args.workers)
    _write_run_config(out, run)
    for cell in result.report["cells"]:
        mean = cell["stats"].get(result.report["primary_phase"], {}).get("mean")
        shown = f"{mean * 1e3:9.2f} ms" if mean is not None else "      n/a"
        ref = cell["reference"]["mean_ms"] if cell["reference"] else None
        ref_s = f"ref {ref:7.2f} ms" if ref is not None else "no reference"
        print(f"{cell['label']:40s} {cell['status']:6s} mean {shown}  {ref_s}")
    for chk in result.report["checks"]:
        print(f"check {chk['check']:28s} {'PASS' if chk['passed'] else 'FAIL'}  value={chk['value']}")
    print(f"report: {out / 'report.json'}")
    failed = [c for c in result.cells if c.status != "ok"]
    if failed:
        for c in failed:
            print(f"error: {c.label}: {c.error}", file=sys.stderr)
        return EXIT_SOLVER if any(c.error_kind == "solver" for c in failed) else EXIT_DATA
    if args.strict and not result.all_passed:
        print("error: pass flags failed under --strict", file=sys.stderr)
        return EXIT_CHECKS_FAILED
    return EXIT_OK


# --- validate -----------------------------------------------------------------


def cmd_validate(args) -> int:
    if args.list:
        for name in oracles.ORACLE_NAMES:
            print(name)
        return EXIT_OK
    run = _load(args)
    results = oracles.run_all(run.solver, run.pso)
    for r in results:
        print(f"{r.name:28s} {'PASS' if r.passed else 'FAIL'}  value={r.value:.3e}  limit={r.limit:.3e}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECKS_FAILED


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="configuration file ([ldi], [solver], [pso], [run], [device])")
    common.add_argument("-s", "--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable); use section.key when ambiguous")
    common.add_argument("-o", "--out", help="output directory")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (default %(default)s)")

    parser = argparse.ArgumentParser(prog="ldisim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize", parents=[common], help="device output and transfer curves")
    p.add_argument("--device", choices=["p", "n"], help="device polarity preset")
    p.add_argument("--bend", choices=["flat", "bent"], help="bending-state preset")
    p.add_argument("--vgs", type=_range, help="transfer-curve gate sweep start:stop:step (V)")
    p.add_argument("--vds-values", type=_floats, help="drain biases for transfer curves (V, comma-separated)")
    p.add_argument("--vds", type=_range, help="output-curve drain sweep start:stop:step (V)")
    p.add_argument("--vgs-values", type=_floats, help="gate biases for output curves (V, comma-separated)")
    p.add_argument("--hysteresis", action="store_true", help="enable the trap-state threshold shift")
    p.add_argument("--sweep-dt", type=float, default=0.1, help="time per sweep point for hysteresis (s)")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("step", parents=[common], help="synapse step response for several weighting voltages")
    p.add_argument("--vw", type=_floats, default=[9.0, 10.0, 11.0], help="weighting voltages (V)")
    p.add_argument("--cycles", type=int, default=3, help="pulse cycles (default %(default)s)")
    p.add_argument("--tail", type=float, default=2.0, help="settling time after the last cycle (s)")
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("fit", parents=[common], help="fit time constants to a trace CSV")
    p.add_argument("trace", help="CSV with t_s,i_syn_A columns")
    p.add_argument("--pulse", help='pulse description, e.g. "period=2 width=1"; default from the config')
    p.add_argument("--phase", choices=["charge", "discharge", "both"], default="both")
    p.add_argument("--discard-first", type=int, help="leading cycles to drop (default from the config)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", parents=[common], help="run an experiment matrix")
    p.add_argument("spec", help=f"preset ({', '.join(PRESETS)}) or sweep file with list-valued [ldi] keys")
    p.add_argument("--strict", action="store_true", help="exit nonzero when any pass flag fails")
    p.add_argument("--workers", type=int, help="worker processes (default: LDI_SIM_THREADS or CPU count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common], help="run the solver and fitter oracle checks")
    p.add_argument("--list", action="store_true", help="list oracle names without running them")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InsufficientDataError, DegenerateTraceError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
