import csv

import numpy as np
import pytest

from ldisim import cli
from ldisim.circuit import write_trace_csv
from ldisim.oracles import ORACLE_NAMES
from ldisim.stimulus import PulseTrain


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def by_direction(transfer, direction):
    return {(r["v_ds_V"], r["v_gs_V"]): r["i_d_A"] for r in transfer if r["direction"] == direction}


def synthetic_trace(path, pulse, tau=0.05, dt=1e-3, lo=0.0, hi=3e-9):
    t = np.arange(int(round(pulse.duration / dt)) + 1) * dt
    i = np.empty_like(t)
    level = lo
    for k in range(len(t)):
        if k:
            target = hi if pulse.value_at(t[k - 1]) > 0 else lo
            level = target + (level - target) * np.exp(-dt / tau)
        i[k] = level
    write_trace_csv(path, t, i, np.array([pulse.value_at(x) for x in t]))


def test_characterize_p_type(tmp_path):
    assert cli.main(["characterize", "--device", "p", "--bend", "flat", "-o", str(tmp_path)]) == 0
    transfer = rows(tmp_path / "transfer.csv")
    assert by_direction(transfer, "forward") == by_direction(transfer, "reverse")
    assert (tmp_path / "output.csv").exists()
    assert "seed = 42" in (tmp_path / "run_config.ini").read_text()


def test_characterize_n_type_deep_off_floor(tmp_path):
    args = ["characterize", "--device", "n", "--vgs=-40:40:10", "--vds-values", "20", "-o", str(tmp_path)]
    assert cli.main(args) == 0
    deep_off = [r for r in rows(tmp_path / "transfer.csv") if float(r["v_gs_V"]) == -40.0]
    assert float(deep_off[0]["i_d_A"]) == pytest.approx(6.92e-9, rel=1e-3)


def test_characterize_hysteresis_opens_a_loop(tmp_path):
    assert cli.main(["characterize", "--device", "p", "--hysteresis", "-s", "alpha=0.2", "-o", str(tmp_path)]) == 0
    transfer = rows(tmp_path / "transfer.csv")
    fwd, rev = by_direction(transfer, "forward"), by_direction(transfer, "reverse")
    assert fwd.keys() == rev.keys()
    assert not np.allclose([float(fwd[k]) for k in fwd], [float(rev[k]) for k in fwd], rtol=1e-3, atol=0)


def test_characterize_bad_preset():
    with pytest.raises(SystemExit) as exc:
        cli.main(["characterize", "--device", "q"])
    assert exc.value.code == 2


def test_bad_override_is_usage_error(tmp_path):
    assert cli.main(["characterize", "-s", "nonsense=1", "-o", str(tmp_path)]) == 2
    assert cli.main(["validate", "-c", str(tmp_path / "missing.ini")]) == 2


def test_step_peaks_decrease_and_reproduce(tmp_path):
    args = ["step", "--cycles", "2", "--tail", "0.5"]
    assert cli.main(args + ["-o", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["-o", str(tmp_path / "b")]) == 0
    peaks = [float(r["peak_i_syn_A"]) for r in rows(tmp_path / "a" / "peaks.csv")]
    assert peaks[0] > peaks[1] > peaks[2]
    header = (tmp_path / "a" / "step.csv").read_text().splitlines()[0]
    assert header == "t_s,v_pre_V,i_syn_vw9_A,i_syn_vw10_A,i_syn_vw11_A"
    for name in ("step.csv", "peaks.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_step_solver_failure_exit_code(tmp_path):
    args = ["step", "--vw", "10", "--cycles", "1", "-s", "max_newton_iters=1",
            "-s", "voltage_step_limit_v=0.001", "-o", str(tmp_path)]
    assert cli.main(args) == 3


def test_fit_recovers_time_constant(tmp_path, capsys):
    pulse = PulseTrain(1.0, 0.5, n_cycles=5)
    trace = tmp_path / "trace.csv"
    synthetic_trace(trace, pulse, tau=0.05)
    out = tmp_path / "fit"
    assert cli.main(["fit", str(trace), "--pulse", "period=1 width=0.5 cycles=5", "-o", str(out)]) == 0
    by_phase = {r["phase"]: r for r in rows(out / "stats.csv")}
    for phase in ("Charge", "Discharge"):
        assert float(by_phase[phase]["mean_ms"]) == pytest.approx(50.0, rel=0.01)
        assert by_phase[phase]["n"] == "4"
    assert "Charge" in capsys.readouterr().out


def test_fit_one_cycle_is_data_error(tmp_path):
    pulse = PulseTrain(1.0, 0.5, n_cycles=1)
    trace = tmp_path / "trace.csv"
    synthetic_trace(trace, pulse)
    assert cli.main(["fit", str(trace), "--pulse", "period=1 width=0.5 cycles=1", "-o", str(tmp_path)]) == 4


def test_fit_flat_trace_is_data_error(tmp_path):
    t = np.arange(3001) * 1e-3
    trace = tmp_path / "flat.csv"
    write_trace_csv(trace, t, np.full_like(t, 2e-9), np.zeros_like(t))
    assert cli.main(["fit", str(trace), "--pulse", "period=1 width=0.5 cycles=3", "-o", str(tmp_path)]) == 4


def test_fit_malformed_csv(tmp_path):
    trace = tmp_path / "bad.csv"
    trace.write_text("time,current\n0,1\n")
    assert cli.main(["fit", str(trace), "-o", str(tmp_path)]) == 2
    trace.write_text("t_s,i_syn_A\n0,1\n0,2\n0,3\n")
    assert cli.main(["fit", str(trace), "-o", str(tmp_path)]) == 2


def test_sweep_unknown_spec():
    assert cli.main(["sweep", "table99"]) == 2


def test_sweep_file_and_strict_mode(tmp_path):
    sweep = tmp_path / "mini.ini"
    sweep.write_text("[ldi]\nbend = Flat\nperiod_s = 2\nwidth_s = 1\nc_syn_nf = 10\ncycles = 3\n")
    assert cli.main(["sweep", str(sweep), "-o", str(tmp_path / "ok"), "--strict"]) == 0
    assert (tmp_path / "ok" / "report.json").exists()
    # a fourfold larger dielectric capacitance makes the synapse too fast for the reference band
    fast = ["-s", "p_c_diel_f_per_m2=9.2e-8"]
    assert cli.main(["sweep", str(sweep), "-o", str(tmp_path / "lax")] + fast) == 0
    assert cli.main(["sweep", str(sweep), "-o", str(tmp_path / "strict"), "--strict"] + fast) == 1


def test_validate_list(capsys):
    assert cli.main(["validate", "--list"]) == 0
    assert capsys.readouterr().out.split() == list(ORACLE_NAMES)


def test_validate_passes_by_default(tmp_path):
    assert cli.main(["validate", "-o", str(tmp_path)]) == 0


def test_validate_detects_coarse_step(tmp_path, capsys):
    assert cli.main(["validate", "-s", "dt_max_s=0.1", "-o", str(tmp_path)]) == 1
    assert "FAIL" in capsys.readouterr().out
