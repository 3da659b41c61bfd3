import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldisim import ofet, oracles
from ldisim.circuit import (
    Capacitor,
    CircuitState,
    CurrentProbe,
    CurrentSource,
    Method,
    Netlist,
    Resistor,
    SolverConfig,
    StepWaveform,
    Transistor,
    VoltageSource,
    _Assembler,
    dc_operating_point,
    initial_state,
    read_trace_csv,
    stamp,
    transient,
    write_trace_csv,
)
from ldisim.errors import ConfigurationError, ConvergenceError, InvalidInputError
from ldisim.ofet import NO_HYSTERESIS, Polarity
from ldisim.presets import LdiConfig, build_ldi, rest_state
from ldisim.stimulus import PulseTrain

N_OFF = ofet.flat_preset(Polarity.N)


def rc(r=1e6, c=1e-6, v=15.0):
    return Netlist(
        ["0", "in", "out"],
        [
            VoltageSource("V", "in", "0", StepWaveform(v)),
            Resistor("R", "in", "out", r),
            Capacitor("C", "out", "0", c),
            CurrentProbe("I_C", "C", "b"),
        ],
    )


# --- netlist ----------------------------------------------------------------


def test_netlist_rejects_unknown_node():
    with pytest.raises(ConfigurationError):
        Netlist(["0", "a"], [Capacitor("C", "a", "b", 1e-9)])


def test_netlist_rejects_two_grounds():
    with pytest.raises(ConfigurationError):
        Netlist(["0", "gnd", "a"], [Capacitor("C", "a", "0", 1e-9), Capacitor("C2", "a", "gnd", 1e-9)])


def test_netlist_rejects_nonpositive_capacitance():
    with pytest.raises(ConfigurationError):
        Netlist(["0", "a"], [Capacitor("C", "a", "0", 0.0)])


def test_netlist_rejects_dangling_node():
    with pytest.raises(ConfigurationError):
        Netlist(["0", "a", "b"], [Capacitor("C", "a", "0", 1e-9)])


def test_netlist_rejects_bad_probe():
    with pytest.raises(ConfigurationError):
        Netlist(["0", "a"], [Capacitor("C", "a", "0", 1e-9), CurrentProbe("P", "nope")])
    with pytest.raises(ConfigurationError):
        Netlist(["0", "a"], [Capacitor("C", "a", "0", 1e-9), CurrentProbe("P", "C", "drain")])


def test_solver_config_invariants():
    with pytest.raises(ConfigurationError):
        SolverConfig(dt_min=1e-3, dt_initial=1e-4)
    with pytest.raises(ConfigurationError):
        SolverConfig(newton_abs_tol=0.0)
    with pytest.raises(ConfigurationError):
        SolverConfig(max_newton_iters=0)


# --- DC -----------------------------------------------------------------------


def test_dc_source_pins_node():
    net = Netlist(["0", "a"], [VoltageSource("V", "a", "0", 15.0)])
    st = dc_operating_point(net)
    assert st.voltage(net, "a") == 15.0


def test_dc_divider_of_equal_off_floors():
    net = Netlist(
        ["0", "vdd", "g", "mid"],
        [
            VoltageSource("V", "vdd", "0", 15.0),
            VoltageSource("VG", "g", "0", -60.0),
            Transistor("T1", N_OFF, gate="g", drain="vdd", source="mid"),
            Transistor("T2", N_OFF, gate="g", drain="mid", source="0"),
        ],
    )
    st = dc_operating_point(net)
    # the 1e-15 S DC gmin against 3.5e-10 S floors moves the midpoint by ~1e-5 V
    assert st.voltage(net, "mid") == pytest.approx(7.5, abs=1e-4)


def _ldi_rest_brute_force(cfg: LdiConfig) -> float:
    """Solve the two-node rest bias by nested bisection on a dense v_syn grid."""
    net = build_ldi(cfg)
    m_tau, m_w, m_pre = (net.element(n) for n in ("M_tau", "M_W", "M_pre"))
    v_dd, v_w, v_pre = cfg.v_dd, cfg.v_w, cfg.pulse.level_low

    def i_w(v_syn, v_x):  # current from syn through M_W into x
        return -ofet.drain_current(m_w.params, NO_HYSTERESIS, v_w - v_syn, v_x - v_syn)

    def x_of(v_syn):
        lo, hi = -1.0, v_syn
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            r = i_w(v_syn, mid) - ofet.drain_current(m_pre.params, NO_HYSTERESIS, v_pre, mid)
            lo, hi = (mid, hi) if r > 0 else (lo, mid)
        return 0.5 * (lo + hi)

    def kcl(v_syn):  # current arriving at syn from M_tau minus the current leaving through M_W
        i_tau = -ofet.drain_current(m_tau.params, NO_HYSTERESIS, cfg.v_tau - v_dd, v_syn - v_dd)
        return i_tau - i_w(v_syn, x_of(v_syn))

    grid = np.linspace(0.0, v_dd, 1501)
    r = np.array([kcl(v) for v in grid])
    k = int(np.nonzero(np.sign(r[:-1]) != np.sign(r[1:]))[0][-1])
    fine = np.linspace(grid[k], grid[k + 1], 101)
    rf = np.array([kcl(v) for v in fine])
    return float(fine[int(np.argmin(np.abs(rf)))])


@pytest.mark.parametrize("bend", ["Flat", "Bent"])
def test_ldi_rest_matches_brute_force(bend):
    cfg = LdiConfig(bend=bend)
    net = build_ldi(cfg)
    v_syn = rest_state(cfg).voltage(net, "syn")
    assert v_syn == pytest.approx(_ldi_rest_brute_force(cfg), abs=1e-3)


def test_dc_residual_guarantee():
    cfg = LdiConfig()
    net = build_ldi(cfg)
    state = rest_state(cfg)
    conf = SolverConfig()
    f, _, iscale = _Assembler(net).assemble(state.x, 0.0, True, state.hysteresis, None)
    n = len(net.unknown_nodes)
    # gmin contributes at most dc_gmin * |V|
    limit = conf.newton_abs_tol + conf.newton_rel_tol * iscale + conf.dc_gmin * 20
    assert np.all(np.abs(f[:n]) <= limit)


# --- transient ------------------------------------------------------------------


def test_rc_step_closed_form():
    net = rc()
    tr = transient(net, initial_state(net), SolverConfig(), 1.0)
    assert tr.t[-1] == pytest.approx(1.0)
    assert tr.v("out")[-1] == pytest.approx(15.0 * (1.0 - math.exp(-1.0)), rel=1e-3)


@pytest.mark.parametrize("method", list(Method))
def test_rc_fixed_step_at_tau_over_1000(method):
    assert oracles.rc_step_error(method, oracles.RC_TAU / 1000) < oracles.RC_TOLERANCE


@pytest.mark.parametrize("method", list(Method))
def test_current_ramp_slope_exact(method):
    slope = oracles.ramp_slope(method, current=2e-6, c=4e-9)
    assert slope == pytest.approx(500.0, rel=1e-9)


@pytest.mark.parametrize("method", list(Method))
def test_convergence_order(method):
    assert oracles.observed_order(method) >= oracles.ORDER_MIN[method]


def test_zero_source_network_stays_quiescent():
    net = Netlist(
        ["0", "a", "b"],
        [
            Capacitor("C1", "a", "0", 1e-9),
            Capacitor("C2", "b", "0", 2e-9),
            Transistor("T", N_OFF, gate="a", drain="b", source="0"),
        ],
    )
    tr = transient(net, initial_state(net), SolverConfig(), 0.5)
    assert np.all(tr.voltages == 0.0)


@pytest.mark.parametrize("method", list(Method))
def test_charge_consistency(method):
    net = rc(r=1e5, c=1e-8, v=1.0)
    tr = transient(net, initial_state(net), SolverConfig(method=method, dt_initial=1e-5), 5e-3)
    i = tr.i("I_C")
    q = 0.0
    for k in range(1, len(tr.t)):
        h = tr.t[k] - tr.t[k - 1]
        if tr.methods[k] == Method.BACKWARD_EULER.value:
            q += h * i[k]
        else:
            q += 0.5 * h * (i[k] + i[k - 1])
    dv = tr.v("out")[-1] - tr.v("out")[0]
    assert q == pytest.approx(1e-8 * dv, abs=SolverConfig().newton_abs_tol * tr.t[-1])


def test_transient_is_deterministic():
    cfg = LdiConfig()
    cfg = cfg.with_(pulse=PulseTrain(1.0, 0.5, n_cycles=2))
    net = build_ldi(cfg)
    a = transient(net, rest_state(cfg), SolverConfig(), 2.0)
    b = transient(net, rest_state(cfg), SolverConfig(), 2.0)
    assert np.array_equal(a.t, b.t)
    assert np.array_equal(a.voltages, b.voltages)
    assert np.array_equal(a.i("I_syn"), b.i("I_syn"))


def test_breakpoints_are_time_points():
    cfg = LdiConfig()
    cfg = cfg.with_(pulse=PulseTrain(1.0, 0.5, n_cycles=2))
    net = build_ldi(cfg)
    tr = transient(net, rest_state(cfg), SolverConfig(), 2.0)
    for edge, _ in cfg.pulse.edges():
        if 0 < edge < 2.0:
            assert np.min(np.abs(tr.t - edge)) < 1e-12


def test_sampling_grid_and_exact_source_nodes():
    net = rc(r=1e5, c=1e-8, v=1.0)
    tr = transient(net, initial_state(net), SolverConfig(), 5e-3, sample_dt=1e-4)
    assert len(tr.t) == 51
    assert np.allclose(np.diff(tr.t), 1e-4)
    assert np.all(tr.v("in") == 1.0)


def test_convergence_failure_reports_time():
    net = rc()
    with pytest.raises(ConvergenceError) as info:
        transient(net, initial_state(net), SolverConfig(max_newton_iters=1, voltage_step_limit=1e-3), 1.0)
    assert info.value.time is not None


def test_transient_rejects_bad_inputs():
    net = rc()
    with pytest.raises(InvalidInputError):
        transient(net, initial_state(net), SolverConfig(), 0.0)
    with pytest.raises(InvalidInputError):
        transient(net, CircuitState(0.0, np.zeros(1), (), 1), SolverConfig(), 1.0)


# --- stamps -------------------------------------------------------------------


def test_capacitor_companion_conductance():
    net = rc(c=10e-9)
    J, f, nodes = stamp(net.element("C"), net, initial_state(net), dt=1e-3, method=Method.BACKWARD_EULER)
    assert nodes == ("out",)
    assert J[0, 0] == pytest.approx(1e-5)
    assert f[0] == 0.0
    J_tr, _, _ = stamp(net.element("C"), net, initial_state(net), dt=1e-3, method=Method.TRAPEZOIDAL)
    assert J_tr[0, 0] == pytest.approx(2e-5)


def test_voltage_source_constraint_row():
    net = Netlist(["0", "a"], [VoltageSource("V", "a", "0", 3.0), Capacitor("C", "a", "0", 1e-9)])
    state = initial_state(net, {"a": 2.5})
    J, f, nodes = stamp(net.element("V"), net, state)
    assert nodes == ("a",)
    assert J[1, 0] == 1.0 and J[0, 1] == 1.0
    assert f[1] == pytest.approx(-0.5)


@settings(max_examples=40, deadline=None)
@given(vg=st.floats(-30, 30), vd=st.floats(-30, 30), vs=st.floats(-30, 30))
def test_transistor_stamp_uses_conductances(vg, vd, vs):
    p = ofet.flat_preset(Polarity.P)
    net = Netlist(
        ["0", "g", "d", "s"],
        [Transistor("T", p, gate="g", drain="d", source="s"), Capacitor("Cg", "g", "0", 1e-9)],
    )
    state = initial_state(net, {"g": vg, "d": vd, "s": vs})
    J, f, nodes = stamp(net.element("T"), net, state)
    g_m, g_ds = ofet.conductances(p, NO_HYSTERESIS, vg - vs, vd - vs)
    i_d = ofet.drain_current(p, NO_HYSTERESIS, vg - vs, vd - vs)
    d, s, g = nodes.index("d"), nodes.index("s"), nodes.index("g")
    assert f[d] == pytest.approx(i_d, rel=1e-12, abs=1e-30)
    assert f[s] == pytest.approx(-i_d, rel=1e-12, abs=1e-30)
    assert J[d, g] == pytest.approx(g_m, rel=1e-12, abs=1e-30)
    assert J[d, d] == pytest.approx(g_ds, rel=1e-12, abs=1e-30)
    assert J[d, s] == pytest.approx(-(g_m + g_ds), rel=1e-12, abs=1e-30)


# --- CSV ----------------------------------------------------------------------


def test_trace_csv_round_trip(tmp_path):
    t = np.array([0.0, 0.001, 0.002])
    i = np.array([1e-9, 1.12345678901234e-9, 2e-9])
    v = np.array([10.0, 10.0, -10.0])
    path = tmp_path / "trace.csv"
    write_trace_csv(path, t, i, v, {"syn": np.array([14.9, 14.8, 14.7])})
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"t_s,i_syn_A,v_pre_V,v_node_syn"
    back = read_trace_csv(path)
    assert np.array_equal(back["i_syn_A"], i)
    assert np.array_equal(back["v_node_syn"], [14.9, 14.8, 14.7])


@pytest.mark.parametrize("text", ["", "a,b\n1,2\n", "t_s,i_syn_A\n0,x\n", "t_s,i_syn_A\n0,1,2\n", "t_s,i_syn_A\n0,nan\n"])
def test_trace_csv_rejects_malformed(tmp_path, text):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(InvalidInputError):
        read_trace_csv(path)


def test_current_source_into_capacitor_probe():
    net = Netlist(["0", "n"], [CurrentSource("I", "0", "n", 1e-6), Capacitor("C", "n", "0", 1e-8),
                               CurrentProbe("P", "C", "b")])
    tr = transient(net, initial_state(net), SolverConfig.fixed_step(1e-4), 1e-3)
    assert np.allclose(tr.i("P")[1:], 1e-6, rtol=1e-9)
