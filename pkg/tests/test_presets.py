import numpy as np
import pytest

from ldisim import ofet
from ldisim.circuit import Capacitor, SolverConfig, Transistor, VoltageSource, transient
from ldisim.errors import ConfigurationError
from ldisim.ofet import Polarity
from ldisim.presets import (
    I_SYN_PROBE,
    P_TYPE_C_DIEL,
    P_TYPE_SS,
    PRESETS,
    Bend,
    LdiConfig,
    bias_margin_check,
    build_ldi,
    rest_state,
    table2,
    table3,
    table6,
)
from ldisim.stimulus import PulseTrain


def test_table2_netlist_composition():
    net = build_ldi(LdiConfig(v_w=10.0, c_syn=10e-9, v_tau=9.0, v_dd=15.0, pulse=PulseTrain(4.0, 2.0)))
    assert net.count(Transistor) == 4
    assert net.count(Capacitor) == 1
    assert net.count(VoltageSource) == 4


def test_weight_transistor_stacked_above_input_switch():
    net = build_ldi(LdiConfig())
    assert net.element("M_W").source == "syn"
    assert net.element("M_W").drain == net.element("M_pre").drain == "x"
    assert net.element("M_pre").source == "0"


@pytest.mark.parametrize("kw", [{"c_syn": 0.0}, {"c_syn": -1e-9}, {"v_tau": 15.0}, {"v_tau": 16.0}])
def test_config_invariants(kw):
    with pytest.raises(ConfigurationError):
        LdiConfig(**kw)


def test_device_mapping():
    flat, bent = LdiConfig(), LdiConfig(bend=Bend.BENT)
    p = flat.device(Polarity.P)
    assert (p.v_t, p.ss, p.c_diel) == (5.35, P_TYPE_SS, P_TYPE_C_DIEL)
    assert bent.device(Polarity.P).v_t == 5.98
    assert flat.device(Polarity.N).v_t == pytest.approx(3.0)
    # bending shifts the switch threshold as it shifts the measured one
    assert bent.device(Polarity.N).v_t == pytest.approx(3.0 + 0.99)
    assert bent.device(Polarity.N).i_off == pytest.approx(4.52e-9)


def test_input_switch_is_on_high_and_off_low():
    n = LdiConfig().device(Polarity.N)
    channel = n.with_(i_off=0.0)
    on = ofet.drain_current(channel, ofet.NO_HYSTERESIS, 10.0, 1.0)
    off = ofet.drain_current(channel, ofet.NO_HYSTERESIS, -10.0, 1.0)
    assert on > 1e6 * off
    # with the floor included the switch still passes far more current when ON
    assert ofet.drain_current(n, ofet.NO_HYSTERESIS, 10.0, 1.0) > 50 * n.g_off


def test_bias_margin_default_passes():
    m = bias_margin_check(LdiConfig())
    assert m.passed
    assert m.i_tau > 6.92e-9
    assert m.i_off_pre == 6.92e-9


def test_bias_margin_fails_with_tau_gate_at_supply():
    assert not bias_margin_check(LdiConfig(), v_tau=15.0).passed


def test_bias_margin_uses_bent_floor():
    m = bias_margin_check(LdiConfig(bend=Bend.BENT))
    assert m.i_off_pre == pytest.approx(6.92e-9 - 2.4e-9)
    assert m.passed


def test_bias_margin_passes_for_every_preset_cell():
    for name, make in PRESETS.items():
        for cfg in make(1):
            assert bias_margin_check(cfg).passed, (name, cfg.condition())


def test_matrices():
    assert len(table2()) == 3
    assert [c.v_w for c in table2()] == [9.0, 10.0, 11.0]
    t3 = table3()
    assert len(t3) == 8
    assert {c.condition()["c_syn_nf"] for c in t3} == {4.7, 10.0}
    assert {(c.pulse.period, c.pulse.width) for c in t3} == {(2.0, 1.0), (1.0, 0.5)}
    t6 = table6()
    assert len(t6) == 8
    assert {c.v_w for c in t6} == {9.5, 9.8}
    assert {(c.pulse.period, c.pulse.width) for c in t6} == {(4.0, 2.0), (2.0, 1.0)}
    assert all(c.c_syn == 10e-9 for c in t6)
    for cells in (t3, t6):
        assert len({tuple(sorted(c.condition().items())) for c in cells}) == 8
        assert all(c.pulse.n_cycles == 18 for c in cells)


def _run(cfg, t_end):
    net = build_ldi(cfg)
    return transient(net, rest_state(cfg), SolverConfig(), t_end, sample_dt=1e-3)


def test_held_high_rises_then_decays_monotonically():
    cfg = LdiConfig(pulse=PulseTrain(3.0, 3.0, n_cycles=1))
    tr = _run(cfg, 6.0)
    i = tr.i(I_SYN_PROBE)
    high = tr.t < 3.0
    rise, fall = i[high], i[tr.t > 3.0]
    assert np.all(np.diff(rise) >= -1e-18)
    assert rise[-1] > 1.2 * rise[0]
    assert np.all(np.diff(fall) <= 1e-18)
    # recovers toward the resting level
    assert fall[-1] < rise[0] + 0.05 * (rise[-1] - rise[0])
    v_syn = tr.v("syn")
    assert v_syn[-1] == pytest.approx(rest_state(cfg).voltage(build_ldi(cfg), "syn"), abs=5e-3)


def test_peak_decreases_with_weight_voltage():
    peaks = []
    for cfg in table2(2):
        peaks.append(float(np.max(_run(cfg, cfg.pulse.duration).i(I_SYN_PROBE))))
    assert peaks[0] > peaks[1] > peaks[2]
