"""The log-domain integrator synapse netlist and its experiment parameterizations.

Topology::

    vdd ──┬──────────────┬─────────────┐
          │ C_syn        │ M_tau (p)   │ M_syn (p), gate = syn
          │              │ gate = vtau │
    syn ──┴──────────────┘             └── drain -> ammeter -> ground (I_syn)
     │
     M_W (p), source = syn, gate = vw
     │
     x
     │
     M_pre (n), gate = pre pulse, source = ground
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from enum import Enum

from . import ofet
from .circuit import (
    Capacitor,
    CircuitState,
    CurrentProbe,
    Netlist,
    SolverConfig,
    Transistor,
    VoltageSource,
    dc_operating_point,
)
from .errors import ConfigurationError
from .ofet import OfetParams, Polarity
from .stimulus import PulseTrain


class Bend(str, Enum):
    FLAT = "Flat"
    BENT = "Bent"


#: Gate threshold used for M_pre instead of the measured n-type value, so that
#: +10 V turns it ON and -10 V turns it OFF.
MPRE_EFFECTIVE_VT = 3.0

#: Calibration of the p-type devices inside the synapse (see README);
#: ``harness.calibrate_current_scale`` re-derives the current scale.
P_TYPE_SS = 2.5
P_TYPE_CURRENT_SCALE = 3.48
P_TYPE_C_DIEL = ofet.C_DIEL_DEFAULT * P_TYPE_CURRENT_SCALE

I_SYN_PROBE = "I_syn"
NODES = ("0", "vdd", "vtau", "vw", "pre", "syn", "x")


@dataclass(frozen=True)
class LdiConfig:
    v_dd: float = 15.0
    v_tau: float = 9.0
    v_w: float = 10.0
    c_syn: float = 10e-9
    bend: Bend = Bend.FLAT
    pulse: PulseTrain = field(default_factory=lambda: PulseTrain(4.0, 2.0))
    mpre_effective_vt: float = MPRE_EFFECTIVE_VT
    p_ss: float = P_TYPE_SS
    p_c_diel: float = P_TYPE_C_DIEL
    n_ss: float = ofet.DEFAULT_SS

    def __post_init__(self):
        object.__setattr__(self, "bend", Bend(self.bend))
        if not self.c_syn > 0:
            raise ConfigurationError("c_syn must be > 0")
        if not self.v_dd > self.v_tau:
            raise ConfigurationError("v_dd must exceed v_tau so that M_tau conducts")

    def with_(self, **changes) -> "LdiConfig":
        return replace(self, **changes)

    def condition(self) -> dict:
        return {
            "bend": self.bend.value,
            "period_s": self.pulse.period,
            "width_s": self.pulse.width,
            "v_w": self.v_w,
            "c_syn_nf": round(self.c_syn * 1e9, 6),
        }

    def device(self, polarity: Polarity) -> OfetParams:
        base = ofet.preset(self.bend.value.lower(), polarity)
        if polarity is Polarity.P:
            return base.with_(ss=self.p_ss, c_diel=self.p_c_diel)
        # shift the effective switching threshold by the same amount bending
        # shifts the measured n-type threshold
        shift = base.v_t - ofet.flat_preset(Polarity.N).v_t
        return base.with_(v_t=self.mpre_effective_vt + shift, ss=self.n_ss)


def build_ldi(config: LdiConfig) -> Netlist:
    p = config.device(Polarity.P)
    n = config.device(Polarity.N)
    elements = [
        VoltageSource("V_DD", "vdd", "0", config.v_dd),
        VoltageSource("V_tau", "vtau", "0", config.v_tau),
        VoltageSource("V_W", "vw", "0", config.v_w),
        VoltageSource("V_pre", "pre", "0", config.pulse),
        Capacitor("C_syn", "vdd", "syn", config.c_syn),
        Transistor("M_tau", p, gate="vtau", drain="syn", source="vdd"),
        Transistor("M_W", p, gate="vw", drain="x", source="syn"),
        Transistor("M_pre", n, gate="pre", drain="x", source="0"),
        Transistor("M_syn", p, gate="syn", drain="0", source="vdd"),
        CurrentProbe(I_SYN_PROBE, "M_syn", "drain"),
        CurrentProbe("I_tau", "M_tau", "drain"),
    ]
    return Netlist(NODES, elements)


def rest_state(config: LdiConfig, solver: SolverConfig | None = None) -> CircuitState:
    """DC operating point with the pre-synaptic input at its resting (low) level."""
    return dc_operating_point(build_ldi(config), t=0.0, left=True, config=solver)


@dataclass(frozen=True)
class BiasMargin:
    passed: bool
    i_tau: float
    i_off_pre: float
    v_syn: float

    def to_dict(self) -> dict:
        return {"passed": self.passed, "i_tau_A": self.i_tau, "i_off_pre_A": self.i_off_pre, "v_syn_V": self.v_syn}


def bias_margin_check(config: LdiConfig, v_tau: float | None = None) -> BiasMargin:
    """Compare M_tau's sourcing capability with the OFF floor of M_pre.

    M_tau's current is evaluated at its quiescent gate-source bias with the
    drain at the reference OFF bias (saturation), i.e. the current it can
    deliver to compensate M_pre's leakage.  ``v_tau`` evaluates the margin at
    another gate bias (including ``v_dd`` itself, which a config cannot hold).
    """
    net = build_ldi(config)
    state = rest_state(config)
    m_tau = net.element("M_tau")
    v_syn = state.voltage(net, "syn")
    v_gs = (config.v_tau if v_tau is None else v_tau) - config.v_dd
    i_tau = abs(ofet.drain_current(m_tau.params, ofet.NO_HYSTERESIS, v_gs, -ofet.V_REF_OFF))
    i_off = net.element("M_pre").params.i_off
    return BiasMargin(i_tau > i_off, i_tau, i_off, v_syn)


# --- experiment matrices -------------------------------------------------


def _pulse(period: float, width: float, n_cycles: int = 18) -> PulseTrain:
    return PulseTrain(period, width, 10.0, -10.0, n_cycles)


def table2(n_cycles: int = 3) -> list[LdiConfig]:
    """Step-response configurations, one per weighting voltage."""
    return [LdiConfig(v_w=vw, c_syn=10e-9, pulse=_pulse(4.0, 2.0, n_cycles)) for vw in (9.0, 10.0, 11.0)]


def table3(n_cycles: int = 18) -> list[LdiConfig]:
    """Capacitance x period x bend matrix (8 cells)."""
    out = []
    for c_nf, (period, width), bend in itertools.product(
        (4.7, 10.0), ((2.0, 1.0), (1.0, 0.5)), (Bend.FLAT, Bend.BENT)
    ):
        out.append(LdiConfig(v_w=10.0, c_syn=c_nf * 1e-9, bend=bend, pulse=_pulse(period, width, n_cycles)))
    return out


def table6(n_cycles: int = 18) -> list[LdiConfig]:
    """Weighting-voltage x period x bend matrix at 10 nF (8 cells)."""
    out = []
    for vw, (period, width), bend in itertools.product(
        (9.5, 9.8), ((4.0, 2.0), (2.0, 1.0)), (Bend.FLAT, Bend.BENT)
    ):
        out.append(LdiConfig(v_w=vw, c_syn=10e-9, bend=bend, pulse=_pulse(period, width, n_cycles)))
    return out


PRESETS = {"table2": table2, "table3": table3, "table6": table6}
