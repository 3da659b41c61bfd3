"""Compact model for the p- and n-type organic field-effect transistors.

The channel current uses a single smooth forward/reverse blend::

    I_ch = I_spec * (F(V_ov) - F(V_ov - V_ds_on)),   F(v) = softplus(v / 2s)**2

with ``s = ss / ln(10)`` and ``I_spec = 4 K s**2``, ``K = mu * C_diel * W / (2 L)``.
Far below threshold this is exponential with ``ss`` volts per decade; far above
it reduces to the square law ``K * (2 V_ov V_ds - V_ds**2)`` in triode and
``K * V_ov**2`` in saturation.  Every regime boundary is C-infinity smooth.

Voltages are mapped to the "ON direction" of the device before evaluation:
``V_gs_on = V_gs`` and ``V_ds_on = V_ds`` for n-type, both negated for p-type.
The overdrive is ``V_ov = V_gs_on - v_t - delta_vt``, so the stored threshold
is the gate drive (in the ON direction) at which the channel turns on.  A
positive ``delta_vt`` from the trap state always makes the device harder to
turn on.

The OFF floor is a linear drain-source conductance ``i_off / V_REF_OFF``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .errors import ConfigurationError, InvalidInputError

LN10 = math.log(10.0)
EPS0_F_PER_CM = 8.8541878128e-14

#: Drain bias (magnitude, volts) at which the quoted OFF currents were measured.
V_REF_OFF = 20.0

#: Parylene film: 400 nm, relative permittivity 3.0.
DIELECTRIC_THICKNESS_CM = 400e-7
DIELECTRIC_EPS_R = 3.0
C_DIEL_DEFAULT = DIELECTRIC_EPS_R * EPS0_F_PER_CM / DIELECTRIC_THICKNESS_CM

DEFAULT_SS = 1.5
CHANNEL_WIDTH_UM = 1000.0
CHANNEL_LENGTH_UM = 100.0

I_OFF_P = 1.54e-10
I_OFF_N_FLAT = 6.92e-9
# bending lowers the n-type floor by 2.4 nA; p-type floor is unchanged
I_OFF_N_BENT = I_OFF_N_FLAT - 2.4e-9


class Polarity(str, Enum):
    P = "P"
    N = "N"

    @property
    def sign(self) -> int:
        return 1 if self is Polarity.N else -1


@dataclass(frozen=True)
class OfetParams:
    polarity: Polarity
    v_t: float
    mobility: float  # cm^2/(V s)
    width: float = CHANNEL_WIDTH_UM  # um
    length: float = CHANNEL_LENGTH_UM  # um
    c_diel: float = C_DIEL_DEFAULT  # F/cm^2
    ss: float = DEFAULT_SS  # V/decade
    i_off: float = 0.0  # A at V_REF_OFF
    lambda_: float = 0.0  # 1/V

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        for name in ("v_t", "mobility", "width", "length", "c_diel", "ss", "i_off", "lambda_"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"OfetParams.{name} must be finite")
        for name in ("mobility", "width", "length", "c_diel", "ss"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"OfetParams.{name} must be > 0")
        if self.i_off < 0:
            raise ConfigurationError("OfetParams.i_off must be >= 0")
        if self.lambda_ < 0:
            raise ConfigurationError("OfetParams.lambda_ must be >= 0")

    @property
    def k(self) -> float:
        """Square-law transconductance factor K in A/V^2."""
        return 0.5 * self.mobility * self.c_diel * self.width / self.length

    @property
    def slope(self) -> float:
        """Exponential slope voltage s = ss / ln 10."""
        return self.ss / LN10

    @property
    def i_spec(self) -> float:
        s = self.slope
        return 4.0 * self.k * s * s

    @property
    def g_off(self) -> float:
        return self.i_off / V_REF_OFF

    def with_(self, **changes) -> "OfetParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "polarity": self.polarity.value,
            "v_t": self.v_t,
            "mobility": self.mobility,
            "width": self.width,
            "length": self.length,
            "c_diel": self.c_diel,
            "ss": self.ss,
            "i_off": self.i_off,
            "lambda": self.lambda_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OfetParams":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        kw = {k: (v if k == "polarity" else float(v)) for k, v in d.items()}
        return cls(**kw)


@dataclass(frozen=True)
class HysteresisState:
    """Phenomenological trap state: a threshold shift relaxing toward alpha * overdrive."""

    delta_vt: float = 0.0
    tau_trap: float = 1.0
    alpha: float = 0.0
    enabled: bool = False

    def effective_shift(self) -> float:
        return self.delta_vt if self.enabled else 0.0


NO_HYSTERESIS = HysteresisState()

# Measured threshold (V) and mobility (cm^2/Vs) per bending state and polarity
_MEASURED = {
    ("flat", Polarity.P): (5.35, 0.31),
    ("bent", Polarity.P): (5.98, 0.34),
    ("flat", Polarity.N): (-19.39, 0.050),
    ("bent", Polarity.N): (-18.4, 0.052),
}
_I_OFF = {
    ("flat", Polarity.P): I_OFF_P,
    ("bent", Polarity.P): I_OFF_P,
    ("flat", Polarity.N): I_OFF_N_FLAT,
    ("bent", Polarity.N): I_OFF_N_BENT,
}


def _preset(bend: str, polarity) -> OfetParams:
    polarity = Polarity(polarity)
    v_t, mu = _MEASURED[(bend, polarity)]
    return OfetParams(polarity=polarity, v_t=v_t, mobility=mu, i_off=_I_OFF[(bend, polarity)])


def flat_preset(polarity) -> OfetParams:
    return _preset("flat", polarity)


def bent_preset(polarity) -> OfetParams:
    return _preset("bent", polarity)


def preset(bend: str, polarity) -> OfetParams:
    bend = bend.lower()
    if bend not in ("flat", "bent"):
        raise ConfigurationError(f"unknown bend state {bend!r}")
    return _preset(bend, polarity)


def _softplus(u: float) -> float:
    if u > 30.0:
        return u + math.exp(-u)
    return math.log1p(math.exp(u))


def _sigmoid(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InvalidInputError(f"non-finite bias {v!r}")


def overdrive(params: OfetParams, hyst: HysteresisState, v_gs: float) -> float:
    """Gate overdrive in the ON direction (positive means more ON)."""
    return params.polarity.sign * v_gs - params.v_t - hyst.effective_shift()


def _evaluate(params: OfetParams, hyst: HysteresisState, v_gs: float, v_ds: float):
    sign = params.polarity.sign
    s2 = 2.0 * params.slope
    v_ov = sign * v_gs - params.v_t - hyst.effective_shift()
    v_ds_on = sign * v_ds
    uf = v_ov / s2
    ur = (v_ov - v_ds_on) / s2
    pf = _softplus(uf)
    pr = _softplus(ur)
    i_spec = params.i_spec
    ich = i_spec * (pf * pf - pr * pr)
    # d(softplus^2)/dv = 2 softplus * sigmoid / (2s)
    dff = i_spec * 2.0 * pf * _sigmoid(uf) / s2
    dfr = i_spec * 2.0 * pr * _sigmoid(ur) / s2
    # derivatives in ON-direction coordinates
    dich_dvov = dff - dfr
    dich_dvds_on = dfr
    lam = params.lambda_
    if lam:
        clm = 1.0 + lam * abs(v_ds_on)
        dclm = lam * (1.0 if v_ds_on >= 0 else -1.0)
        dich_dvds_on = dich_dvds_on * clm + ich * dclm
        dich_dvov *= clm
        ich *= clm
    g_off = params.g_off
    i_d = sign * ich + g_off * v_ds
    # sign**2 == 1 for the chain rule back to terminal voltages
    g_m = dich_dvov
    g_ds = dich_dvds_on + g_off
    return i_d, g_m, g_ds


def drain_current(params: OfetParams, hyst: HysteresisState, v_gs: float, v_ds: float) -> float:
    """Current flowing into the drain terminal (amperes, signed)."""
    _check_finite(v_gs, v_ds)
    return _evaluate(params, hyst, v_gs, v_ds)[0]


def conductances(params: OfetParams, hyst: HysteresisState, v_gs: float, v_ds: float):
    """Return ``(g_m, g_ds)``: partial derivatives of drain_current wrt v_gs and v_ds."""
    _check_finite(v_gs, v_ds)
    _, g_m, g_ds = _evaluate(params, hyst, v_gs, v_ds)
    return g_m, g_ds


def evaluate(params: OfetParams, hyst: HysteresisState, v_gs: float, v_ds: float):
    """Current and both conductances in one pass (used by the Newton loop)."""
    return _evaluate(params, hyst, v_gs, v_ds)


def step_hysteresis(state: HysteresisState, v_overdrive: float, dt: float) -> HysteresisState:
    """Advance the trap state by ``dt`` with the exact first-order update."""
    if not state.enabled:
        return state
    if not state.tau_trap > 0:
        raise ConfigurationError("tau_trap must be > 0 when hysteresis is enabled")
    if not dt > 0:
        raise InvalidInputError("dt must be > 0")
    _check_finite(v_overdrive, dt)
    target = state.alpha * v_overdrive
    decay = math.exp(-dt / state.tau_trap)
    return replace(state, delta_vt=target + (state.delta_vt - target) * decay)
