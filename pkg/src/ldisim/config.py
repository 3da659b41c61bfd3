"""Plain-text run configuration: ``[section]`` headers with ``key = value`` lines.

Every key has a default, so an empty file (or no file) is a valid
configuration. Overrides use ``key=value`` or ``section.key=value``; a bare
key must be unambiguous across sections.
"""

from __future__ import annotations

import configparser
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path

from . import ofet
from .circuit import Method, SolverConfig
from .errors import ConfigurationError
from .ofet import HysteresisState, OfetParams, Polarity
from .presets import LdiConfig
from .stimulus import PulseTrain
from .tau import PsoConfig

_LDI_DEFAULTS = LdiConfig()
_SOLVER_DEFAULTS = SolverConfig()
_PSO_DEFAULTS = PsoConfig()

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "ldi": {
        "v_dd": (float, _LDI_DEFAULTS.v_dd),
        "v_tau": (float, _LDI_DEFAULTS.v_tau),
        "v_w": (float, _LDI_DEFAULTS.v_w),
        "c_syn_nf": (float, _LDI_DEFAULTS.c_syn * 1e9),
        "bend": (str, _LDI_DEFAULTS.bend.value),
        "period_s": (float, _LDI_DEFAULTS.pulse.period),
        "width_s": (float, _LDI_DEFAULTS.pulse.width),
        "level_high_v": (float, _LDI_DEFAULTS.pulse.level_high),
        "level_low_v": (float, _LDI_DEFAULTS.pulse.level_low),
        "cycles": (int, _LDI_DEFAULTS.pulse.n_cycles),
        "phase": (str, _LDI_DEFAULTS.pulse.phase.value),
        "mpre_effective_vt": (float, _LDI_DEFAULTS.mpre_effective_vt),
        "p_ss": (float, _LDI_DEFAULTS.p_ss),
        "p_c_diel_f_per_m2": (float, _LDI_DEFAULTS.p_c_diel),
        "n_ss": (float, _LDI_DEFAULTS.n_ss),
    },
    "solver": {
        "method": (str, _SOLVER_DEFAULTS.method.value),
        "dt_initial_s": (float, _SOLVER_DEFAULTS.dt_initial),
        "dt_min_s": (float, _SOLVER_DEFAULTS.dt_min),
        "dt_max_s": (float, _SOLVER_DEFAULTS.dt_max),
        "newton_abs_tol_a": (float, _SOLVER_DEFAULTS.newton_abs_tol),
        "newton_rel_tol": (float, _SOLVER_DEFAULTS.newton_rel_tol),
        "max_newton_iters": (int, _SOLVER_DEFAULTS.max_newton_iters),
        "voltage_step_limit_v": (float, _SOLVER_DEFAULTS.voltage_step_limit),
        "lte_tol_v": (float, _SOLVER_DEFAULTS.lte_tol),
        "lte_control": (bool, _SOLVER_DEFAULTS.lte_control),
    },
    "pso": {
        "swarm_size": (int, _PSO_DEFAULTS.swarm_size),
        "iterations": (int, _PSO_DEFAULTS.iterations),
        "inertia": (float, _PSO_DEFAULTS.inertia),
        "cognitive": (float, _PSO_DEFAULTS.cognitive),
        "social": (float, _PSO_DEFAULTS.social),
        "tau_min_s": (float, _PSO_DEFAULTS.tau_bounds[0]),
        "tau_max_s": (float, _PSO_DEFAULTS.tau_bounds[1]),
        "amplitude_bound": (float, _PSO_DEFAULTS.amplitude_bound),
        "seed": (int, _PSO_DEFAULTS.seed),
    },
    "run": {
        "sample_dt_s": (float, 1e-3),
        "discard_first": (int, 1),
    },
    "device": {
        "polarity": (str, "P"),
        "bend": (str, "flat"),
        "v_t": (float, None),
        "mobility_cm2_per_vs": (float, None),
        "width_um": (float, None),
        "length_um": (float, None),
        "c_diel_f_per_m2": (float, None),
        "ss": (float, None),
        "i_off_a": (float, None),
        "lambda": (float, None),
        "hysteresis": (bool, False),
        "tau_trap_s": (float, 1.0),
        "alpha": (float, 0.0),
    },
}

_DEVICE_FIELDS = {
    "v_t": "v_t",
    "mobility_cm2_per_vs": "mobility",
    "width_um": "width",
    "length_um": "length",
    "c_diel_f_per_m2": "c_diel",
    "ss": "ss",
    "i_off_a": "i_off",
    "lambda": "lambda_",
}


def _coerce(section: str, key: str, raw) -> object:
    typ, _ = SCHEMA[section][key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return typ(text)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _resolve_key(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        return section, name
    hits = [s for s in SCHEMA if key in SCHEMA[s]]
    if not hits:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    if len(hits) > 1:
        raise ConfigurationError(f"key {key!r} is ambiguous; qualify it as one of "
                                 + ", ".join(f"{s}.{key}" for s in hits))
    return hits[0], key


def parse_overrides(items) -> dict[tuple[str, str], str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        out[_resolve_key(key.strip())] = value.strip()
    return out


@dataclass(frozen=True)
class RunConfig:
    ldi: LdiConfig = field(default_factory=LdiConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)
    sample_dt: float = 1e-3
    discard_first: int = 1
    device: OfetParams = field(default_factory=lambda: ofet.flat_preset(Polarity.P))
    hysteresis: HysteresisState = ofet.NO_HYSTERESIS
    values: dict = field(default_factory=dict, compare=False, repr=False)
    explicit: frozenset = field(default_factory=frozenset, compare=False, repr=False)

    def with_seed(self, seed: int) -> "RunConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals["pso"]["seed"] = int(seed)
        return _build(vals, self.explicit | {("pso", "seed")})

    def dumps(self) -> str:
        return dumps(self.values)


def _defaults() -> dict[str, dict[str, object]]:
    return {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}


def _build(vals: dict[str, dict[str, object]], explicit=frozenset()) -> RunConfig:
    lv, sv, pv, rv, dv = (vals[s] for s in ("ldi", "solver", "pso", "run", "device"))
    try:
        pulse = PulseTrain(lv["period_s"], lv["width_s"], lv["level_high_v"], lv["level_low_v"],
                           lv["cycles"], lv["phase"])
        ldi = LdiConfig(
            v_dd=lv["v_dd"], v_tau=lv["v_tau"], v_w=lv["v_w"], c_syn=lv["c_syn_nf"] * 1e-9,
            bend=lv["bend"].capitalize(), pulse=pulse, mpre_effective_vt=lv["mpre_effective_vt"],
            p_ss=lv["p_ss"], p_c_diel=lv["p_c_diel_f_per_m2"], n_ss=lv["n_ss"],
        )
        solver = SolverConfig(
            method=Method(sv["method"]), dt_initial=sv["dt_initial_s"], dt_min=sv["dt_min_s"],
            dt_max=sv["dt_max_s"], newton_abs_tol=sv["newton_abs_tol_a"],
            newton_rel_tol=sv["newton_rel_tol"], max_newton_iters=sv["max_newton_iters"],
            voltage_step_limit=sv["voltage_step_limit_v"], lte_tol=sv["lte_tol_v"],
            lte_control=sv["lte_control"],
        )
        pso = PsoConfig(
            swarm_size=pv["swarm_size"], iterations=pv["iterations"], inertia=pv["inertia"],
            cognitive=pv["cognitive"], social=pv["social"],
            tau_bounds=(pv["tau_min_s"], pv["tau_max_s"]), amplitude_bound=pv["amplitude_bound"],
            seed=pv["seed"],
        )
        device = ofet.preset(dv["bend"].lower(), Polarity(dv["polarity"].upper()))
        changes = {attr: dv[key] for key, attr in _DEVICE_FIELDS.items() if dv[key] is not None}
        device = device.with_(**changes)
        hyst = HysteresisState(0.0, dv["tau_trap_s"], dv["alpha"], dv["hysteresis"])
    except ValueError as exc:
        # ConfigurationError is a ValueError; enum lookups raise plain ValueError
        raise ConfigurationError(str(exc)) from None
    if not rv["sample_dt_s"] > 0:
        raise ConfigurationError("[run] sample_dt_s must be > 0")
    if rv["discard_first"] < 0:
        raise ConfigurationError("[run] discard_first must be >= 0")
    return RunConfig(ldi, solver, pso, rv["sample_dt_s"], rv["discard_first"], device, hyst, vals,
                     frozenset(explicit))


def loads(text: str = "", overrides=()) -> RunConfig:
    """Parse configuration text, apply overrides and build the typed objects."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from None
    vals = _defaults()
    explicit = set()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown configuration section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            vals[section][key] = _coerce(section, key, raw)
            explicit.add((section, key))
    for (section, key), raw in parse_overrides(overrides).items():
        vals[section][key] = _coerce(section, key, raw)
        explicit.add((section, key))
    return _build(vals, explicit)


def load(path=None, overrides=()) -> RunConfig:
    if path is None:
        return loads("", overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"configuration file not found: {path}")
    return loads(p.read_text(), overrides)


def dumps(values: dict | None = None) -> str:
    """Render a configuration; unset device overrides are omitted."""
    values = values or _defaults()
    parser = configparser.ConfigParser()
    for section, keys in SCHEMA.items():
        parser.add_section(section)
        for key in keys:
            v = values[section][key]
            if v is None:
                continue
            parser.set(section, key, repr(v) if isinstance(v, float) else str(v))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def ldi_values(ldi: LdiConfig) -> dict[str, object]:
    """The ``[ldi]`` section describing ``ldi``."""
    p = ldi.pulse
    return {
        "v_dd": ldi.v_dd, "v_tau": ldi.v_tau, "v_w": ldi.v_w, "c_syn_nf": ldi.c_syn * 1e9,
        "bend": ldi.bend.value, "period_s": p.period, "width_s": p.width, "level_high_v": p.level_high,
        "level_low_v": p.level_low, "cycles": p.n_cycles, "phase": p.phase.value,
        "mpre_effective_vt": ldi.mpre_effective_vt, "p_ss": ldi.p_ss,
        "p_c_diel_f_per_m2": ldi.p_c_diel, "n_ss": ldi.n_ss,
    }


def apply_explicit_ldi(ldi: LdiConfig, cfg: RunConfig) -> LdiConfig:
    """Overlay the ``[ldi]`` keys explicitly set in ``cfg`` onto ``ldi``."""
    keys = [k for s, k in cfg.explicit if s == "ldi"]
    if not keys:
        return ldi
    vals = {s: dict(kv) for s, kv in cfg.values.items()}
    vals["ldi"] = {**ldi_values(ldi), **{k: cfg.values["ldi"][k] for k in keys}}
    return _build(vals).ldi


def load_matrix(path, overrides=()) -> tuple[RunConfig, list[LdiConfig]]:
    """Load a sweep file whose ``[ldi]`` values may be comma-separated lists.

    Returns the base configuration and one LDI configuration per element of
    the Cartesian product of the list-valued keys, in file order.
    """
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"sweep file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(p.read_text())
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from None
    lists = {}
    if parser.has_section("ldi"):
        for key, raw in list(parser.items("ldi")):
            if "," in raw:
                lists[key] = [v.strip() for v in raw.split(",") if v.strip()]
                parser.remove_option("ldi", key)
    buf = io.StringIO()
    parser.write(buf)
    text = buf.getvalue()
    base = loads(text, overrides)
    if not lists:
        return base, [base.ldi]
    configs = []
    for combo in itertools.product(*lists.values()):
        extra = [f"ldi.{k}={v}" for k, v in zip(lists, combo)]
        configs.append(loads(text, list(overrides) + extra).ldi)
    return base, configs
