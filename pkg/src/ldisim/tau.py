"""Per-cycle time-constant extraction from synaptic-current traces.

Charge phases (input high) are fitted with ``a + b*exp(-t/tau)`` and discharge
phases (input low) with ``c*exp(-t/tau)``.  The main fitter is a seeded
particle swarm; a closed-form log-linear regression serves as an independent
cross-check.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .errors import ConfigurationError, DegenerateTraceError, InsufficientDataError
from .stimulus import PulseTrain

MIN_SAMPLES = 8


class SegmentPhase(str, Enum):
    CHARGE = "Charge"
    DISCHARGE = "Discharge"


@dataclass(frozen=True)
class CycleSegment:
    phase: SegmentPhase
    t: np.ndarray  # seconds, re-zeroed to the phase start
    i: np.ndarray  # amperes
    source_cycle: int
    t_start: float = 0.0  # absolute time of the phase start

    def __post_init__(self):
        object.__setattr__(self, "phase", SegmentPhase(self.phase))
        t = np.asarray(self.t, dtype=float)
        i = np.asarray(self.i, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "i", i)
        if t.shape != i.shape or t.ndim != 1:
            raise InsufficientDataError("segment time and current arrays must be 1-D and equal length")
        if len(t) < MIN_SAMPLES:
            raise InsufficientDataError(f"segment needs >= {MIN_SAMPLES} samples, got {len(t)}")
        if abs(t[0]) > 1e-12 or np.any(np.diff(t) <= 0):
            raise InsufficientDataError("segment times must start at 0 and increase strictly")


@dataclass(frozen=True)
class TauEstimate:
    tau: float
    a: float
    b: float
    c: float
    sse: float
    converged: bool
    phase: SegmentPhase = SegmentPhase.CHARGE
    cycle: int = 0
    seed: int | None = None

    def predict(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.phase is SegmentPhase.CHARGE:
            return self.a + self.b * np.exp(-t / self.tau)
        return self.c * np.exp(-t / self.tau)


@dataclass(frozen=True)
class TauStats:
    min: float
    max: float
    median: float
    mean: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def scaled(self, k: float) -> "TauStats":
        d = {f: (v * k if f != "n" else v) for f, v in asdict(self).items()}
        return TauStats(**d)


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 50
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    tau_bounds: tuple[float, float] = (1e-3, 10.0)
    amplitude_bound: float = 2.0  # multiples of the segment peak-to-peak
    seed: int = 42
    resolution: float = 1e-15  # A; absolute amplitude-resolution floor
    rel_resolution: float = 1e-9  # relative to the segment's largest magnitude

    def __post_init__(self):
        if self.swarm_size < 10:
            raise ConfigurationError("swarm_size must be >= 10")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        lo, hi = self.tau_bounds
        if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
            raise ConfigurationError("tau bounds must be finite with 0 < lo < hi")
        if not (math.isfinite(self.amplitude_bound) and self.amplitude_bound > 0):
            raise ConfigurationError("amplitude_bound must be finite and > 0")


# --- segmentation -----------------------------------------------------------


def _slice(t: np.ndarray, start: float, end: float, eps: float):
    i0 = int(np.searchsorted(t, start - eps, side="left"))
    i1 = int(np.searchsorted(t, end - eps, side="left"))
    return i0, i1


def segment(
    t,
    i,
    pulse: PulseTrain,
    discard_first: int = 1,
    phases=(SegmentPhase.CHARGE, SegmentPhase.DISCHARGE),
) -> list[CycleSegment]:
    """Cut a trace at the pulse edges into charge (high) and discharge (low) segments."""
    t = np.asarray(t, dtype=float)
    i = np.asarray(i, dtype=float)
    if discard_first < 0:
        raise ConfigurationError("discard_first must be >= 0")
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 0.0
    eps = 1e-6 * dt if dt > 0 else 1e-12
    t_last = t[-1] if len(t) else -math.inf
    covered = sum(1 for k in range(pulse.n_cycles) if (k + 1) * pulse.period <= t_last + dt + eps)
    if covered < discard_first + 1:
        raise InsufficientDataError(
            f"trace covers {covered} cycle(s); need at least {discard_first + 1}"
        )
    phases = [SegmentPhase(p) for p in phases]
    out: list[CycleSegment] = []
    for phase in phases:
        found = 0
        for k in range(discard_first, covered):
            lo, hi = pulse.high_interval(k) if phase is SegmentPhase.CHARGE else pulse.low_interval(k)
            if hi - lo <= 0:
                continue
            a, b = _slice(t, lo, hi, eps)
            if b - a < MIN_SAMPLES:
                continue
            out.append(CycleSegment(phase, t[a:b] - t[a], i[a:b], k, float(t[a])))
            found += 1
        if found == 0:
            raise InsufficientDataError(f"no usable {phase.value.lower()} segments")
    out.sort(key=lambda s: (s.source_cycle, s.phase is SegmentPhase.DISCHARGE))
    return out


# --- fitting ----------------------------------------------------------------


def _check_identifiable(seg: CycleSegment, cfg: PsoConfig) -> float:
    p2p = float(np.ptp(seg.i))
    floor = max(cfg.resolution, cfg.rel_resolution * float(np.max(np.abs(seg.i))))
    if not p2p >= 10 * floor:
        raise DegenerateTraceError(
            f"segment (cycle {seg.source_cycle}, {seg.phase.value}) is flat: peak-to-peak {p2p:.3g} A"
        )
    return p2p


def fit_pso(seg: CycleSegment, cfg: PsoConfig = PsoConfig()) -> TauEstimate:
    """Least-squares fit of the phase model by particle swarm optimization.

    The swarm works on currents normalised by the segment's peak-to-peak
    and on log(tau); amplitudes are mapped back afterwards.
    """
    p2p = _check_identifiable(seg, cfg)
    t = seg.t
    y = seg.i / p2p
    level = float(np.mean(y))
    span = max(1.0, float(np.max(np.abs(y))))
    bound = cfg.amplitude_bound
    charge = seg.phase is SegmentPhase.CHARGE
    ltau = (math.log(cfg.tau_bounds[0]), math.log(cfg.tau_bounds[1]))
    if charge:
        lo = np.array([level - bound * span, -bound, ltau[0]])
        hi = np.array([level + bound * span, bound, ltau[1]])
    else:
        lo = np.array([-bound * span, ltau[0]])
        hi = np.array([bound * span, ltau[1]])
    dim = len(lo)
    width = hi - lo
    rng = np.random.default_rng(cfg.seed)

    def cost(P):
        tau = np.exp(P[:, -1])[:, None]
        e = np.exp(-t[None, :] / tau)
        if charge:
            pred = P[:, 0:1] + P[:, 1:2] * e
        else:
            pred = P[:, 0:1] * e
        r = pred - y[None, :]
        return np.einsum("ij,ij->i", r, r)

    X = lo + rng.random((cfg.swarm_size, dim)) * width
    V = (rng.random((cfg.swarm_size, dim)) - 0.5) * 0.2 * width
    pbest = X.copy()
    pcost = cost(X)
    g = int(np.argmin(pcost))
    gbest, gcost = pbest[g].copy(), float(pcost[g])
    history = np.empty(cfg.iterations)
    for it in range(cfg.iterations):
        r1 = rng.random((cfg.swarm_size, dim))
        r2 = rng.random((cfg.swarm_size, dim))
        V = cfg.inertia * V + cfg.cognitive * r1 * (pbest - X) + cfg.social * r2 * (gbest - X)
        X = X + V
        # reflect at the bounds
        over = X > hi
        X[over] = 2 * hi[np.nonzero(over)[1]] - X[over]
        V[over] = -V[over]
        under = X < lo
        X[under] = 2 * lo[np.nonzero(under)[1]] - X[under]
        V[under] = -V[under]
        np.clip(X, lo, hi, out=X)
        c = cost(X)
        better = c < pcost
        pbest[better] = X[better]
        pcost[better] = c[better]
        g = int(np.argmin(pcost))
        if pcost[g] < gcost:
            gbest, gcost = pbest[g].copy(), float(pcost[g])
        history[it] = gcost

    k0 = max(0, int(math.floor(0.8 * cfg.iterations)) - 1)
    sst = float(np.sum((y - np.mean(y)) ** 2))
    improvement = (history[k0] - history[-1]) / sst if sst > 0 else 0.0
    converged = bool(improvement < 1e-6)
    tau = float(math.exp(gbest[-1]))
    if charge:
        a, b, c = gbest[0] * p2p, gbest[1] * p2p, 0.0
    else:
        a, b, c = 0.0, 0.0, gbest[0] * p2p
    return TauEstimate(tau, float(a), float(b), float(c), gcost * p2p * p2p, converged,
                       seg.phase, seg.source_cycle, cfg.seed)


def _weighted_loglinear(t, r):
    """Fit log(r) = log(A) - t/tau with weights r**2; r must be positive."""
    w = r * r
    ly = np.log(r)
    sw = w.sum()
    tm = (w * t).sum() / sw
    lm = (w * ly).sum() / sw
    slope = (w * (t - tm) * (ly - lm)).sum() / (w * (t - tm) ** 2).sum()
    if not slope < 0:
        raise DegenerateTraceError("log-linear fit found no decay")
    return -1.0 / slope, math.exp(lm - slope * tm)


def fit_loglinear(seg: CycleSegment, tail_fraction: float = 0.1, refinements: int = 3) -> TauEstimate:
    """Deterministic oracle fit by regression on the log of the decaying part.

    Discharge: regress log(i).  Charge: estimate the asymptote ``a`` from the
    mean of the final ``tail_fraction`` of samples, regress log|i - a| over the
    remaining samples, then refine ``a`` by removing the fitted exponential's
    remainder from the tail mean.
    """
    t, i = seg.t, seg.i
    if seg.phase is SegmentPhase.DISCHARGE:
        if np.any(i <= 0):
            raise DegenerateTraceError("discharge segment must be strictly positive for log-linear fit")
        tau, c = _weighted_loglinear(t, i)
        sse = float(np.sum((c * np.exp(-t / tau) - i) ** 2))
        return TauEstimate(tau, 0.0, 0.0, c, sse, True, seg.phase, seg.source_cycle)
    n_tail = max(1, int(round(tail_fraction * len(t))))
    head_t, head_i = t[:-n_tail], i[:-n_tail]
    tail_t, tail_i = t[-n_tail:], i[-n_tail:]
    a = float(np.mean(tail_i))
    sign = 1.0 if head_i[0] > a else -1.0
    tau = b = float("nan")
    for _ in range(refinements + 1):
        r = sign * (head_i - a)
        if np.any(r <= 0):
            raise DegenerateTraceError("charge segment crosses its asymptote; log-linear fit undefined")
        tau, amp = _weighted_loglinear(head_t, r)
        b = sign * amp
        a = float(np.mean(tail_i - b * np.exp(-tail_t / tau)))
    sse = float(np.sum((a + b * np.exp(-t / tau) - i) ** 2))
    return TauEstimate(tau, a, b, 0.0, sse, True, seg.phase, seg.source_cycle)


# --- statistics -------------------------------------------------------------


def stats(estimates) -> TauStats:
    """Box-plot statistics over the time constants of converged estimates.

    Accepts TauEstimate objects or bare floats (treated as converged).
    """
    taus = []
    for e in estimates:
        if isinstance(e, TauEstimate):
            if e.converged:
                taus.append(e.tau)
        else:
            taus.append(float(e))
    if not taus:
        raise InsufficientDataError("no converged estimates")
    x = np.sort(np.asarray(taus, dtype=float))
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    inside_lo = x[x >= q1 - 1.5 * iqr]
    inside_hi = x[x <= q3 + 1.5 * iqr]
    return TauStats(
        min=float(x[0]),
        max=float(x[-1]),
        median=float(med),
        mean=float(np.mean(x)),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(inside_lo.min()),
        whisker_hi=float(inside_hi.max()),
        n=len(x),
    )
