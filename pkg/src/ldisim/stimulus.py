"""Two-level periodic pre-synaptic pulse trains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigurationError


class Phase(str, Enum):
    HIGH_FIRST = "HighFirst"
    LOW_FIRST = "LowFirst"


@dataclass(frozen=True)
class PulseTrain:
    period: float
    width: float
    level_high: float = 10.0
    level_low: float = -10.0
    n_cycles: int = 18
    phase: Phase = Phase.HIGH_FIRST

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase(self.phase))
        if not (math.isfinite(self.period) and self.period > 0):
            raise ConfigurationError("pulse period must be > 0")
        if not (0 <= self.width <= self.period):
            raise ConfigurationError("pulse width must satisfy 0 <= width <= period")
        if int(self.n_cycles) != self.n_cycles or self.n_cycles < 1:
            raise ConfigurationError("n_cycles must be an integer >= 1")

    @property
    def duration(self) -> float:
        return self.n_cycles * self.period

    @property
    def degenerate(self) -> bool:
        return self.width == 0 or self.width == self.period

    def high_interval(self, k: int) -> tuple[float, float]:
        """[start, end) of the high part of cycle ``k``."""
        t0 = k * self.period
        if self.phase is Phase.HIGH_FIRST:
            return t0, t0 + self.width
        return t0 + self.period - self.width, t0 + self.period

    def low_interval(self, k: int) -> tuple[float, float]:
        """[start, end) of the low part of cycle ``k``."""
        t0 = k * self.period
        if self.phase is Phase.HIGH_FIRST:
            return t0 + self.width, t0 + self.period
        return t0, t0 + self.period - self.width

    def _is_high(self, t: float, left: bool) -> bool:
        # t / period can round across a cycle boundary, so check both neighbours
        k0 = math.floor(t / self.period)
        for k in (k0 - 1, k0, k0 + 1):
            if 0 <= k < self.n_cycles:
                lo, hi = self.high_interval(k)
                if (lo < t <= hi) if left else (lo <= t < hi):
                    return True
        return False

    def value_at(self, t: float, left: bool = False) -> float:
        """Stimulus level at ``t`` (right-continuous; ``left=True`` gives the left limit)."""
        return self.level_high if self._is_high(t, left) else self.level_low

    def __call__(self, t: float) -> float:
        return self.value_at(t)

    def edges(self) -> list[tuple[float, str]]:
        """Ordered ``(time, "rise"|"fall")`` pairs; empty for degenerate widths."""
        if self.degenerate:
            return []
        out = []
        for k in range(self.n_cycles):
            lo, hi = self.high_interval(k)
            out.append((lo, "rise"))
            out.append((hi, "fall"))
        return out

    def breakpoints(self) -> list[float]:
        pts = [t for t, _ in self.edges()]
        if self.degenerate and self.width == self.period:
            pts = [0.0, self.duration]
        return pts

    def describe(self) -> str:
        return (
            f"pulse period={self.period:g} width={self.width:g} high={self.level_high:g} "
            f"low={self.level_low:g} cycles={self.n_cycles} phase={self.phase.value}"
        )

    @classmethod
    def parse(cls, text: str) -> "PulseTrain":
        """Parse ``pulse period=4 width=2 high=10 low=-10 cycles=18``."""
        parts = text.split()
        if parts and parts[0] == "pulse":
            parts = parts[1:]
        keys = {"period": "period", "width": "width", "high": "level_high",
                "low": "level_low", "cycles": "n_cycles", "phase": "phase"}
        kw = {}
        for p in parts:
            if "=" not in p:
                raise ConfigurationError(f"bad pulse token {p!r}")
            k, v = p.split("=", 1)
            if k not in keys:
                raise ConfigurationError(f"unknown pulse key {k!r}")
            if k == "cycles":
                kw[keys[k]] = int(v)
            elif k == "phase":
                kw[keys[k]] = v
            else:
                kw[keys[k]] = float(v)
        if "period" not in kw or "width" not in kw:
            raise ConfigurationError("pulse needs period and width")
        return cls(**kw)
