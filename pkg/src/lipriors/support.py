"""Supports of parameters and observables."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MalformedSupport

INTERVAL = "interval"
FINITE = "finite"
NATURALS = "naturals"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


@dataclass(frozen=True)
class SupportSpec:
    kind: str
    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = False
    hi_closed: bool = False
    values: tuple = ()

    def __post_init__(self):
        if self.kind == INTERVAL:
            if math.isnan(self.lo) or math.isnan(self.hi) or not self.lo < self.hi:
                raise MalformedSupport(f"interval needs lo < hi, got ({self.lo}, {self.hi})")
            if (self.lo_closed and math.isinf(self.lo)) or (self.hi_closed and math.isinf(self.hi)):
                raise MalformedSupport("an infinite endpoint cannot be closed")
        elif self.kind == FINITE:
            if not self.values:
                raise MalformedSupport("discrete set is empty")
            if len(set(self.values)) != len(self.values):
                raise MalformedSupport(f"discrete set has duplicates: {self.values}")
            if any(not math.isfinite(v) for v in self.values):
                raise MalformedSupport("discrete set values must be finite")
        elif self.kind != NATURALS:
            raise MalformedSupport(f"unknown support kind {self.kind!r}")

    @classmethod
    def interval(cls, lo, hi, lo_closed=False, hi_closed=False):
        return cls(INTERVAL, float(lo), float(hi), lo_closed, hi_closed)

    @classmethod
    def finite(cls, values):
        return cls(FINITE, values=tuple(float(v) for v in values))

    @classmethod
    def naturals(cls):
        return cls(NATURALS, lo=0.0, lo_closed=True)

    @property
    def continuous(self) -> bool:
        return self.kind == INTERVAL

    def contains(self, v: float) -> bool:
        v = float(v)
        if self.kind == FINITE:
            return v in self.values
        if self.kind == NATURALS:
            return v >= 0 and v.is_integer()
        above = v >= self.lo if self.lo_closed else v > self.lo
        below = v <= self.hi if self.hi_closed else v < self.hi
        return above and below

    def contains_interior(self, v: float) -> bool:
        return self.kind == INTERVAL and self.lo < v < self.hi

    def distance_to_boundary(self, v):
        """Distance from interior point(s) v to the nearest finite endpoint (inf if none)."""
        v = np.asarray(v, dtype=float)
        return np.minimum(v - self.lo, self.hi - v)

    def interior_grid(self, n: int = 10) -> np.ndarray:
        """Default probe grid: log-spaced for half-lines, linear otherwise."""
        if self.kind != INTERVAL:
            raise MalformedSupport("probe grids are defined for interval supports only")
        lo, hi = self.lo, self.hi
        if math.isfinite(lo) and math.isfinite(hi):
            return lo + (hi - lo) * np.arange(1, n + 1) / (n + 1)
        if math.isfinite(lo):
            return lo + np.logspace(-1, 1, n)
        if math.isfinite(hi):
            return hi - np.logspace(-1, 1, n)[::-1]
        return np.linspace(-5.0, 5.0, n)

    def midpoint(self) -> float:
        """A representative point: the midpoint, or 1 unit inside a half-line."""
        if self.kind == FINITE:
            return self.values[0]
        if self.kind == NATURALS:
            return 1.0
        lo, hi = self.lo, self.hi
        if math.isfinite(lo) and math.isfinite(hi):
            return 0.5 * (lo + hi)
        if math.isfinite(lo):
            return lo + 1.0
        if math.isfinite(hi):
            return hi - 1.0
        return 0.0

    def to_text(self) -> str:
        if self.kind == FINITE:
            return "{" + ", ".join(_fmt(v) for v in self.values) + "}"
        if self.kind == NATURALS:
            return "naturals"
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{_fmt(self.lo)}, {_fmt(self.hi)}{right}"
