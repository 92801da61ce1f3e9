"""Closed interval arithmetic with outward rounding.

Every operation returns an interval guaranteed to contain the exact image of
its operands: endpoints computed in floats are nudged outward by one ULP
(two for transcendental functions, whose libm endpoints are not proven
correctly rounded). Over-approximation is always permitted; returning an
interval that misses a representable image point is a bug.

Endpoints are extended reals: -inf/+inf are legal and never nudged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_INF = math.inf

# Conservative bounds on 2*pi used when locating sine/cosine extrema.
_TWO_PI_LO = math.nextafter(2.0 * math.pi, 0.0)

# Slop used when testing whether a trig extremum falls inside an interval.
# Erring toward "inside" only widens the result, never narrows it.
_TRIG_SLOP = 1e-9


class IntervalDomainError(ValueError):
    """An interval operand lies wholly outside a function's domain."""


def _down(x: float) -> float:
    if math.isinf(x):
        return x
    return math.nextafter(x, -_INF)


def _up(x: float) -> float:
    if math.isinf(x):
        return x
    return math.nextafter(x, _INF)


def _down2(x: float) -> float:
    return _down(_down(x))


def _up2(x: float) -> float:
    return _up(_up(x))


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] on the extended real line."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo = float(self.lo)
        hi = float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"empty constructor range: lo={lo!r} > hi={hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    # ---- queries ----

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        if math.isinf(self.lo) or math.isinf(self.hi):
            raise ValueError("midpoint of an unbounded interval")
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def is_point(self) -> bool:
        return self.lo == self.hi

    @staticmethod
    def point(x: float) -> "Interval":
        return Interval(x, x)

    # ---- lattice ----

    def hull(self, other: "Interval") -> "Interval":
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def intersect(self, other: "Interval") -> "Interval | None":
        """Intersection, or None for the empty set.

        Emptiness is reported explicitly; no operation here ever produces an
        empty interval silently.
        """
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            return None
        return Interval(lo, hi)

    # ---- arithmetic (1 ULP outward) ----

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __mul__(self, other: "Interval") -> "Interval":
        cands = []
        for a in (self.lo, self.hi):
            for b in (other.lo, other.hi):
                p = a * b
                # inf * 0 at an endpoint: the finite factor's sign side
                # contributes 0, not NaN.
                if math.isnan(p):
                    p = 0.0
                cands.append(p)
        return Interval(_down(min(cands)), _up(max(cands)))

    def __truediv__(self, other: "Interval") -> "Interval":
        if other.lo == 0.0 and other.hi == 0.0:
            raise IntervalDomainError("division by the degenerate zero interval")
        if other.lo < 0.0 < other.hi:
            return Interval(-_INF, _INF)
        if other.lo == 0.0:
            # divisor in [0, hi]: 1/x in [1/hi, +inf]
            return self * Interval(_down(1.0 / other.hi), _INF)
        if other.hi == 0.0:
            return self * Interval(-_INF, _up(1.0 / other.lo))
        inv = Interval(_down(1.0 / other.hi), _up(1.0 / other.lo))
        return self * inv

    def pow_int(self, k: int) -> "Interval":
        """Integer power with the dedicated even-exponent case.

        [-1,2]**2 must be [0,4], not the naive product [-2,4].
        """
        if not isinstance(k, int):
            raise TypeError("exponent must be an integer")
        if k < 0:
            return Interval(1.0, 1.0) / self.pow_int(-k)
        if k == 0:
            return Interval(1.0, 1.0)
        if k == 1:
            return self
        # x**k maps an exactly-zero endpoint to exactly zero; no nudge needed
        def pw(v: float, nudge) -> float:
            return 0.0 if v == 0.0 else nudge(v**k)

        if k % 2 == 0:
            a = abs_interval(self)
            return Interval(pw(a.lo, _down), pw(a.hi, _up))
        return Interval(pw(self.lo, _down), pw(self.hi, _up))


def abs_interval(x: Interval) -> Interval:
    if x.lo >= 0.0:
        return x
    if x.hi <= 0.0:
        return Interval(-x.hi, -x.lo)
    return Interval(0.0, max(-x.lo, x.hi))


def sqrt_interval(x: Interval) -> Interval:
    if x.hi < 0.0:
        raise IntervalDomainError(f"sqrt of wholly negative interval [{x.lo}, {x.hi}]")
    lo = max(x.lo, 0.0)
    lo_out = 0.0 if lo == 0.0 else max(_down2(math.sqrt(lo)), 0.0)
    return Interval(lo_out, _up2(math.sqrt(x.hi)) if not math.isinf(x.hi) else _INF)


def exp_interval(x: Interval) -> Interval:
    lo = 0.0 if x.lo == -_INF else _down2(math.exp(min(x.lo, 709.0)))
    hi = _INF if x.hi == _INF or x.hi > 709.0 else _up2(math.exp(x.hi))
    return Interval(max(lo, 0.0), hi)


def log_interval(x: Interval) -> Interval:
    if x.hi <= 0.0:
        raise IntervalDomainError(f"log of wholly non-positive interval [{x.lo}, {x.hi}]")
    lo = -_INF if x.lo <= 0.0 else _down2(math.log(x.lo))
    hi = _INF if x.hi == _INF else _up2(math.log(x.hi))
    return Interval(lo, hi)


def _trig_has_extremum(x: Interval, phase: float) -> bool:
    """True when some point phase + 2*pi*k may lie inside [x.lo, x.hi]."""
    if x.width >= _TWO_PI_LO:
        return True
    k_lo = math.floor((x.lo - phase) / (2.0 * math.pi)) - 1
    k_hi = math.ceil((x.hi - phase) / (2.0 * math.pi)) + 1
    slop = _TRIG_SLOP * (1.0 + max(abs(x.lo), abs(x.hi)))
    for k in range(k_lo, k_hi + 1):
        t = phase + 2.0 * math.pi * k
        if x.lo - slop <= t <= x.hi + slop:
            return True
    return False


def sin_interval(x: Interval) -> Interval:
    if math.isinf(x.lo) or math.isinf(x.hi) or x.width >= _TWO_PI_LO:
        return Interval(-1.0, 1.0)
    vals = [math.sin(x.lo), math.sin(x.hi)]
    lo = _down2(min(vals))
    hi = _up2(max(vals))
    if _trig_has_extremum(x, math.pi / 2.0):
        hi = 1.0
    if _trig_has_extremum(x, -math.pi / 2.0):
        lo = -1.0
    return Interval(max(lo, -1.0), min(hi, 1.0))


def cos_interval(x: Interval) -> Interval:
    if math.isinf(x.lo) or math.isinf(x.hi) or x.width >= _TWO_PI_LO:
        return Interval(-1.0, 1.0)
    vals = [math.cos(x.lo), math.cos(x.hi)]
    lo = _down2(min(vals))
    hi = _up2(max(vals))
    if _trig_has_extremum(x, 0.0):
        hi = 1.0
    if _trig_has_extremum(x, math.pi):
        lo = -1.0
    return Interval(max(lo, -1.0), min(hi, 1.0))
