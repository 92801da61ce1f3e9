"""Containment properties of the outward-rounded interval arithmetic.

The oracle throughout: sample points inside the operand intervals, apply
the exact float operation, and require the result to land inside the
computed interval. Outward rounding makes this a hard guarantee, not a
statistical one.
"""

import math

import numpy as np
import pytest

from ordercomplete.intervals import (
    Interval,
    IntervalDomainError,
    abs_interval,
    cos_interval,
    exp_interval,
    log_interval,
    sin_interval,
    sqrt_interval,
)


def _samples(iv: Interval, rng, k=50):
    pts = rng.uniform(iv.lo, iv.hi, size=k)
    return np.concatenate([pts, [iv.lo, iv.hi, iv.mid]])


def test_constructor_orders_and_rejects_nan():
    iv = Interval(1.0, 2.0)
    assert iv.lo == 1.0 and iv.hi == 2.0
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)
    with pytest.raises(ValueError):
        Interval(float("nan"), 1.0)


def test_point_and_predicates():
    p = Interval.point(3.5)
    assert p.is_point() and p.contains(3.5) and p.width == 0.0
    assert not p.contains(3.5000001)


def test_hull_and_intersect():
    a, b = Interval(0.0, 1.0), Interval(0.5, 2.0)
    assert a.hull(b) == Interval(0.0, 2.0)
    assert a.intersect(b) == Interval(0.5, 1.0)
    assert a.intersect(Interval(1.5, 2.0)) is None
    # touching intervals intersect in a point
    assert a.intersect(Interval(1.0, 2.0)) == Interval.point(1.0)


def test_arithmetic_containment_random():
    rng = np.random.default_rng(7)
    for _ in range(150):
        a = Interval(*sorted(rng.uniform(-5, 5, 2)))
        b = Interval(*sorted(rng.uniform(-5, 5, 2)))
        for xa in _samples(a, rng, 6):
            for xb in _samples(b, rng, 6):
                assert (a + b).contains(xa + xb)
                assert (a - b).contains(xa - xb)
                assert (a * b).contains(xa * xb)
                if not b.contains(0.0):
                    assert (a / b).contains(xa / xb)


def test_division_semantics():
    # straddling divisor: total but unbounded, never silently wrong
    out = Interval(1.0, 2.0) / Interval(-1.0, 1.0)
    assert out.lo == -math.inf and out.hi == math.inf
    # the degenerate zero divisor has no consistent enclosure
    with pytest.raises(IntervalDomainError):
        Interval(1.0, 2.0) / Interval.point(0.0)
    # divisor touching zero at one end: half-line
    out = Interval(1.0, 1.0) / Interval(0.0, 2.0)
    assert out.hi == math.inf and out.lo <= 0.5


def test_pow_int_even_is_tight_at_zero():
    # squaring an interval straddling zero starts at exactly zero, not at a
    # product of endpoints
    sq = Interval(-1.0, 2.0).pow_int(2)
    assert sq.lo == 0.0
    assert sq.contains(4.0) and sq.hi >= 4.0
    rng = np.random.default_rng(11)
    for k in (0, 1, 2, 3, 4, 5):
        for _ in range(40):
            iv = Interval(*sorted(rng.uniform(-3, 3, 2)))
            out = iv.pow_int(k)
            for x in _samples(iv, rng, 12):
                assert out.contains(float(x) ** k)


def test_pow_negative_exponent():
    out = Interval(2.0, 4.0).pow_int(-1)
    assert out.contains(0.25) and out.contains(0.5)
    # base straddling zero: unbounded, matching division semantics
    out = Interval(-1.0, 1.0).pow_int(-1)
    assert out.lo == -math.inf and out.hi == math.inf
    with pytest.raises(TypeError):
        Interval(1.0, 2.0).pow_int(1.5)


def test_unary_function_containment():
    rng = np.random.default_rng(13)
    cases = [
        (abs_interval, abs, Interval(-3.0, 2.0)),
        (exp_interval, math.exp, Interval(-2.0, 2.0)),
        (sqrt_interval, math.sqrt, Interval(0.0, 7.0)),
        (log_interval, math.log, Interval(0.5, 9.0)),
    ]
    for fint, fref, iv in cases:
        out = fint(iv)
        for x in _samples(iv, rng, 100):
            assert out.contains(fref(float(x)))


def test_sqrt_log_domains():
    # wholly outside the domain: error
    with pytest.raises(IntervalDomainError):
        sqrt_interval(Interval(-2.0, -1.0))
    with pytest.raises(IntervalDomainError):
        log_interval(Interval(-2.0, -1.0))
    # partially inside: restricted enclosure, no silent narrowing of the
    # in-domain part
    s = sqrt_interval(Interval(-1.0, 4.0))
    assert s.lo == 0.0 and s.hi >= 2.0
    lg = log_interval(Interval(0.0, 1.0))
    assert lg.lo == -math.inf and lg.hi >= 0.0


def test_trig_extremum_detection():
    # [0, pi] crosses the max of sin at pi/2: upper bound reaches 1
    s = sin_interval(Interval(0.0, math.pi))
    assert s.hi >= 1.0 and s.lo <= 0.0
    # a narrow interval away from extrema stays monotone-tight
    t = sin_interval(Interval(0.1, 0.2))
    assert 0.09 < t.lo and t.hi < 0.21
    c = cos_interval(Interval(3.0, 3.3))  # crosses pi: min hits -1
    assert c.lo <= -1.0


def test_trig_containment_random():
    rng = np.random.default_rng(17)
    for _ in range(300):
        iv = Interval(*sorted(rng.uniform(-10, 10, 2)))
        s, c = sin_interval(iv), cos_interval(iv)
        for x in _samples(iv, rng, 20):
            assert s.contains(math.sin(float(x)))
            assert c.contains(math.cos(float(x)))


def test_wide_trig_clamps_to_unit():
    s = sin_interval(Interval(-100.0, 100.0))
    assert s.lo <= -1.0 and s.hi >= 1.0
    assert cos_interval(Interval(-math.inf, 0.0)) == Interval(-1.0, 1.0)
