"""Double-double helpers: circle positions carried as (hi, lo) float pairs.

A position is hi + lo with |lo| <= ulp(hi)/2, giving ~32 decimal digits.  That
is enough headroom that membership of an orbit point in a breakpoint interval
is decided exactly for every horizon this package supports, while staying fully
vectorizable.  The only exact operations needed are addition and shifts by
integers, both of which are error-free transformations in IEEE double.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def dd_from_fraction(y: Fraction) -> tuple[float, float]:
    hi = float(y)
    lo = float(y - Fraction(hi))
    return hi, lo


def two_sum(a, b):
    """Error-free sum: returns (s, err) with a + b == s + err exactly."""
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def dd_add(h1, l1, h2, l2):
    s, e = two_sum(h1, h2)
    e = e + (l1 + l2)
    hi = s + e
    lo = e - (hi - s)
    return hi, lo


def dd_wrap01(hi, lo):
    """Reduce a dd value in (-1, 2) to [0, 1); wraps via exact +-1 shifts."""
    over = (hi + lo) >= 1.0
    under = (hi + lo) < 0.0
    shift = np.where(over, -1.0, np.where(under, 1.0, 0.0))
    s, e = two_sum(hi, shift)
    e = e + lo
    out_hi = s + e
    out_lo = e - (out_hi - s)
    return out_hi, out_lo


def dd_add_wrap(h1, l1, h2, l2):
    hi, lo = dd_add(h1, l1, h2, l2)
    return dd_wrap01(hi, lo)
