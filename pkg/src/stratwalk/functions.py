"""Observables on the circle: piecewise-affine BV functions and trig polynomials.

PiecewiseBV keeps an exact rational mirror of its description whenever it was
built from rationals, so means, variations and centering can be certified; the
float mirrors exist for vectorized evaluation along orbits.  Values at a
breakpoint follow the segment starting there (right-continuous convention).
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from .ddarith import dd_add_wrap, dd_from_fraction


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


class PiecewiseBV:
    """Piecewise-affine function on [0,1) wrapped to the circle.

    Segment i covers [bp[i], bp[i+1]) with bp[0] == 0 and evaluates to
    value[i] + slope[i] * (x - bp[i]).
    """

    def __init__(self, breakpoints: Sequence, values: Sequence, slopes: Sequence, exact=True):
        if len(breakpoints) != len(values) or len(values) != len(slopes):
            raise ValueError("breakpoints, values and slopes must have equal length")
        if exact:
            bp = [_frac(b) for b in breakpoints]
            if bp[0] != 0:
                raise ValueError("first breakpoint must be 0; use shift() to move the anchor")
            if any(not 0 <= b < 1 for b in bp) or any(b >= c for b, c in zip(bp, bp[1:])):
                raise ValueError("breakpoints must be strictly increasing within [0,1)")
            self.bp_frac = bp
            self.val_frac = [_frac(v) for v in values]
            self.slope_frac = [_frac(s) for s in slopes]
            self.bp_hi, self.bp_lo = map(
                np.array, zip(*(dd_from_fraction(b) for b in bp))
            )
            self.val = np.array([float(v) for v in values])
            self.slope = np.array([float(s) for s in slopes])
        else:
            self.bp_frac = self.val_frac = self.slope_frac = None
            self.bp_hi = np.asarray(breakpoints, dtype=float)
            self.bp_lo = np.zeros_like(self.bp_hi)
            self.val = np.asarray(values, dtype=float)
            self.slope = np.asarray(slopes, dtype=float)
            if self.bp_hi[0] != 0.0 or np.any(np.diff(self.bp_hi) <= 0) or self.bp_hi[-1] >= 1:
                raise ValueError("breakpoints must start at 0 and increase within [0,1)")
        self.exact = exact

    # -- descriptive quantities -------------------------------------------

    @property
    def n_segments(self) -> int:
        return len(self.val)

    @property
    def is_integer_pwc(self) -> bool:
        if not self.exact:
            return False
        return all(s == 0 for s in self.slope_frac) and all(
            v.denominator == 1 for v in self.val_frac
        )

    def _seg_lengths(self):
        if self.exact:
            ends = self.bp_frac[1:] + [Fraction(1)]
            return [e - b for b, e in zip(self.bp_frac, ends)]
        return np.diff(np.append(self.bp_hi, 1.0))

    def mean(self):
        """Integral over the circle; exact Fraction when the description is rational."""
        if self.exact:
            return sum(
                v * L + s * L * L / 2
                for v, s, L in zip(self.val_frac, self.slope_frac, self._seg_lengths())
            )
        L = self._seg_lengths()
        return float(np.sum(self.val * L + 0.5 * self.slope * L * L))

    def _right_limits(self):
        # value approached at the right end of each segment
        if self.exact:
            return [
                v + s * L
                for v, s, L in zip(self.val_frac, self.slope_frac, self._seg_lengths())
            ]
        return self.val + self.slope * self._seg_lengths()

    def variation_interval(self):
        """Total variation over [0, 1), jumps at interior breakpoints included."""
        ends = self._right_limits()
        if self.exact:
            tot = sum(
                abs(s) * L for s, L in zip(self.slope_frac, self._seg_lengths())
            )
            for i in range(1, self.n_segments):
                tot += abs(self.val_frac[i] - ends[i - 1])
            return tot
        tot = float(np.sum(np.abs(self.slope) * self._seg_lengths()))
        tot += float(np.sum(np.abs(self.val[1:] - ends[:-1])))
        return tot

    def variation_circle(self):
        """Variation on the circle: adds the wrap jump |f(0) - f(1-)|."""
        ends = self._right_limits()
        return self.variation_interval() + abs(self.val_frac[0] - ends[-1] if self.exact else self.val[0] - ends[-1])

    def bounds(self):
        """(min, max) over the circle; affine pieces attain extremes at endpoints."""
        ends = self._right_limits()
        if self.exact:
            lo = min(min(self.val_frac), min(ends))
            hi = max(max(self.val_frac), max(ends))
            return lo, hi
        return float(min(self.val.min(), min(ends))), float(max(self.val.max(), max(ends)))

    def sup_norm(self):
        lo, hi = self.bounds()
        return max(abs(lo), abs(hi))

    # -- evaluation --------------------------------------------------------

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return self.eval_dd(x, np.zeros_like(x))

    def eval_dd(self, hi, lo):
        hi = np.asarray(hi, dtype=float)
        lo = np.asarray(lo, dtype=float)
        idx = np.searchsorted(self.bp_hi, hi, side="right") - 1
        # adjudicate exact hi-ties with the lo words; only jumps care, but keep it right
        tie = (hi == self.bp_hi[idx]) & (lo < self.bp_lo[idx])
        wrapped = tie & (idx == 0)
        idx = np.where(tie, idx - 1, idx) % self.n_segments
        dx = (hi - self.bp_hi[idx]) + (lo - self.bp_lo[idx])
        dx = np.where(wrapped, dx + 1.0, dx)
        return self.val[idx] + self.slope[idx] * dx

    def __call__(self, x):
        return self.eval(x)

    # -- algebra -----------------------------------------------------------

    def __neg__(self):
        return self * -1

    def __mul__(self, c):
        if self.exact and isinstance(c, (int, Fraction)):
            return PiecewiseBV(
                self.bp_frac,
                [v * c for v in self.val_frac],
                [s * c for s in self.slope_frac],
            )
        return PiecewiseBV(self.bp_hi, self.val * float(c), self.slope * float(c), exact=False)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, (int, float, Fraction)):
            if self.exact and isinstance(other, (int, Fraction)):
                return PiecewiseBV(
                    self.bp_frac,
                    [v + other for v in self.val_frac],
                    self.slope_frac,
                )
            return PiecewiseBV(self.bp_hi, self.val + float(other), self.slope, exact=False)
        if not isinstance(other, PiecewiseBV):
            return NotImplemented
        if self.exact and other.exact:
            bps = sorted(set(self.bp_frac) | set(other.bp_frac))
            vals = [self.value_at(b) + other.value_at(b) for b in bps]
            slopes = [self.slope_at(b) + other.slope_at(b) for b in bps]
            return PiecewiseBV(bps, vals, slopes)
        bps = np.union1d(self.bp_hi, other.bp_hi)
        vals = self.eval(bps) + other.eval(bps)
        slopes = self._slope_float_at(bps) + other._slope_float_at(bps)
        return PiecewiseBV(bps, vals, slopes, exact=False)

    def __sub__(self, other):
        return self + (other * -1 if isinstance(other, PiecewiseBV) else -other)

    def value_at(self, b: Fraction) -> Fraction:
        i = self._seg_index(b)
        return self.val_frac[i] + self.slope_frac[i] * (b - self.bp_frac[i])

    def slope_at(self, b: Fraction) -> Fraction:
        return self.slope_frac[self._seg_index(b)]

    def _seg_index(self, b: Fraction) -> int:
        i = self.n_segments - 1
        while self.bp_frac[i] > b:
            i -= 1
        return i

    def _slope_float_at(self, x):
        idx = np.searchsorted(self.bp_hi, x, side="right") - 1
        return self.slope[idx]

    def centered(self):
        return self - self.mean()

    def shift(self, x0):
        """f(x + x0) as a new function; exact when x0 and the description are rational."""
        if self.exact and isinstance(x0, (int, Fraction)):
            x0 = _frac(x0)
            new_bp = sorted((b - x0) % 1 for b in self.bp_frac)
            vals = [self.value_at((b + x0) % 1) for b in new_bp]
            slopes = [self.slope_at((b + x0) % 1) for b in new_bp]
            if new_bp[0] != 0:
                vals.insert(0, self.value_at(x0 % 1))
                slopes.insert(0, self.slope_at(x0 % 1))
                new_bp.insert(0, Fraction(0))
            return PiecewiseBV(new_bp, vals, slopes)
        x0 = float(x0)
        new_bp = np.sort((self.bp_hi - x0) % 1.0)
        if new_bp[0] != 0.0:
            new_bp = np.insert(new_bp, 0, 0.0)
        src = (new_bp + x0) % 1.0
        return PiecewiseBV(new_bp, self.eval(src), self._slope_float_at(src), exact=False)

    def reflect(self, x0):
        """f(2*x0 - x); agrees with the reflection a.e. (breakpoint values follow
        the right-continuous re-anchoring)."""
        if self.exact and isinstance(x0, (int, Fraction)):
            x0 = _frac(x0)
            ends = self.bp_frac[1:] + [Fraction(1)]
            segs = []
            for b, e, v, s in zip(self.bp_frac, ends, self.val_frac, self.slope_frac):
                nb, ne = (2 * x0 - e) % 1, (2 * x0 - b) % 1
                if ne == 0:
                    ne = Fraction(1)
                # value at the new left end nb is the old right limit at e
                v_left = v + s * (e - b)
                segs.append((nb, ne, v_left, -s))
            segs.sort()
            if segs[0][0] != 0:
                # split the segment that wraps across 0
                nb, ne, v, s = segs.pop()
                segs.insert(0, (Fraction(0), ne - 1 if ne > 1 else ne, v + s * (1 - nb), s))
                segs.append((nb, Fraction(1), v, s))
                segs.sort()
            bps = [t[0] for t in segs]
            vals = [t[2] for t in segs]
            slopes = [t[3] for t in segs]
            return PiecewiseBV(bps, vals, slopes)
        raise NotImplementedError("reflect is only provided for exact descriptions")


class TrigPoly:
    """Real trig polynomial a0 + sum_k (a_k cos 2 pi k x + b_k sin 2 pi k x)."""

    def __init__(self, a0=0.0, cos_amp=(), sin_amp=()):
        self.a0 = float(a0)
        n = max(len(cos_amp), len(sin_amp))
        self.cos_amp = np.zeros(n)
        self.sin_amp = np.zeros(n)
        self.cos_amp[: len(cos_amp)] = cos_amp
        self.sin_amp[: len(sin_amp)] = sin_amp
        self.k = np.arange(1, n + 1)
        self.exact = False

    @property
    def is_integer_pwc(self):
        return False

    def eval(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ph = 2 * np.pi * np.outer(x, self.k)
        out = self.a0 + np.cos(ph) @ self.cos_amp + np.sin(ph) @ self.sin_amp
        return out

    def eval_dd(self, hi, lo):
        return self.eval(np.asarray(hi) + np.asarray(lo))

    def __call__(self, x):
        return self.eval(x)

    def deriv(self):
        w = 2 * np.pi * self.k
        return TrigPoly(0.0, w * self.sin_amp, -w * self.cos_amp)

    def mean(self):
        return self.a0

    def variation_circle(self, grid=1 << 16):
        t = np.arange(grid) / grid
        return float(np.mean(np.abs(self.deriv().eval(t))))

    variation_interval = variation_circle

    def lipschitz(self, grid=1 << 16):
        t = np.arange(grid) / grid
        return float(np.max(np.abs(self.deriv().eval(t))))

    def sup_norm(self, grid=1 << 16):
        t = np.arange(grid) / grid
        return float(np.max(np.abs(self.eval(t))))

    def bounds(self, grid=1 << 16):
        t = np.arange(grid) / grid
        v = self.eval(t)
        return float(v.min()), float(v.max())

    def __mul__(self, c):
        return TrigPoly(self.a0 * c, self.cos_amp * c, self.sin_amp * c)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return TrigPoly(self.a0 + other, self.cos_amp, self.sin_amp)
        if isinstance(other, TrigPoly):
            n = max(len(self.cos_amp), len(other.cos_amp))
            ca, sa = np.zeros(n), np.zeros(n)
            ca[: len(self.cos_amp)] += self.cos_amp
            ca[: len(other.cos_amp)] += other.cos_amp
            sa[: len(self.sin_amp)] += self.sin_amp
            sa[: len(other.sin_amp)] += other.sin_amp
            return TrigPoly(self.a0 + other.a0, ca, sa)
        return NotImplemented

    def shift(self, x0):
        """f(x + x0): rotate each mode by 2 pi k x0."""
        c, s = np.cos(2 * np.pi * self.k * x0), np.sin(2 * np.pi * self.k * x0)
        return TrigPoly(self.a0, self.cos_amp * c + self.sin_amp * s,
                        self.sin_amp * c - self.cos_amp * s)


class CoboundaryObservable:
    """g = h - exp(-f) * (h o T), the planted form used by the recurrence route."""

    def __init__(self, h, f, cf):
        self.h = h
        self.f = f
        self.theta_dd = dd_from_fraction(cf.theta_mid())
        self.exact = False
        self.is_integer_pwc = False

    def eval_dd(self, hi, lo):
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        th, tl = self.theta_dd
        shi, slo = dd_add_wrap(hi, lo, th, tl)
        return self.h.eval_dd(hi, lo) - np.exp(-self.f.eval_dd(hi, lo)) * self.h.eval_dd(shi, slo)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return self.eval_dd(x, np.zeros_like(x))

    def __call__(self, x):
        return self.eval(x)

    def mean(self, grid=1 << 16):
        t = np.arange(grid) / grid
        return float(np.mean(self.eval(t)))

    def variation_circle(self, grid=1 << 16):
        t = np.arange(grid + 1) / grid
        v = self.eval(t)
        return float(np.sum(np.abs(np.diff(v))))

    variation_interval = variation_circle

    def bounds(self, grid=1 << 16):
        t = np.arange(grid) / grid
        v = self.eval(t)
        return float(v.min()), float(v.max())

    def sup_norm(self, grid=1 << 16):
        lo, hi = self.bounds(grid)
        return max(abs(lo), abs(hi))


# -- canonical constructors ------------------------------------------------


def indicator_pm() -> PiecewiseBV:
    """+1 on [0, 1/2), -1 on [1/2, 1); interval variation 2, circle variation 4."""
    return PiecewiseBV([0, Fraction(1, 2)], [1, -1], [0, 0])


def sawtooth() -> PiecewiseBV:
    """x - 1/2 on [0, 1); centered, circle variation 2."""
    return PiecewiseBV([0], [Fraction(-1, 2)], [1])


def cosine(amplitude=1.0, mode=1) -> TrigPoly:
    amps = [0.0] * mode
    amps[mode - 1] = amplitude
    return TrigPoly(0.0, amps, ())


def zero() -> PiecewiseBV:
    return PiecewiseBV([0], [0], [0])


def constant(c) -> PiecewiseBV:
    return PiecewiseBV([0], [c], [0])
