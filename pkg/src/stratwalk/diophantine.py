"""Continued fractions of a rotation angle: convergents, Ostrowski digits, type estimates.

The angle is kept as an exact rational enclosure [lo, hi] so that every derived
inequality (the convergent sandwich, digit bounds, parity facts) can be certified
without floating-point tolerances.  Partial quotients are produced by interval
Gauss iteration: a step is accepted only when the image interval does not
straddle an integer boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import DepthExceeded, PrecisionExhausted, RationalInput

_HALF = Fraction(1, 2)


def sqrt_enclosure(n: int, digits: int = 60) -> tuple[Fraction, Fraction]:
    """Rational bounds lo <= sqrt(n) <= hi with hi - lo = 10**-digits."""
    scale = 10**digits
    root = math.isqrt(n * scale * scale)
    lo = Fraction(root, scale)
    return lo, lo + Fraction(1, scale)


def _as_enclosure(theta) -> tuple[Fraction, Fraction]:
    if isinstance(theta, tuple):
        lo, hi = Fraction(theta[0]), Fraction(theta[1])
    else:
        lo = hi = Fraction(theta)
    if not (0 < lo <= hi < 1):
        raise ValueError(f"angle enclosure must lie in (0,1), got [{lo}, {hi}]")
    return lo, hi


def _gauss_step(lo: Fraction, hi: Fraction, k: int):
    """One certified Gauss step on an enclosure of an angle in (0,1)."""
    if lo == hi:
        if lo == 0:
            raise RationalInput(f"Gauss orbit terminates after {k} steps")
        inv = 1 / lo
        a = math.floor(inv)
        rem = inv - a
        return a, rem, rem  # rem == 0 is legal here; the *next* step raises
    if lo == 0:
        raise PrecisionExhausted(f"enclosure touches 0 at Gauss step {k}")
    inv_hi, inv_lo = 1 / hi, 1 / lo
    a = math.floor(inv_hi)
    if inv_lo > a + 1:
        raise PrecisionExhausted(f"enclosure straddles an integer boundary at Gauss step {k}")
    # an irrational strictly inside the enclosure maps into [inv_hi - a, inv_lo - a)
    return a, inv_hi - a, min(inv_lo - a, Fraction(1))


@dataclass(frozen=True)
class OstrowskiDigits:
    """Digits b_0..b_m of n = sum_k b_k q_k in the numeration driven by the quotients."""

    n: int
    digits: tuple[int, ...]

    @property
    def top(self) -> int:
        return len(self.digits) - 1

    @property
    def digit_sum(self) -> int:
        return sum(self.digits)


@dataclass(frozen=True)
class LogQuotientSeries:
    """Partial sums of sum_n log(1 + a_n)/(a_1 + ... + a_n) with a divergence flag."""

    terms: tuple[float, ...]
    partial_sums: tuple[float, ...]
    diverging: bool
    basis: str  # "family" when declared by a closed-form family, else "finite-depth"

    @property
    def partial_sum(self) -> float:
        return self.partial_sums[-1]


class ContinuedFraction:
    """Partial-quotient expansion with exact convergents; treat as immutable.

    ``a[i]`` is the (i+1)-th partial quotient; ``p`` and ``q`` include the
    index-0 seeds, so ``q[n]`` is the n-th convergent denominator and
    ``len(q) == depth + 1``.
    """

    def __init__(self, a: Sequence[int], enclosure=None, family=None):
        a = tuple(int(x) for x in a)
        if not a or any(x < 1 for x in a):
            raise ValueError("partial quotients must be a nonempty sequence of ints >= 1")
        ps, qs = [0], [1]
        p_prev, q_prev = 1, 0  # index -1 seeds
        for an in a:
            ps.append(an * ps[-1] + p_prev)
            qs.append(an * qs[-1] + q_prev)
            p_prev, q_prev = ps[-2], qs[-2]
        self.a = a
        self.p = tuple(ps)
        self.q = tuple(qs)
        self.family = family
        if enclosure is None:
            enclosure = self._convergent_bracket()
        self._lo, self._hi = enclosure

    def _convergent_bracket(self) -> tuple[Fraction, Fraction]:
        # every irrational with these leading quotients lies strictly between the
        # last convergent and its mediant with the previous one
        end_a = Fraction(self.p[-1], self.q[-1])
        end_b = Fraction(self.p[-1] + self.p[-2], self.q[-1] + self.q[-2])
        return (end_a, end_b) if end_a < end_b else (end_b, end_a)

    # -- construction -----------------------------------------------------

    @classmethod
    def expand(cls, theta, depth: int) -> "ContinuedFraction":
        """Quotients of an angle given as a value or a rational enclosure.

        Raises RationalInput if the Gauss orbit terminates before ``depth``
        steps, PrecisionExhausted if a quotient cannot be certified.
        """
        lo, hi = _as_enclosure(theta)
        quotients = []
        cur_lo, cur_hi = lo, hi
        for k in range(depth):
            ak, cur_lo, cur_hi = _gauss_step(cur_lo, cur_hi, k)
            quotients.append(ak)
        cf = cls(quotients)
        if lo == hi:
            return cls(quotients, enclosure=(lo, hi))
        blo, bhi = cf._convergent_bracket()
        return cls(quotients, enclosure=(max(lo, blo), min(hi, bhi)))

    @classmethod
    def from_quotients(cls, a: Sequence[int], family=None) -> "ContinuedFraction":
        return cls(a, family=family)

    @classmethod
    def from_family(cls, name: str, depth: int, **params) -> "ContinuedFraction":
        return cls(family_quotients(name, depth, **params), family=(name, dict(params)))

    # -- basic views ------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.a)

    @property
    def enclosure(self) -> tuple[Fraction, Fraction]:
        return self._lo, self._hi

    @property
    def theta(self) -> float:
        return float(self.theta_mid())

    def theta_mid(self) -> Fraction:
        return (self._lo + self._hi) / 2

    def width(self) -> Fraction:
        return self._hi - self._lo

    def __repr__(self):
        head = ",".join(str(x) for x in self.a[:6])
        tail = ",..." if self.depth > 6 else ""
        return f"ContinuedFraction([0;{head}{tail}], depth={self.depth})"

    # -- certified distances ----------------------------------------------

    def dist_to_z(self, k: int) -> tuple[Fraction, Fraction]:
        """Certified bounds on the distance from k*theta to the nearest integer."""
        ylo, yhi = k * self._lo, k * self._hi
        if yhi - ylo >= _HALF:
            raise PrecisionExhausted(f"enclosure too wide to localize {k}*theta")
        m = math.floor((ylo + yhi) / 2 + _HALF)
        a, b = ylo - m, yhi - m
        if a >= 0:
            return a, b
        if b <= 0:
            return -b, -a
        return Fraction(0), max(-a, b)

    def conv_error(self, n: int) -> tuple[Fraction, Fraction]:
        """Certified bounds on |q_n theta - p_n|.

        Coincides with the distance from q_n*theta to the nearest integer for
        every n >= 1; at n = 0 the two differ when theta > 1/2.
        """
        ylo = self.q[n] * self._lo - self.p[n]
        yhi = self.q[n] * self._hi - self.p[n]
        if ylo >= 0:
            return ylo, yhi
        if yhi <= 0:
            return -yhi, -ylo
        return Fraction(0), max(-ylo, yhi)

    def sandwich_holds(self, n: int) -> bool:
        """Exact check of 1/(q_n + q_{n+1}) <= |q_n theta - p_n| <= 1/q_{n+1}."""
        if n + 1 > self.depth:
            raise DepthExceeded(f"need q_{n + 1}, only depth {self.depth} computed")
        d_lo, d_hi = self.conv_error(n)
        return Fraction(1, self.q[n] + self.q[n + 1]) <= d_lo and d_hi <= Fraction(1, self.q[n + 1])

    # -- Ostrowski numeration ---------------------------------------------

    def ostrowski(self, n: int) -> OstrowskiDigits:
        """Greedy digits of n >= 0 against the convergent denominators."""
        if n < 0:
            raise ValueError("Ostrowski digits are defined for n >= 0")
        if n >= self.q[-1]:
            raise DepthExceeded(f"n = {n} >= q_{self.depth} = {self.q[-1]}; expand deeper")
        if n == 0:
            return OstrowskiDigits(0, (0,))
        m = 0
        while self.q[m + 1] <= n:
            m += 1
        digits = [0] * (m + 1)
        r = n
        for k in range(m, -1, -1):
            digits[k], r = divmod(r, self.q[k])
        return OstrowskiDigits(n, tuple(digits))

    def check_digits(self, d: OstrowskiDigits) -> bool:
        """Digit constraints: b_0 <= a_1 - 1, 0 <= b_j <= a_{j+1}, top digit >= 1."""
        b = d.digits
        if sum(bk * self.q[k] for k, bk in enumerate(b)) != d.n:
            return False
        if d.n == 0:
            return b == (0,)
        if not 0 <= b[0] <= self.a[0] - 1:
            return False
        for j in range(1, len(b)):
            if not 0 <= b[j] <= self.a[j]:
                return False
        return b[-1] >= 1

    # -- growth diagnostics -----------------------------------------------

    def type_estimate(self) -> tuple[float, list[float]]:
        """Tail surrogate of the type limsup log q_{n+1} / log q_n.

        Returns (estimate, per_n) where per_n collects the ratios at every
        index with q_n > 1 and the estimate is the max of the last three.
        """
        ratios = [
            math.log(self.q[n + 1]) / math.log(self.q[n])
            for n in range(1, self.depth)
            if self.q[n] > 1
        ]
        if not ratios:
            raise DepthExceeded("need at least one index with q_n > 1")
        return max(ratios[-3:]), ratios

    def log_series(self) -> LogQuotientSeries:
        """Partial sums of sum_n log(1 + a_n)/(a_1 + ... + a_n) and a trend flag.

        The flag is exact when the quotients come from a declared closed-form
        family; otherwise it is finite-depth evidence only (terms decaying
        slower than 1/n over the tail half count as diverging).
        """
        terms, acc = [], 0
        for an in self.a:
            acc += an
            terms.append(math.log1p(an) / acc)
        partial, s = [], 0.0
        for t in terms:
            s += t
            partial.append(s)
        declared = _family_series_verdict(self.family)
        if declared is not None:
            diverging, basis = declared, "family"
        else:
            half = len(terms) // 2
            tail = [(n + 1) * t for n, t in enumerate(terms) if n >= half]
            diverging, basis = (min(tail) >= 0.05), "finite-depth"
        return LogQuotientSeries(tuple(terms), tuple(partial), diverging, basis)


def _family_series_verdict(family):
    if family is None:
        return None
    name = family[0]
    if name == "constant":
        return True  # terms ~ log(1+k)/(k n): harmonic tail, divergent
    if name in ("power", "doubling", "prop1"):
        return False  # quotients grow at least polynomially: summable terms
    return None


def family_quotients(name: str, depth: int, **params) -> list[int]:
    """Closed-form partial-quotient families used by the bundled experiments."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if name == "constant":
        k = int(params.get("k", 1))
        return [k] * depth
    if name == "power":
        s = int(params.get("s", 6))
        return [max(1, m**s) for m in range(1, depth + 1)]
    if name == "doubling":
        # a_1 = 1 odd, a_n = 2^(2^(n-1) - 1) even for n >= 2
        return [2 ** (2 ** (n - 1) - 1) for n in range(1, depth + 1)]
    if name == "prop1":
        a1 = int(params.get("a1", 3))
        delta = float(params.get("delta", 2.0))
        if a1 % 2 == 0 or a1 < 1:
            raise ValueError("prop1 family needs an odd leading quotient")
        if delta <= 1:
            raise ValueError("prop1 family needs delta > 1")
        out = [a1]
        for _ in range(depth - 1):
            nxt = max(2, math.ceil(out[-1] ** delta))
            out.append(nxt + nxt % 2)  # force even
        return out
    raise ValueError(f"unknown quotient family {name!r}")


def family_cf(name: str, depth: int | None = None, min_width=None, **params) -> ContinuedFraction:
    """Family constructor that extends depth until the enclosure is narrow.

    ``min_width`` defaults to 1e-40, tight enough that fixed-precision orbit
    arithmetic downstream shares every convergent with denominator <= 1e12.
    """
    if min_width is None:
        min_width = Fraction(1, 10**40)
    if depth is not None:
        cf = ContinuedFraction.from_family(name, depth, **params)
        if cf.width() > min_width:
            raise PrecisionExhausted(f"family {name} at depth {depth} is too coarse")
        return cf
    d = 4
    while True:
        cf = ContinuedFraction.from_family(name, d, **params)
        if cf.width() <= min_width:
            return cf
        if d > 4096:
            raise PrecisionExhausted(f"family {name} enclosure did not narrow by depth {d}")
        d *= 2
