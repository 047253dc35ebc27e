"""Rotation orbits, Birkhoff cocycles and the constructive tent-function machinery.

Orbit positions frac(x + k*theta) are produced in double-double precision from
exact rational anchors, so a position is never off by more than ~1e-32.  That
makes indicator evaluation along the orbit decision-exact for every horizon in
scope and keeps million-step Birkhoff sums of integer-valued steps exact.
"""

from __future__ import annotations

import math
import threading
from fractions import Fraction

import numpy as np

from .ddarith import dd_add_wrap, dd_from_fraction
from .diophantine import ContinuedFraction
from .errors import HorizonExceeded, TruncationTooDeep
from .functions import PiecewiseBV

_BLOCK = 4096


def as_dd(x) -> tuple[float, float]:
    """Coerce a base point to a double-double pair in [0, 1)."""
    if isinstance(x, tuple):
        return float(x[0]), float(x[1])
    if isinstance(x, Fraction):
        return dd_from_fraction(x % 1)
    return float(x) % 1.0, 0.0


class OrbitCache:
    """Block-cached dd offsets frac(k * theta) for a fixed angle.

    The working angle is the exact rational midpoint of the continued-fraction
    enclosure; with the default enclosure width it shares every convergent of
    the target angle with denominator below 1e12, so orbit combinatorics are
    faithful at any horizon we simulate.
    """

    def __init__(self, cf: ContinuedFraction, max_blocks: int = 1024):
        self.cf = cf
        self.theta_frac = cf.theta_mid()
        self.theta_dd = dd_from_fraction(self.theta_frac)
        self.max_blocks = max_blocks
        self._lock = threading.Lock()
        self._blocks: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        num, den = self.theta_frac.numerator, self.theta_frac.denominator
        self._num, self._den = num, den
        small_hi = np.empty(_BLOCK)
        small_lo = np.empty(_BLOCK)
        acc = 0
        for b in range(_BLOCK):
            small_hi[b], small_lo[b] = dd_from_fraction(Fraction(acc, den))
            acc = (acc + num) % den
        self._small = (small_hi, small_lo)

    def _block(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        blk = self._blocks.get(i)
        if blk is not None:
            return blk
        with self._lock:
            blk = self._blocks.get(i)
            if blk is not None:
                return blk
            anchor = Fraction((i * _BLOCK * self._num) % self._den, self._den)
            ah, al = dd_from_fraction(anchor)
            sh, sl = self._small
            blk = dd_add_wrap(sh, sl, ah, al)
            if len(self._blocks) >= self.max_blocks:
                self._blocks.pop(next(iter(self._blocks)))
            self._blocks[i] = blk
            return blk

    def offsets(self, k0: int, k1: int) -> tuple[np.ndarray, np.ndarray]:
        """dd arrays of frac(k*theta) for k in [k0, k1)."""
        n = k1 - k0
        hi = np.empty(n)
        lo = np.empty(n)
        if n == 0:
            return hi, lo
        pos = 0
        for i in range(k0 // _BLOCK, (k1 - 1) // _BLOCK + 1):
            bh, bl = self._block(i)
            a = max(k0, i * _BLOCK) - i * _BLOCK
            b = min(k1, (i + 1) * _BLOCK) - i * _BLOCK
            hi[pos : pos + b - a] = bh[a:b]
            lo[pos : pos + b - a] = bl[a:b]
            pos += b - a
        return hi, lo

    def positions(self, x, k0: int, k1: int) -> tuple[np.ndarray, np.ndarray]:
        """dd arrays of frac(x + k*theta) for k in [k0, k1)."""
        xh, xl = as_dd(x)
        oh, ol = self.offsets(k0, k1)
        return dd_add_wrap(oh, ol, xh, xl)


def rotate(cf: ContinuedFraction, x, n: int) -> float:
    """frac(x + n*theta) through exact rational arithmetic (no drift in n)."""
    xf = x if isinstance(x, Fraction) else Fraction(float(x))
    return float((xf + n * cf.theta_mid()) % 1)


class Cocycle:
    """Birkhoff sums f_n(x) of an observable over the rotation by theta.

    f_0 = 0, f_n = f + f o T + ... + f o T^(n-1) for n >= 1, and
    f_{-n} = -(f o T^{-n} + ... + f o T^{-1}).
    """

    def __init__(self, f, cf: ContinuedFraction, x=0.0, orbit: OrbitCache | None = None):
        self.f = f
        self.cf = cf
        self.x = x
        self.x_dd = as_dd(x)
        self.orbit = orbit if orbit is not None else OrbitCache(cf)

    def sample(self, k0: int, k1: int) -> np.ndarray:
        """f(T^k x) for k in [k0, k1)."""
        hi, lo = self.orbit.positions(self.x_dd, k0, k1)
        return self.f.eval_dd(hi, lo)

    def stream(self, n0: int, n1: int) -> np.ndarray:
        """f_n(x) for every n in [n0, n1], inclusive."""
        if n0 > n1:
            raise ValueError("empty stream range")
        integer = self._integer_valued()
        out = np.empty(n1 - n0 + 1)
        if n1 >= 0:
            prefix = _prefix_with_zero(self.sample(0, n1), integer)
            lo = max(n0, 0)
            out[lo - n0 :] = prefix[lo : n1 + 1]
        if n0 < 0:
            vals = self.sample(n0, 0)
            back = _prefix_with_zero(vals[::-1], integer)  # back[j]: sum of last j
            hi = min(n1, -1)
            js = np.arange(-n0, -hi - 1, -1)
            out[: len(js)] = -back[js]
        return out

    def value(self, n: int) -> float:
        """Single Birkhoff sum; exact for integer-valued piecewise-constant f."""
        if n == 0:
            return 0.0
        if n > 0:
            return _blocked_total(self.sample(0, n), self._integer_valued())
        return -_blocked_total(self.sample(n, 0), self._integer_valued())

    def _integer_valued(self) -> bool:
        return bool(getattr(self.f, "is_integer_pwc", False))


def _prefix_with_zero(vals: np.ndarray, integer: bool) -> np.ndarray:
    """[0, v0, v0+v1, ...]; int64 cumsum when exact, compensated blocks else."""
    n = len(vals)
    out = np.empty(n + 1)
    out[0] = 0.0
    if n == 0:
        return out
    if integer:
        out[1:] = np.cumsum(np.rint(vals).astype(np.int64))
        return out
    step = 8192
    carry, comp = 0.0, 0.0
    for s in range(0, n, step):
        blk = vals[s : s + step]
        out[s + 1 : s + 1 + len(blk)] = carry + np.cumsum(blk)
        y = math.fsum(blk.tolist()) - comp
        t = carry + y
        comp = (t - carry) - y
        carry = t
    return out


def _blocked_total(vals: np.ndarray, integer: bool) -> float:
    if integer:
        return float(np.rint(vals).astype(np.int64).sum())
    return math.fsum(
        math.fsum(vals[s : s + 8192].tolist()) for s in range(0, len(vals), 8192)
    )


def birkhoff(f, cf, x, n, orbit=None) -> float:
    return Cocycle(f, cf, x, orbit=orbit).value(n)


def birkhoff_stream(f, cf, x, n0, n1, orbit=None) -> np.ndarray:
    return Cocycle(f, cf, x, orbit=orbit).stream(n0, n1)


def ostrowski_bound(f, cf: ContinuedFraction, n: int) -> float:
    """Denjoy-Koksma style bound: circle variation times the digit sum of |n|."""
    if n == 0:
        return 0.0
    return float(f.variation_circle()) * cf.ostrowski(abs(n)).digit_sum


def hitting_time(cf: ContinuedFraction, x, r: float, horizon: int, orbit=None) -> int:
    """Least n >= 1 with dist(x + n*theta, Z) < r; HorizonExceeded past the budget."""
    orbit = orbit if orbit is not None else OrbitCache(cf)
    xdd = as_dd(x)
    step = 1 << 16
    for s in range(1, horizon + 1, step):
        e = min(s + step, horizon + 1)
        hi, _ = orbit.positions(xdd, s, e)
        idx = np.flatnonzero(np.minimum(hi, 1.0 - hi) < r)
        if idx.size:
            return s + int(idx[0])
    raise HorizonExceeded(f"no visit to the r={r} neighborhood within {horizon} steps")


# -- tent functions and the truncated-coboundary construction --------------


def pick_function(B, Delta) -> PiecewiseBV:
    """Tent of height B on the arc (-Delta, Delta) around 0, zero elsewhere.

    Exact rational representation; mean B*Delta and circle variation 2B.
    Requires 0 < Delta < 1/2 so the support is a proper arc.
    """
    B, Delta = Fraction(B), Fraction(Delta)
    if not 0 < Delta < Fraction(1, 2):
        raise ValueError("pick width must satisfy 0 < Delta < 1/2")
    if B <= 0:
        raise ValueError("pick height must be positive")
    return PiecewiseBV(
        [0, Delta, 1 - Delta],
        [B, 0, 0],
        [-B / Delta, 0, B / Delta],
    )


def _tent_events(center: float, half_width: float, height: float) -> list[tuple[float, float]]:
    """Slope-change events of height*(1 - dist(x, center)/half_width)_+ mod 1.

    Once half_width >= 1/2 the two feet merge and the tent covers the whole
    circle; only the peak and the antipode carry slope changes then.
    """
    s = height / half_width
    if half_width < 0.5:
        return [(center - half_width, s), (center, -2 * s), (center + half_width, s)]
    return [(center, -2 * s), (center + 0.5, 2 * s)]


def _tent_mean(B: Fraction, Delta: Fraction) -> Fraction:
    if Delta < Fraction(1, 2):
        return B * Delta
    return B * (1 - 1 / (4 * Delta))


def assemble_piecewise_linear(positions, dslopes, mean_target: float) -> PiecewiseBV:
    """Continuous piecewise-linear circle function from slope-change events.

    The slope offset is pinned by zero circulation around the circle and the
    value offset by the prescribed mean; coincident events merge.
    """
    pos = np.mod(np.asarray(positions, dtype=float), 1.0)
    pos[pos >= 1.0] -= 1.0  # np.mod maps tiny negatives to exactly 1.0
    ds = np.asarray(dslopes, dtype=np.longdouble)
    upos, inv = np.unique(pos, return_inverse=True)
    acc = np.zeros(len(upos), dtype=np.longdouble)
    np.add.at(acc, inv, ds)
    if len(upos) == 0 or upos[0] != 0.0:
        upos = np.concatenate([[0.0], upos])
        acc = np.concatenate([np.zeros(1, dtype=np.longdouble), acc])
    # extended precision: cancellation across ~1e5 steep events would otherwise
    # leave 1e-8 residue on segments where the true function is zero
    d = np.diff(np.append(upos, 1.0)).astype(np.longdouble)
    slope = np.cumsum(acc)
    slope -= np.sum(slope * d)  # circle continuity: the slope integrates to 0
    vals = np.concatenate([np.zeros(1, dtype=np.longdouble), np.cumsum(slope[:-1] * d[:-1])])
    vals += mean_target - np.sum(vals * d + 0.5 * slope * d * d)
    return PiecewiseBV(upos, vals.astype(float), slope.astype(float), exact=False)


def _level_events(cf: ContinuedFraction, m: int, orbit: OrbitCache):
    """Slope events for level m: the f part telescopes 2*q_m signed tents along
    the orbit, the u part stacks 2*q_m - 1 weighted tents."""
    qm = cf.q[m]
    Delta = Fraction(1, m * m * qm)
    B = Fraction(m * m, qm)
    fD, fB = float(Delta), float(B)
    centers, _ = orbit.offsets(-qm, qm)  # frac(k theta), k in [-qm, qm): index k + qm
    f_ev: list[tuple[float, float]] = []
    u_ev: list[tuple[float, float]] = []
    for k in range(qm):
        f_ev += _tent_events(centers[qm + k], fD, fB)  # T^{-k} h peaks at frac(k theta)
        f_ev += _tent_events(centers[k], fD, -fB)  # T^{-k+q_m} h peaks at frac((k-q_m) theta)
    for ell in range(-(qm - 1), qm):
        u_ev += _tent_events(centers[qm - ell], fD, (qm - abs(ell)) * fB)
    u_mean = qm * qm * _tent_mean(B, Delta)
    return f_ev, u_ev, u_mean, fD, fB


def build_propi(cf: ContinuedFraction, M: int, atom_budget: int = 1_500_000, orbit=None):
    """Sum of truncated coboundaries driven by the convergent denominators.

    Level m spreads tents of height m^2/q_m and half-width 1/(m^2 q_m) along
    the orbit; its f part has circle variation O(1/m^2) while its primitive u
    lives on a set of length <= 2/m^2 with peaks of height ~m^2.  The identity
    f = u - u o T holds exactly level by level and survives assembly to ~1e-9.

    Returns (f, u, meta) with per-level diagnostics.
    """
    if M < 1:
        raise ValueError("need M >= 1")
    if M > cf.depth:
        raise TruncationTooDeep(f"level M = {M} exceeds the computed depth {cf.depth}")
    atoms = sum(4 * cf.q[m] - 1 for m in range(1, M + 1))
    if atoms > atom_budget:
        raise TruncationTooDeep(f"{atoms} tent atoms exceed the budget {atom_budget}")
    orbit = orbit if orbit is not None else OrbitCache(cf)

    f_ev: list[tuple[float, float]] = []
    u_ev: list[tuple[float, float]] = []
    u_mean = Fraction(0)
    meta: dict[int, dict] = {}
    for m in range(1, M + 1):
        lev_f, lev_u, lev_mean, fD, fB = _level_events(cf, m, orbit)
        f_ev += lev_f
        u_ev += lev_u
        u_mean += lev_mean
        fm = assemble_piecewise_linear([p for p, _ in lev_f], [s for _, s in lev_f], 0.0)
        um = assemble_piecewise_linear(
            [p for p, _ in lev_u], [s for _, s in lev_u], float(lev_mean)
        )
        centers, _ = orbit.offsets(-cf.q[m], cf.q[m])
        meta[m] = {
            "q": cf.q[m],
            "delta": fD,
            "height": fB,
            "variation_f": fm.variation_circle(),
            # union of the tent arcs: the exact support, immune to assembly noise
            "support_u": _arc_union_length(centers[1:], fD),
            "peak_u": float(np.max(np.abs(um.val))),
        }
    f = assemble_piecewise_linear([p for p, _ in f_ev], [s for _, s in f_ev], 0.0)
    u = assemble_piecewise_linear([p for p, _ in u_ev], [s for _, s in u_ev], float(u_mean))
    return f, u, meta


def _arc_union_length(centers: np.ndarray, half_width: float) -> float:
    """Measure of the union of arcs [c - hw, c + hw] on the circle.

    With sorted centers the union restricted to the window between consecutive
    arc starts has length min(gap, 2*hw), and those windows tile the circle.
    """
    c = np.sort(np.mod(centers, 1.0))
    gaps = np.diff(np.append(c, c[0] + 1.0))
    return float(min(1.0, np.sum(np.minimum(gaps, 2 * half_width))))
