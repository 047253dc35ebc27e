"""Dispersion tables for the horizontal spread of a stratified walk.

A ``DispersionTable`` fixes an environment and a horizon, extends the log
vertical-ratio cocycle a_k = log rho_k on both sides of the origin until the
range counters v_+/v_- pass the horizon, and precomputes scaled prefix banks
so that every windowed pair sum behind the spread functions is answered in
O(1).  Small windows are recomputed directly at local scaling, which is what
the brute-force oracles in the test-suite exercise; the bank covers the rest.

Positive sums are accumulated as log-sum-exp tables.  The signed inner sums
S_s = sum_{t<=s} g_t/rho_t are carried in a factored representation: one
shared exponent (the extremal log ratio over the stored range, or over the
window on the direct path) and a linear mantissa accumulated in extended
precision.  Windows whose exponent spread would drown the mantissa fall back
to the direct path.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import HorizonExceeded, WrongKind

__all__ = ["DispersionTable", "DominatedVariation"]

_LD = np.longdouble

# beyond this exponent spread a single shared scale loses the small terms
_MAX_SPREAD = 400.0

# inverse lookups treat g(n) <= y*(1+_TIE) as "below": accumulated rounding in
# the monotone tables must not push an exact boundary down one index
_TIE = 1e-9


def _safe_log(v: float) -> float:
    return math.log(v) if v > 0.0 else -math.inf


def _cocycle_values(incr, n0: int, n1: int) -> np.ndarray:
    """Values c_n, n in [n0, n1], of the cocycle with c_0 = 0, c_{n+1}-c_n = incr(n).

    ``incr(k0, k1)`` must return the increment array for indices [k0, k1).
    """
    out = np.empty(n1 - n0 + 1)
    if n0 < 0:
        rev = incr(n0, 0)[::-1]  # increments at -1, -2, ..., n0
        seg = -np.cumsum(rev, dtype=_LD)  # c_{-1}, c_{-2}, ..., c_{n0}
        hi = min(n1, -1)
        out[: hi - n0 + 1] = seg[: -n0][::-1][: hi - n0 + 1].astype(np.float64)
    if n0 <= 0 <= n1:
        out[-n0] = 0.0
    if n1 > 0:
        seg = np.cumsum(incr(0, n1), dtype=_LD)  # c_1, ..., c_{n1}
        lo = max(n0, 1)
        out[lo - n0 :] = seg[lo - 1 :].astype(np.float64)
    return out


@dataclass(frozen=True)
class DominatedVariation:
    """Empirical dominated-variation constant sup g^-1(K y)/g^-1(y) over a grid."""

    c_k: float
    witness: float
    skipped: tuple


class DispersionTable:
    """Spread functions of one environment up to a fixed horizon.

    Parameters
    ----------
    env : environment with ``arrays``/``drift`` and a ``flat`` flag
    horizon : the largest argument the range counters must certify
    prefactor : optional positive override applied to both v_-/w_- weights
        (default: beta_0/alpha_0 and alpha_0/beta_0 read off the environment)
    k_cap : hard bound on the stored index range per side
    direct_cap : windows up to this length are recomputed directly
    """

    def __init__(self, env, horizon: int = 1 << 16, prefactor: float | None = None,
                 k_cap: int | None = None, direct_cap: int = 4096):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.env = env
        self.horizon = int(horizon)
        self.direct_cap = int(direct_cap)
        self._cap = int(k_cap) if k_cap is not None else max(8 * self.horizon, 1 << 18)
        self._lock = threading.Lock()

        a0, b0, _, _ = (float(v[0]) for v in env.arrays(0, 1))
        if prefactor is None:
            self._pf_minus = b0 / a0
            self._pf_plus = a0 / b0
        else:
            if prefactor <= 0:
                raise ValueError("prefactor must be positive")
            self._pf_minus = self._pf_plus = float(prefactor)

        self._grow()
        self._bank = None
        self._flat_ready = False

    # ------------------------------------------------------------------
    # construction

    def _ratio_incr(self, k0: int, k1: int) -> np.ndarray:
        # log(beta_{i+1}/alpha_{i+1}) for i in [k0, k1)
        if self.env.flat:
            return np.zeros(k1 - k0)
        a, b, _, _ = self.env.arrays(k0 + 1, k1 + 1)
        return np.log(b) - np.log(a)

    def _grow(self) -> None:
        log_h = math.log(self.horizon)

        n_pos = min(self._cap, self.horizon + 64)
        while True:
            a_pos = _cocycle_values(self._ratio_incr, 0, n_pos)
            lvp = np.logaddexp.accumulate(a_pos)
            j = int(np.searchsorted(lvp, log_h, side="right"))
            if j < len(lvp) or n_pos >= self._cap:
                break
            n_pos = min(self._cap, 2 * n_pos)
        k_plus = min(j, n_pos)

        n_neg = min(self._cap, self.horizon + 64)
        while True:
            a_neg = _cocycle_values(self._ratio_incr, -n_neg - 1, 0)
            rev = a_neg[-2::-1]  # a_{-1}, a_{-2}, ..., a_{-n_neg-1}
            lvm = math.log(self._pf_minus) + np.logaddexp.accumulate(rev)
            j = int(np.searchsorted(lvm, log_h, side="right"))
            if j < len(lvm) or n_neg >= self._cap:
                break
            n_neg = min(self._cap, 2 * n_neg)
        k_minus = min(j, n_neg)

        self.k_plus = k_plus
        self.k_minus = k_minus
        self._kmin = -k_minus - 1
        self._idx0 = k_minus + 1
        self._a = np.concatenate([a_neg[n_neg - k_minus : n_neg + 1], a_pos[: k_plus + 1]])
        self._lvp = lvp[: k_plus + 1]
        self._lvm = lvm[: k_minus + 1]
        self._lwp = np.logaddexp.accumulate(-a_pos[: k_plus + 1])
        self._lwm = math.log(self._pf_plus) + np.logaddexp.accumulate(-rev[: k_minus + 1])

        al, _, ga, ep = self.env.arrays(self._kmin, k_plus + 1)
        self._g = ga * ep / al

    def extend(self, horizon: int) -> None:
        """Regrow the table; the effective horizon at least doubles."""
        target = max(2 * self.horizon, int(horizon))
        with self._lock:
            self.horizon = target
            self._cap = max(8 * target, self._cap)
            self._grow()
            self._bank = None
            self._flat_ready = False

    # ------------------------------------------------------------------
    # raw sequences and range counters

    def log_rho(self, n: int) -> float:
        if not self._kmin <= n <= self.k_plus:
            raise HorizonExceeded(f"rho_{n} outside stored range [{self._kmin}, {self.k_plus}]")
        return float(self._a[n - self._kmin])

    def rho(self, n: int) -> float:
        return math.exp(self.log_rho(n))

    def _table_value(self, table: np.ndarray, n: int, name: str) -> float:
        if not 0 <= n < len(table):
            raise HorizonExceeded(f"{name}({n}) outside stored range [0, {len(table) - 1}]")
        return float(table[n])

    def log_v_plus(self, n: int) -> float:
        return self._table_value(self._lvp, n, "v_plus")

    def log_v_minus(self, n: int) -> float:
        return self._table_value(self._lvm, n, "v_minus")

    def log_w_plus(self, n: int) -> float:
        return self._table_value(self._lwp, n, "w_plus")

    def log_w_minus(self, n: int) -> float:
        return self._table_value(self._lwm, n, "w_minus")

    def v_plus(self, n: int) -> float:
        return math.exp(self.log_v_plus(n))

    def v_minus(self, n: int) -> float:
        return math.exp(self.log_v_minus(n))

    def w_plus(self, n: int) -> float:
        return math.exp(self.log_w_plus(n))

    def w_minus(self, n: int) -> float:
        return math.exp(self.log_w_minus(n))

    def _table_inverse(self, table: np.ndarray, y: float, name: str) -> int:
        if y <= 0.0:
            return 0
        ly = math.log(y) + _TIE
        if ly < table[0]:
            return 0
        j = int(np.searchsorted(table, ly, side="right")) - 1
        if j >= len(table) - 1:
            raise HorizonExceeded(f"{name} inverse at {y} needs the table extended")
        return j

    def v_plus_inv(self, y: float) -> int:
        return self._table_inverse(self._lvp, y, "v_plus")

    def v_minus_inv(self, y: float) -> int:
        return self._table_inverse(self._lvm, y, "v_minus")

    def w_plus_inv(self, y: float) -> int:
        return self._table_inverse(self._lwp, y, "w_plus")

    def w_minus_inv(self, y: float) -> int:
        return self._table_inverse(self._lwm, y, "w_minus")

    # ------------------------------------------------------------------
    # scaled prefix bank for the general pair sums

    def _ensure_bank(self):
        if self._bank is not None:
            return self._bank
        with self._lock:
            if self._bank is not None:
                return self._bank
            a = self._a
            s = float(a.max())
            s2 = float(-a.min())
            if s + s2 > _MAX_SPREAD:
                self._bank = {"wide": True, "s": s, "s2": s2}
                return self._bank
            with np.errstate(under="ignore"):
                rt = np.exp(a - s)
                qt = np.exp(-a - s2)

            def csum(x):
                return np.cumsum(x, dtype=_LD)

            spad = np.concatenate([np.zeros(1, _LD), csum(self._g * qt)])
            spad -= spad[self._idx0 + 1]  # pin S_0 = 0
            spad = spad.astype(np.float64)
            sprev, scur = spad[:-1], spad[1:]

            pin = csum(rt).astype(np.float64)
            qin = csum(qt).astype(np.float64)
            r1in = csum(rt * sprev).astype(np.float64)
            r2in = csum(rt * sprev * sprev).astype(np.float64)

            def pad(x):
                return np.concatenate([[0.0], x])

            self._bank = {
                "wide": False,
                "s": s,
                "s2": s2,
                "P": pad(pin),
                "Q": pad(qin),
                "R1": pad(r1in),
                "R2": pad(r2in),
                "A1": pad(csum(rt * scur).astype(np.float64)),
                "A2": pad(csum(rt * scur * scur).astype(np.float64)),
                "U1": pad(csum(rt * qin).astype(np.float64)),
                "U2": pad(csum(qt * pin).astype(np.float64)),
                "D": pad(csum(rt * (scur * scur * pin - 2.0 * scur * r1in + r2in)).astype(np.float64)),
            }
            return self._bank

    def _pair_parts_direct(self, lo: int, hi: int, ones: bool) -> tuple[float, float]:
        ja, jb = lo - self._kmin, hi - self._kmin
        al = self._a[ja : jb + 1]
        gl = np.ones(jb - ja + 1) if ones else self._g[ja : jb + 1]
        sl = float(al.max())
        sl2 = float(-al.min())
        with np.errstate(under="ignore"):
            rt = np.exp(al - sl).astype(_LD)
            qt = np.exp(-al - sl2).astype(_LD)
        spad = np.concatenate([np.zeros(1, _LD), np.cumsum(gl * qt)])
        spad -= spad.mean()
        sprev, scur = spad[:-1], spad[1:]
        p = np.cumsum(rt)
        r1 = np.cumsum(rt * sprev)
        r2 = np.cumsum(rt * sprev * sprev)
        p2 = float((rt * (scur * scur * p - 2.0 * scur * r1 + r2)).sum())
        q = np.cumsum(qt)
        p1 = float((rt * q + qt * p).sum())
        e = sl + sl2
        return _safe_log(p1) + e, _safe_log(p2) + 2.0 * e

    def _pair_parts(self, lo: int, hi: int, ones: bool = False) -> tuple[float, float]:
        """(log part1, log part2) of the pair sum over the window [lo, hi].

        part1 = sum_{k<=l} (rho_l/rho_k + rho_k/rho_l); part2 the same sum
        weighted by the squared inner signed sums instead.
        """
        if lo > hi:
            raise ValueError("empty window")
        if hi - lo + 1 <= self.direct_cap or ones:
            return self._pair_parts_direct(lo, hi, ones)
        bank = self._ensure_bank()
        if bank["wide"]:
            return self._pair_parts_direct(lo, hi, ones)
        ja, jb = lo - self._kmin, hi - self._kmin

        def d(x):
            return x[jb + 1] - x[ja]

        p, q = bank["P"], bank["Q"]
        p1 = (d(bank["U1"]) - q[ja] * d(p)) + (d(bank["U2"]) - p[ja] * d(q))
        p2 = d(bank["D"]) - p[ja] * d(bank["A2"]) + 2.0 * bank["R1"][ja] * d(bank["A1"]) - bank["R2"][ja] * d(p)
        if p1 <= 0.0 or p2 < 0.0:  # cancellation artifact; recompute locally
            return self._pair_parts_direct(lo, hi, ones)
        e = bank["s"] + bank["s2"]
        return _safe_log(p1) + e, _safe_log(p2) + 2.0 * e

    def _window(self, m: float, n: float) -> tuple[int, int]:
        return -self.v_minus_inv(m), self.v_plus_inv(n)

    # ------------------------------------------------------------------
    # spread functions, general environment

    def log_general_phi(self, m: float, n: float) -> float:
        lo, hi = self._window(m, n)
        lp1, lp2 = self._pair_parts(lo, hi)
        return 0.5 * np.logaddexp(lp1, lp2)

    def general_phi(self, m: float, n: float) -> float:
        """Phi(-m, n): the two-sided spread over the window reached by time ~ m, n."""
        return float(math.exp(self.log_general_phi(m, n)))

    def log_phi(self, n: float) -> float:
        return self.log_general_phi(n, n)

    def phi(self, n: float) -> float:
        return float(math.exp(self.log_phi(n)))

    def log_phi_plus(self, n: float) -> float:
        l1 = self.log_general_phi(n, 0.0)
        l2 = self.log_general_phi(0.0, n)
        return 0.5 * np.logaddexp(2.0 * l1, 2.0 * l2)

    def phi_plus(self, n: float) -> float:
        return float(math.exp(self.log_phi_plus(n)))

    def _log_window_w(self, lo: int, hi: int) -> float:
        """log sum of 1/rho over [lo, hi]."""
        bank = self._ensure_bank()
        if not bank["wide"]:
            q = bank["Q"]
            val = q[hi - self._kmin + 1] - q[lo - self._kmin]
            return _safe_log(float(val)) + bank["s2"]
        sl = -self._a[lo - self._kmin : hi - self._kmin + 1]
        m = float(sl.max())
        with np.errstate(under="ignore"):
            return m + math.log(float(np.exp(sl - m).sum()))

    def log_phi_str(self, n: float) -> float:
        if n <= 0:
            return -math.inf
        lo, hi = self._window(n, n)
        return 0.5 * (math.log(n) + self._log_window_w(lo, hi))

    def phi_str(self, n: float) -> float:
        """Structure function sqrt(n * sum 1/rho over the reachable window)."""
        return float(math.exp(self.log_phi_str(n)))

    def phi_approx(self, n: float) -> float:
        """Comparison form: phi_str(n) + sqrt(part2 over the full window)."""
        lo, hi = self._window(n, n)
        _, lp2 = self._pair_parts(lo, hi)
        return self.phi_str(n) + math.exp(0.5 * lp2)

    def phi_plus_approx(self, n: float) -> float:
        """Comparison form: phi_str(n) + the part2 sum restricted to k*l >= 0."""
        lo, hi = self._window(n, n)
        _, la = self._pair_parts(lo, 0)
        _, lb = self._pair_parts(0, hi)
        g0 = float(self._g[self._idx0])
        val = max(math.exp(la) + math.exp(lb) - g0 * g0, 0.0)
        return self.phi_str(n) + math.sqrt(val)

    def psi_variants(self, n: float) -> tuple[float, float, float, float]:
        """(Psi, Psi_plus, Psi_plusplus, Psi_plusminus): the g == 1 pair sums."""
        lo, hi = self._window(n, n)
        _, lfull = self._pair_parts(lo, hi, ones=True)
        _, lpp = self._pair_parts(0, hi, ones=True)
        _, lpm = self._pair_parts(lo, 0, ones=True)
        psi_pp = math.exp(0.5 * lpp)
        psi_pm = math.exp(0.5 * lpm)
        # the single overlapping pair (0,0) contributes exactly 1 to each half
        psi_plus = math.sqrt(max(psi_pp**2 + psi_pm**2 - 1.0, 0.0))
        return math.exp(0.5 * lfull), psi_plus, psi_pp, psi_pm

    # ------------------------------------------------------------------
    # vertically flat engine

    def _ensure_flat(self):
        if not self.env.flat:
            raise WrongKind(f"flat spread functions on a {self.env.kind!r} environment")
        if self._flat_ready:
            return
        with self._lock:
            if self._flat_ready:
                return
            h = self.horizon
            f = _cocycle_values(self.env.drift, -h, h)
            f -= f.mean()  # psi is invariant under constant shifts
            self._flat_f = f
            self._fp1 = np.concatenate([np.zeros(1, _LD), np.cumsum(f, dtype=_LD)])
            self._fp2 = np.concatenate([np.zeros(1, _LD), np.cumsum(f * f, dtype=_LD)])
            self._flat_ready = True

    def psi(self, a: int, b: int) -> float:
        """Pair dispersion sum_{a<=k<l<=b} (f_l - f_k)^2 of the drift cocycle."""
        self._ensure_flat()
        if a > b:
            raise ValueError("psi needs a <= b")
        h = self.horizon
        if a < -h or b > h:
            raise HorizonExceeded(f"psi window [{a}, {b}] outside [-{h}, {h}]")
        n = b - a + 1
        if n <= self.direct_cap:
            x = self._flat_f[a + h : b + h + 1].astype(_LD)
            x -= x.mean()
            return max(float(n * (x * x).sum() - x.sum() ** 2), 0.0)
        s1 = self._fp1[b + h + 1] - self._fp1[a + h]
        s2 = self._fp2[b + h + 1] - self._fp2[a + h]
        return max(float(n * s2 - s1 * s1), 0.0)

    def flat_phi(self, n: int) -> tuple[float, float]:
        """(phi(n), phi_plus(n)) of a vertically flat environment."""
        self._ensure_flat()
        if n == 0:
            return 0.0, 0.0
        return (
            math.sqrt(n * n + self.psi(-n, n)),
            math.sqrt(n * n + self.psi(-n, 0) + self.psi(0, n)),
        )

    # ------------------------------------------------------------------
    # inverses and diagnostics

    def _int_inverse(self, logfn, x: float, cap: int | None) -> int:
        if x <= 0.0:
            return 0
        lx = math.log(x) + _TIE
        if logfn(0) > lx:
            return 0
        lo, hi = 0, 1
        while True:
            if cap is not None and hi > cap:
                if logfn(cap) > lx:
                    hi = cap
                    break
                raise HorizonExceeded(f"inverse at {x} needs the table extended")
            if logfn(hi) > lx:
                break
            lo, hi = hi, 2 * hi
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if logfn(mid) <= lx:
                lo = mid
            else:
                hi = mid
        return lo

    def inverse(self, which: str, x: float) -> int:
        """Largest n with g(n) <= x, certified by g(n+1) > x; 0 if x < g(0)."""
        if which == "v_plus":
            return self.v_plus_inv(x)
        if which == "v_minus":
            return self.v_minus_inv(x)
        if which == "w_plus":
            return self.w_plus_inv(x)
        if which == "w_minus":
            return self.w_minus_inv(x)
        if which == "phi":
            return self._int_inverse(self.log_phi, x, None)
        if which == "phi_plus":
            return self._int_inverse(self.log_phi_plus, x, None)
        if which == "phi_str":
            return self._int_inverse(self.log_phi_str, x, None)
        if which == "flat_phi":
            return self._int_inverse(lambda n: _safe_log(self.flat_phi(n)[0]), x, self.horizon - 1)
        if which == "flat_phi_plus":
            return self._int_inverse(lambda n: _safe_log(self.flat_phi(n)[1]), x, self.horizon - 1)
        raise ValueError(f"unknown monotone function {which!r}")

    def dominated_variation(self, which: str, k: float, grid) -> DominatedVariation:
        """Empirical sup of g^-1(k*y)/g^-1(y) over the grid of y values."""
        if k <= 1.0:
            raise ValueError("k must exceed 1")
        best, witness, skipped = 0.0, math.nan, []
        for y in grid:
            try:
                num = self.inverse(which, k * y)
                den = self.inverse(which, y)
            except HorizonExceeded:
                skipped.append(y)
                continue
            r = num / max(den, 1)
            if r > best:
                best, witness = r, y
        return DominatedVariation(best, witness, tuple(skipped))
