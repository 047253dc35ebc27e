"""Empirical orbit measures and Fourier solvers for the driving rotation.

The reciprocal vertical ratios 1/rho_k, spread along a rotation orbit,
define empirical probability measures.  When a limit exists it is the
unique measure satisfying the transfer identity

    integral w dnu = integral e^{-f} (w o T) dnu

for continuous test functions w; for a coboundary f = u - u o T the limit
has density e^u / integral e^u.  This module estimates that measure and
its weighted orbit averages, quantifies how far an empirical measure is
from the identity above, and solves the two linear mode-by-mode problems

    u - u o T = f          and          h - e^{-f} (h o T) = g

for trigonometric data, reporting small-divisor health as it goes.
Everything here is pure: same inputs, same outputs, safe to fan out over
starting points or test functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .criterion import geometric_grid
from .diophantine import ContinuedFraction
from .dynamics import Cocycle
from .errors import NotCentered, SmallDivisorBlowup, WrongKind
from .functions import TrigPoly

__all__ = [
    "ARatio",
    "DivisorHealth",
    "EmpiricalMeasure",
    "HSolution",
    "RatioTrajectory",
    "SignDecision",
    "TiltedTrig",
    "TransferResidual",
    "a_ratio",
    "fourier_coboundary",
    "functional_residual",
    "integral_sign",
    "low_freq_test_set",
    "nu_f_empirical",
    "ratio_trajectory",
    "solve_h",
]

# constructor slack for the weight normalization; from_log_weights lands
# well inside this, hand-built atom lists must too
_NORM_TOL = 1e-12


def _eval(g, xs: np.ndarray) -> np.ndarray:
    """Evaluate a function object or plain callable on an array."""
    if hasattr(g, "eval"):
        vals = np.asarray(g.eval(xs), dtype=float)
    else:
        vals = np.asarray(g(xs), dtype=float)
    if vals.shape != xs.shape:
        vals = np.broadcast_to(vals, xs.shape).astype(float)
    return vals


def _fsum(arr: np.ndarray) -> float:
    return math.fsum(arr.tolist())


# ---------------------------------------------------------------------------
# empirical measures


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finitely many weighted atoms on the circle.

    ``locations[k]`` should be the orbit point T^k x when the measure comes
    from an orbit construction, but the container itself only requires
    positive weights summing to 1.  ``n`` records the orbit horizon (atoms
    0..n), kept for labeling; it is not used in any computation.
    """

    locations: np.ndarray
    weights: np.ndarray
    n: int

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if locs.shape != w.shape or locs.ndim != 1 or len(locs) == 0:
            raise ValueError("locations and weights must be equal-length 1-d arrays")
        if not np.all(w > 0.0):
            raise ValueError("weights must be strictly positive")
        s = _fsum(w)
        if abs(s - 1.0) > _NORM_TOL:
            raise ValueError(f"weights sum to {s!r}, not 1")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_log_weights(cls, locations, log_weights, n: int) -> "EmpiricalMeasure":
        """Normalize exp(log_weights) stably and renormalize the float sum."""
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max())
        w /= _fsum(w)
        return cls(np.asarray(locations, dtype=float), w, int(n))

    @cached_property
    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.locations, kind="stable")
        return self.locations[order], np.cumsum(self.weights[order])

    def cdf(self, t) -> np.ndarray:
        """P(atom <= t), vectorized in t."""
        locs, cum = self._sorted
        idx = np.searchsorted(locs, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([0.0], cum))[idx]

    def ks_uniform(self) -> float:
        return self.ks_against(lambda t: t)

    def ks_against(self, cdf_fn) -> float:
        """Two-sided sup distance to a target CDF, evaluated at the atoms."""
        locs, cum = self._sorted
        target = np.asarray(cdf_fn(locs), dtype=float)
        lower = np.concatenate(([0.0], cum[:-1]))
        return float(np.maximum(np.abs(cum - target), np.abs(lower - target)).max())

    def cdf_grid(self, m: int = 512) -> tuple[np.ndarray, np.ndarray]:
        ts = np.arange(m + 1) / m
        return ts, self.cdf(ts)

    def integrate(self, g) -> float:
        return _fsum(self.weights * _eval(g, self.locations))

    @property
    def ess(self) -> float:
        """Effective number of atoms, 1/sum w^2; collapses when mass spikes."""
        return float(1.0 / np.sum(self.weights**2))


def _orbit_data(f, cf: ContinuedFraction, x, n: int, orbit):
    coc = Cocycle(f, cf, x, orbit=orbit)
    sums = coc.stream(0, n)
    hi, lo = coc.orbit.positions(coc.x_dd, 0, n + 1)
    return sums, (hi + lo) % 1.0


def nu_f_empirical(f, cf: ContinuedFraction, x, n: int, orbit=None) -> EmpiricalMeasure:
    """Empirical measure with mass e^{-S_k f} at T^k x, k = 0..n, normalized.

    rho_k = e^{S_k f} is the vertical ratio cocycle, so the weights are
    1/rho_k.  For f = u - u o T this gives weight proportional to
    e^{u(T^k x)}, hence CDF convergence to the density e^u / integral e^u;
    for f = 0 it is the uniform orbit average.
    """
    if n < 0:
        raise ValueError("horizon must be >= 0")
    sums, locs = _orbit_data(f, cf, x, n, orbit)
    return EmpiricalMeasure.from_log_weights(locs, -sums, n)


# ---------------------------------------------------------------------------
# weighted orbit averages


@dataclass(frozen=True)
class ARatio:
    """Weighted orbit average sum(g/rho) / sum(1/rho) with its history.

    ``values[i]`` is the same average truncated at horizon ``ns[i]``;
    ``spread`` is max - min of the values over the last decade of horizons.
    The final ``value`` is recomputed with exact summation, so a constant
    g == c returns c to machine precision at every horizon.
    """

    value: float
    spread: float
    ns: np.ndarray
    values: np.ndarray
    n: int

    def decided(self, factor: float = 3.0) -> bool:
        """Is the average resolved away from zero at this horizon?"""
        return math.isfinite(self.value) and abs(self.value) > factor * self.spread

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "spread": self.spread,
            "n": self.n,
            "history": [[int(m), float(v)] for m, v in zip(self.ns, self.values)],
        }


def a_ratio(f, g, cf: ContinuedFraction, x, n: int, grid_ratio: float = 1.25,
            orbit=None) -> ARatio:
    if n < 1:
        raise ValueError("horizon must be >= 1")
    sums, locs = _orbit_data(f, cf, x, n, orbit)
    w = np.exp(-(sums - (-sums).max()))
    gv = _eval(g, locs)
    den = np.cumsum(w)
    num = np.cumsum(w * gv)
    ns = geometric_grid(n, grid_ratio)
    values = num[ns] / den[ns]
    value = _fsum(w * gv) / _fsum(w)
    tail = values[ns >= n / 10.0]
    spread = float(tail.max() - tail.min()) if len(tail) else math.inf
    return ARatio(value, spread, ns, values, int(n))


@dataclass(frozen=True)
class SignDecision:
    """Two-horizon sign call for the limiting average; 'inconclusive' is honest."""

    label: str  # "positive" | "negative" | "inconclusive"
    coarse: ARatio
    fine: ARatio


def integral_sign(f, g, cf: ContinuedFraction, x, n: int, factor: float = 3.0,
                  orbit=None) -> SignDecision:
    """Decide sign(integral g dnu_f) only when both horizons clear the spread.

    The average must exceed ``factor`` times its last-decade spread at n//10
    and again at n, with matching signs; anything else is inconclusive.
    """
    fine = a_ratio(f, g, cf, x, n, orbit=orbit)
    coarse = a_ratio(f, g, cf, x, max(n // 10, 16), orbit=orbit)
    if (fine.decided(factor) and coarse.decided(factor)
            and math.copysign(1.0, fine.value) == math.copysign(1.0, coarse.value)):
        label = "positive" if fine.value > 0 else "negative"
    else:
        label = "inconclusive"
    return SignDecision(label, coarse, fine)


# ---------------------------------------------------------------------------
# transfer-identity residual


def low_freq_test_set() -> tuple[TrigPoly, ...]:
    """cos and sin at modes 1..4; the default residual test functions."""
    out = []
    for k in range(1, 5):
        cos_amp = [0.0] * k
        cos_amp[-1] = 1.0
        out.append(TrigPoly(0.0, cos_amp, ()))
        out.append(TrigPoly(0.0, (), cos_amp))
    return tuple(out)


@dataclass(frozen=True)
class TransferResidual:
    """Per-test-function defect of the identity E[w] = E[e^{-f} (w o T)]."""

    n: int
    residuals: tuple[float, ...]

    @property
    def max_residual(self) -> float:
        return max(self.residuals)

    def as_dict(self) -> dict:
        return {"n": self.n, "max": self.max_residual, "residuals": list(self.residuals)}


def functional_residual(measure: EmpiricalMeasure, f, cf: ContinuedFraction,
                        tests=None) -> TransferResidual:
    """How far ``measure`` is from transfer-invariance under (f, theta).

    For the uniform orbit measure with f = 0 the identity telescopes, so the
    residual is the endpoint Birkhoff discrepancy |w(x) - w(T^{n+1}x)|/(n+1)
    and decays along the full orbit like any equidistribution error.  The
    value is a diagnostic at any n; only large n makes it a sharp one.
    """
    if tests is None:
        tests = low_freq_test_set()
    locs = measure.locations
    shifted = (locs + cf.theta) % 1.0
    damp = measure.weights * np.exp(-_eval(f, locs))
    res = tuple(
        abs(_fsum(measure.weights * _eval(w, locs)) - _fsum(damp * _eval(w, shifted)))
        for w in tests
    )
    return TransferResidual(measure.n, res)


# ---------------------------------------------------------------------------
# Fourier solvers


@dataclass(frozen=True)
class DivisorHealth:
    """Smallest |1 - e^{2 pi i k theta}| met while dividing, and where."""

    min_divisor: float
    mode: int
    floor: float
    modes_used: int

    def as_dict(self) -> dict:
        return {"min_divisor": self.min_divisor, "mode": self.mode,
                "floor": self.floor, "modes_used": self.modes_used}


def _nearest_convergent_q(cf: ContinuedFraction, k: int) -> int:
    return min(cf.q[1:], key=lambda q: abs(q - k))


def fourier_coboundary(f, cf: ContinuedFraction,
                       divisor_floor: float = 1e-9) -> tuple[TrigPoly, DivisorHealth]:
    """Solve u - u o T = f mode by mode for a trig polynomial f.

    The k-th divisor is |1 - e^{2 pi i k theta}| = 2 |sin(pi k theta)|,
    evaluated from the exact rational reduction of k theta mod 1 so that
    near-resonant modes are measured, not rounded away.  Only modes carrying
    a nonzero coefficient of f are divided (and health-checked); a divisor
    below ``divisor_floor`` raises SmallDivisorBlowup naming the mode and
    the nearby convergent denominator.  Gauge: the output has zero mean.

    Piecewise inputs have no finite mode list and are rejected; rebuild the
    observable as an explicit TrigPoly first.
    """
    if not isinstance(f, TrigPoly):
        raise WrongKind(
            "fourier_coboundary needs a TrigPoly with explicit modes; "
            f"got {type(f).__name__}")
    scale = max(1.0, float(np.abs(f.cos_amp).max(initial=0.0)),
                float(np.abs(f.sin_amp).max(initial=0.0)))
    if abs(f.a0) > 1e-13 * scale:
        raise NotCentered(f"constant mode {f.a0!r} must vanish for u - Tu = f")

    theta_mid = cf.theta_mid()
    K = len(f.cos_amp)
    ucos, usin = np.zeros(K), np.zeros(K)
    min_div, min_mode, used = math.inf, 0, 0
    for i in range(K):
        a, b = float(f.cos_amp[i]), float(f.sin_amp[i])
        if a == 0.0 and b == 0.0:
            continue
        k = i + 1
        ph = 2.0 * math.pi * float((k * theta_mid) % 1)
        c, s = math.cos(ph), math.sin(ph)
        div = math.hypot(1.0 - c, s)
        used += 1
        if div < min_div:
            min_div, min_mode = div, k
        if div < divisor_floor:
            q = _nearest_convergent_q(cf, k)
            raise SmallDivisorBlowup(
                f"divisor |1 - e(k theta)| = {div:.3e} at mode k={k} is below "
                f"the floor {divisor_floor:.1e}; k lies near the convergent "
                f"denominator q={q}")
        det = (1.0 - c) ** 2 + s * s
        ucos[i] = ((1.0 - c) * a + s * b) / det
        usin[i] = ((1.0 - c) * b - s * a) / det
    health = DivisorHealth(min_div, min_mode, divisor_floor, used)
    return TrigPoly(0.0, ucos, usin), health


class TiltedTrig:
    """Product e^{-u(x)} H(x); the shape of solutions to the tilted equation."""

    def __init__(self, u: TrigPoly, H: TrigPoly):
        self.u = u
        self.H = H

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-self.u.eval(x)) * self.H.eval(x)

    def __call__(self, x):
        return self.eval(x)


@dataclass(frozen=True)
class HSolution:
    """Solution h of h - e^{-f} (h o T) = g with its certification data."""

    h: TiltedTrig
    residual: float
    u: TrigPoly
    H: TrigPoly
    health_u: DivisorHealth
    health_H: DivisorHealth
    centering: float
    truncation: float

    def as_dict(self) -> dict:
        return {"residual": self.residual, "centering": self.centering,
                "truncation": self.truncation,
                "health_u": self.health_u.as_dict(),
                "health_H": self.health_H.as_dict()}


def solve_h(f, g, cf: ContinuedFraction, n_modes: int = 64, grid: int = 1 << 12,
            divisor_floor: float = 1e-9, center_tol: float = 1e-8) -> HSolution:
    """Solve h - e^{-f} (h o T) = g by substituting h = e^{-u} H.

    With u - Tu = f the equation collapses to H - TH = g e^u, solved by
    Fourier division.  g e^u is projected onto ``n_modes`` modes by FFT on a
    uniform grid; its mean must vanish (NotCentered otherwise), which is the
    solvability condition integral g dnu_f = 0 in disguise.  Gauge: the mean
    of H is zero.  The returned residual is the sup defect of the original
    equation on a staggered grid twice as fine.
    """
    if grid < 4 * max(n_modes, 1):
        raise ValueError("grid must oversample the kept modes at least 4x")
    u, health_u = fourier_coboundary(f, cf, divisor_floor)
    xs = np.arange(grid) / grid
    tilted = _eval(g, xs) * np.exp(u.eval(xs))
    m0 = float(tilted.mean())
    scale = float(np.abs(tilted).mean()) + 1e-300
    if abs(m0) > center_tol * max(scale, 1.0):
        raise NotCentered(
            f"mean of g e^u is {m0:.3e}; the tilted equation is only solvable "
            "when integral g dnu_f = 0")
    spec = np.fft.rfft(tilted) / grid
    K = min(n_modes, grid // 2 - 1)
    P = TrigPoly(0.0, 2.0 * spec[1:K + 1].real, -2.0 * spec[1:K + 1].imag)
    truncation = float(2.0 * np.abs(spec[K + 1:]).max(initial=0.0))
    H, health_H = fourier_coboundary(P, cf, divisor_floor)
    h = TiltedTrig(u, H)

    ys = (np.arange(2 * grid) + 0.37) / (2 * grid)
    theta = cf.theta
    defect = _eval(g, ys) - (h.eval(ys) - np.exp(-_eval(f, ys)) * h.eval((ys + theta) % 1.0))
    return HSolution(h, float(np.abs(defect).max()), u, H, health_u, health_H,
                     abs(m0), truncation)


# ---------------------------------------------------------------------------
# one-sided range-counter trajectory


# log-ratio window below which the whole trajectory counts as bounded
_TREND_BAND = math.log(100.0)


@dataclass(frozen=True)
class RatioTrajectory:
    """v_+(m)/w_+(m) = sum e^{S_k} / sum e^{-S_k} sampled at geometric m.

    ``running_log_max``/``running_log_min`` track the extremes over all
    m up to each checkpoint, the finite-horizon stand-ins for limsup and
    liminf.  Trend labels are coarse reading aids, not proofs: the genuine
    trichotomy (to +inf, to 0, or oscillating ever wider) is asymptotic.
    """

    ns: np.ndarray
    log_ratio: np.ndarray
    running_log_max: np.ndarray
    running_log_min: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return np.exp(self.log_ratio)

    def trend(self) -> str:
        hi = float(self.running_log_max[-1])
        lo = float(self.running_log_min[-1])
        if hi - lo < _TREND_BAND:
            return "bounded"
        pos = (float(self.log_ratio[-1]) - lo) / (hi - lo)
        if pos < 0.2:
            return "to-zero"
        if pos > 0.8:
            return "to-infinity"
        return "oscillating"

    def as_dict(self) -> dict:
        return {
            "trend": self.trend(),
            "points": [[int(m), float(r)] for m, r in zip(self.ns, self.log_ratio)],
            "running_log_max": [float(v) for v in self.running_log_max],
            "running_log_min": [float(v) for v in self.running_log_min],
        }


def ratio_trajectory(f, cf: ContinuedFraction, x, n: int, grid_ratio: float = 1.25,
                     orbit=None) -> RatioTrajectory:
    """Track the one-sided counter ratio along the orbit of x.

    f identically zero gives ratio identically 1.  A coboundary f = u - Tu
    keeps the log ratio inside a band of width about 2 osc(u) around
    2 u(x).  Observables that are not coboundaries push the ratio to 0, to
    infinity, or into unbounded oscillation; with tall isolated weight
    spikes (truncated tent constructions) the e^{-S_k} side explodes first
    and the sampled ratio collapses toward zero.
    """
    if n < 1:
        raise ValueError("horizon must be >= 1")
    sums = Cocycle(f, cf, x, orbit=orbit).stream(0, n)
    log_r = np.logaddexp.accumulate(sums) - np.logaddexp.accumulate(-sums)
    ns = geometric_grid(n, grid_ratio)
    return RatioTrajectory(
        ns,
        log_r[ns],
        np.maximum.accumulate(log_r)[ns],
        np.minimum.accumulate(log_r)[ns],
    )
