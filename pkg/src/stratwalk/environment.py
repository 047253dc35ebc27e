"""Stratified environments: one transition law per horizontal line.

A law is (alpha, beta, gamma, mu): up, down, and horizontal probabilities plus
the integer jump distribution of the horizontal move.  Environments realize
laws lazily over 2^16-sized windows and certify the uniform ellipticity bound
eta (all probabilities >= eta, jump support inside (-1/eta, 1/eta), mu(0) <=
1 - eta) that every downstream estimate leans on.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dynamics import OrbitCache, as_dd
from .errors import HypothesisViolation, RealizabilityError

_WINDOW = 1 << 16


@dataclass(frozen=True)
class StratumLaw:
    """Transition law of a single stratum; mu is ((jump, prob), ...)."""

    alpha: float
    beta: float
    gamma: float
    mu: tuple[tuple[int, float], ...]
    epsilon: float = field(init=False)

    def __post_init__(self):
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        mass = math.fsum(p for _, p in self.mu)
        if abs(mass - 1.0) > 1e-12 or any(p < 0 for _, p in self.mu):
            raise ValueError("mu must be a probability mass function")
        eps = math.fsum(r * p for r, p in self.mu)
        object.__setattr__(self, "epsilon", eps)

    @property
    def drift(self) -> float:
        """epsilon * gamma / (1 - gamma): the horizontal drift rate."""
        return self.epsilon * self.gamma / (1.0 - self.gamma)

    def vertical_law(self) -> tuple[float, float]:
        s = self.alpha + self.beta
        return self.alpha / s, self.beta / s


def realize_mu(target_mean, eta: float):
    """Canonical two-point jump law with the exact requested mean.

    Puts mass (1 +/- target/L)/2 on +/-L with L = max(1, ceil(|target|));
    exact Fractions in, exact Fractions out.  The support stays inside
    (-1/eta, 1/eta) because of the precondition |target| < 1/eta - 1.
    """
    a = abs(target_mean)
    if a >= 1.0 / eta - 1.0:
        raise RealizabilityError(
            f"jump mean {float(target_mean):g} needs support beyond 1/eta = {1 / eta:g}"
        )
    L = max(1, math.ceil(a))
    p_plus = (1 + target_mean / L) / 2
    out = []
    if p_plus > 0:
        out.append((L, p_plus))
    if p_plus < 1:
        out.append((-L, 1 - p_plus))
    return tuple(out)


class Environment:
    """Base: windowed lazy realization plus the Hypothesis-1 certificate."""

    kind = "abstract"
    flat = False  # alpha_n == beta_n for every n

    _max_windows = 48  # FIFO bound; long streams touch each window once anyway

    def __init__(self, eta_floor: float = 1e-2):
        self.eta_floor = float(eta_floor)
        self._lock = threading.Lock()
        self._cache: dict[int, tuple[np.ndarray, ...]] = {}

    # subclasses: (alpha, beta, gamma, epsilon) arrays for n in [n0, n1)
    def _compute(self, n0: int, n1: int) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    def _window(self, w: int) -> tuple[np.ndarray, ...]:
        blk = self._cache.get(w)
        if blk is not None:
            return blk
        with self._lock:
            blk = self._cache.get(w)
            if blk is None:
                blk = self._compute(w * _WINDOW, (w + 1) * _WINDOW)
                while len(self._cache) >= self._max_windows:
                    self._cache.pop(next(iter(self._cache)))
                self._cache[w] = blk
            return blk

    def arrays(self, n0: int, n1: int) -> tuple[np.ndarray, ...]:
        """(alpha, beta, gamma, epsilon) arrays covering n in [n0, n1)."""
        m = n1 - n0
        out = [np.empty(m) for _ in range(4)]
        if m == 0:
            return tuple(out)
        pos = 0
        for w in range(n0 // _WINDOW, (n1 - 1) // _WINDOW + 1):
            blk = self._window(w)
            a = max(n0, w * _WINDOW) - w * _WINDOW
            b = min(n1, (w + 1) * _WINDOW) - w * _WINDOW
            for dst, src in zip(out, blk):
                dst[pos : pos + b - a] = src[a:b]
            pos += b - a
        return tuple(out)

    def drift(self, n0: int, n1: int) -> np.ndarray:
        """epsilon_n * gamma_n / (1 - gamma_n) for n in [n0, n1)."""
        _, _, g, e = self.arrays(n0, n1)
        return e * g / (1.0 - g)

    def stratum(self, n: int) -> StratumLaw:
        a, b, g, e = (float(v[0]) for v in self.arrays(n, n + 1))
        return StratumLaw(a, b, g, self._mu_at(n, e))

    def _mu_at(self, n: int, eps: float):
        return realize_mu(eps, self.eta_floor)

    def vertical_law(self, n: int) -> tuple[float, float]:
        a, b, _, _ = self.arrays(n, n + 1)
        s = a[0] + b[0]
        return float(a[0] / s), float(b[0] / s)

    def max_jump(self, n0: int, n1: int) -> int:
        _, _, _, e = self.arrays(n0, n1)
        return max(1, int(np.ceil(np.max(np.abs(e)) - 1e-12)))

    def mu_zero_mass(self, n0: int, n1: int) -> float:
        return 0.0  # the canonical two-point law never charges 0

    def validate(self, n0: int, n1: int) -> float:
        """Largest eta' (quantized down to 1e-6) certifying Hypothesis 1 on the
        window; raises HypothesisViolation below the configured floor."""
        a, b, g, e = self.arrays(n0, n1)
        probs = np.concatenate([a, b, g])
        if probs.min() <= 0:
            bad = int(np.argmin(probs)) % (n1 - n0) + n0
            raise HypothesisViolation(f"stratum {bad}: nonpositive transition probability")
        self._check_realizable(n0, e)
        cand = min(
            float(probs.min()),
            1.0 - self.mu_zero_mass(n0, n1),
            1.0 / self.max_jump(n0, n1),
        )
        eta = math.floor(cand * 1_000_000) / 1_000_000
        if eta >= 1.0 / self.max_jump(n0, n1):
            eta -= 1e-6  # support containment is strict
        if eta < self.eta_floor:
            raise HypothesisViolation(
                f"window [{n0},{n1}) certifies only eta = {eta:g} < floor {self.eta_floor:g}"
            )
        return eta

    def _check_realizable(self, n0: int, e: np.ndarray) -> None:
        over = np.flatnonzero(np.abs(e) >= 1.0 / self.eta_floor - 1.0)
        if over.size:
            n = n0 + int(over[0])
            raise HypothesisViolation(
                f"stratum {n}: jump mean {e[over[0]]:g} needs support beyond 1/eta"
            )


def _to_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, str)):
        return Fraction(v)
    return None


class PeriodicEnvironment(Environment):
    """Explicit laws repeated with period len(laws); keeps exact rational
    mirrors when the inputs were rational, for the closed-form classifier."""

    kind = "periodic"

    def __init__(self, laws: list[dict], eta_floor: float = 1e-2):
        super().__init__(eta_floor)
        if not laws:
            raise ValueError("need at least one stratum")
        self.period = len(laws)
        self._laws = []
        self._exact = []
        for law in laws:
            mu = {int(r): p for r, p in law["mu"].items()}
            if not mu:
                raise ValueError("mu must have at least one atom")
            a, b, g = law["alpha"], law["beta"], law["gamma"]
            fr = {
                "alpha": _to_fraction(a),
                "beta": _to_fraction(b),
                "gamma": _to_fraction(g),
                "mu": {r: _to_fraction(p) for r, p in mu.items()},
            }
            exact = all(v is not None for v in fr.values() if not isinstance(v, dict))
            exact = exact and all(v is not None for v in fr["mu"].values())
            self._exact.append(fr if exact else None)
            self._laws.append(
                StratumLaw(
                    float(a), float(b), float(g),
                    tuple(sorted((r, float(p)) for r, p in mu.items())),
                )
            )
        self.flat = all(law.alpha == law.beta for law in self._laws)

    def _compute(self, n0, n1):
        idx = np.arange(n0, n1) % self.period
        a = np.array([law.alpha for law in self._laws])[idx]
        b = np.array([law.beta for law in self._laws])[idx]
        g = np.array([law.gamma for law in self._laws])[idx]
        e = np.array([law.epsilon for law in self._laws])[idx]
        return a, b, g, e

    def stratum(self, n: int) -> StratumLaw:
        return self._laws[n % self.period]

    def _mu_at(self, n, eps):
        return self._laws[n % self.period].mu

    def max_jump(self, n0=None, n1=None) -> int:
        return max(abs(r) for law in self._laws for r, _ in law.mu)

    def mu_zero_mass(self, n0=None, n1=None) -> float:
        return max(dict(law.mu).get(0, 0.0) for law in self._laws)

    def _check_realizable(self, n0, e):
        pass  # explicit laws carry their own mu; nothing to realize

    def exact_drift_total(self) -> Fraction | None:
        """Sum of epsilon_n gamma_n/(1-gamma_n) over one period, exact; None
        when any input was a float."""
        if any(fr is None for fr in self._exact):
            return None
        tot = Fraction(0)
        for fr in self._exact:
            eps = sum(Fraction(r) * p for r, p in fr["mu"].items())
            tot += eps * fr["gamma"] / (1 - fr["gamma"])
        return tot


class VerticallyFlatQP(Environment):
    """alpha_n = beta_n = (1 - gamma0)/2; the drift sequence equals f along the
    rotation orbit: epsilon_n gamma0/(1 - gamma0) = f(x + n theta)."""

    kind = "vertically_flat_qp"
    flat = True

    def __init__(self, f, cf, x=0.0, gamma0=Fraction(1, 3), eta_floor: float = 1e-2,
                 orbit: OrbitCache | None = None):
        super().__init__(eta_floor)
        if not 0 < float(gamma0) < 1:
            raise ValueError("gamma0 must lie in (0, 1)")
        self.f = f
        self.cf = cf
        self.x = x
        self.gamma0 = float(gamma0)
        self.orbit = orbit if orbit is not None else OrbitCache(cf)
        self._xdd = as_dd(x)

    def _compute(self, n0, n1):
        m = n1 - n0
        hi, lo = self.orbit.positions(self._xdd, n0, n1)
        fv = self.f.eval_dd(hi, lo)
        g0 = self.gamma0
        a = np.full(m, (1.0 - g0) / 2.0)
        g = np.full(m, g0)
        eps = fv * (1.0 - g0) / g0
        return a, a.copy(), g, eps

    def drift(self, n0, n1):
        hi, lo = self.orbit.positions(self._xdd, n0, n1)
        return self.f.eval_dd(hi, lo)  # exact identity, no roundtrip through eps


class GeneralQP(Environment):
    """beta_n/alpha_n = exp(f(x + (n-1) theta)) with alpha_n + beta_n = 1 - gamma0,
    and gamma0 epsilon_n / alpha_n = g(x + n theta)."""

    kind = "general_qp"

    def __init__(self, f, g, cf, x=0.0, gamma0=Fraction(1, 3), eta_floor: float = 1e-2,
                 orbit: OrbitCache | None = None):
        super().__init__(eta_floor)
        if not 0 < float(gamma0) < 1:
            raise ValueError("gamma0 must lie in (0, 1)")
        self.f = f
        self.g = g
        self.cf = cf
        self.x = x
        self.gamma0 = float(gamma0)
        self.orbit = orbit if orbit is not None else OrbitCache(cf)
        self._xdd = as_dd(x)

    def _compute(self, n0, n1):
        m = n1 - n0
        hi, lo = self.orbit.positions(self._xdd, n0 - 1, n1)
        fv = self.f.eval_dd(hi[:m], lo[:m])  # f at n-1
        gv = self.g.eval_dd(hi[1:], lo[1:])  # g at n
        g0 = self.gamma0
        a = (1.0 - g0) / (1.0 + np.exp(fv))
        b = (1.0 - g0) - a
        g = np.full(m, g0)
        eps = gv * a / g0
        return a, b, g, eps


class ExplicitEnvironment(Environment):
    """Laws given by a vectorized rule ns -> (alpha, beta, gamma, epsilon)."""

    kind = "explicit"

    def __init__(self, rule, flat: bool | None = None, eta_floor: float = 1e-2):
        super().__init__(eta_floor)
        self.rule = rule
        if flat is None:
            a, b, _, _ = rule(np.arange(-64, 64))
            flat = bool(np.all(a == b))
        self.flat = flat

    def _compute(self, n0, n1):
        a, b, g, e = self.rule(np.arange(n0, n1))
        return (
            np.asarray(a, dtype=float),
            np.asarray(b, dtype=float),
            np.asarray(g, dtype=float),
            np.asarray(e, dtype=float),
        )


def _ramp_rule(ns: np.ndarray):
    third = np.full(len(ns), 1.0 / 3.0)
    eps = np.where(ns >= 1, 1.0, -1.0)
    return third, third.copy(), third.copy(), eps


def cp_ramp_env(eta_floor: float = 1e-2) -> ExplicitEnvironment:
    """One-defect Campanino-Petritis variant: jumps point right above the axis
    and left on it and below."""
    return ExplicitEnvironment(_ramp_rule, flat=True, eta_floor=eta_floor)


def cp_alternating_env(eta_floor: float = 1e-2) -> PeriodicEnvironment:
    """Alternating-jump lattice model: mu_n = point mass at (-1)^n, all
    transition probabilities 1/3."""
    third = Fraction(1, 3)
    return PeriodicEnvironment(
        [
            {"alpha": third, "beta": third, "gamma": third, "mu": {1: 1}},
            {"alpha": third, "beta": third, "gamma": third, "mu": {-1: 1}},
        ],
        eta_floor=eta_floor,
    )
