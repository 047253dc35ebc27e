"""Experiment configuration: TOML schema, validation, and object builders.

A config file fully determines an experiment.  Parsing produces an
ExperimentConfig whose as_dict() is canonical: feeding it back through
from_dict() reproduces the same config, and reports embed that dict so
any run can be reconstructed from its own output.

Numbers may be written as integers, floats, or "p/q" strings; rational
forms are kept exact all the way into the environment so the closed-form
classifier sees Fractions, not rounded floats.  Every validation error
names the offending field path.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .diophantine import ContinuedFraction, family_cf
from .dynamics import build_propi
from .environment import (
    GeneralQP,
    PeriodicEnvironment,
    VerticallyFlatQP,
    cp_alternating_env,
    cp_ramp_env,
)
from .errors import ConfigError
from .functions import (
    CoboundaryObservable,
    TrigPoly,
    constant,
    cosine,
    indicator_pm,
    sawtooth,
    zero,
)

__all__ = [
    "ExperimentConfig",
    "build_cf",
    "build_environment",
    "build_function",
    "bundled_config_names",
    "bundled_config_path",
    "load_config",
    "sample_base_points",
]

_CONFIG_DIR = Path(__file__).parent / "configs"

_ANGLE_FAMILIES = {
    "constant": {"k"},
    "power": {"s"},
    "doubling": set(),
    "prop1": {"a1", "delta"},
    "quotients": {"quotients"},
}

_ENV_KINDS = ("periodic", "vertically_flat", "general", "cp_ramp", "cp_alternating")

# allowed keys per function kind, beyond "kind" itself
_FN_KEYS = {
    "zero": set(),
    "constant": {"c"},
    "cosine": {"amplitude", "mode", "shift"},
    "trig": {"a0", "cos", "sin", "shift"},
    "indicator_pm": {"shift"},
    "sawtooth": {"shift"},
    "coboundary": {"u", "weight"},
    "propi": {"m"},
}


def _fail(where: str, msg: str) -> ConfigError:
    return ConfigError(f"{where}: {msg}")


def _decode_num(v, where: str):
    """int -> Fraction, 'p/q' -> Fraction, float stays float."""
    if isinstance(v, bool):
        raise _fail(where, "expected a number, got a boolean")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return v
    if isinstance(v, str):
        try:
            return Fraction(v)
        except (ValueError, ZeroDivisionError) as exc:
            raise _fail(where, f"cannot parse {v!r} as a rational") from exc
    raise _fail(where, f"expected number or 'p/q' string, got {type(v).__name__}")


def _encode_num(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else str(v)
    return v


def _require_int(v, where: str, minimum: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise _fail(where, f"expected an integer, got {type(v).__name__}")
    if minimum is not None and v < minimum:
        raise _fail(where, f"must be >= {minimum}, got {v}")
    return v


def _require_float(v, where: str):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _fail(where, f"expected a number, got {type(v).__name__}")
    return float(v)


def _require_table(v, where: str) -> dict:
    if not isinstance(v, dict):
        raise _fail(where, f"expected a table, got {type(v).__name__}")
    return v


def _reject_unknown(d: dict, allowed, where: str) -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise _fail(where, f"unknown key(s) {', '.join(extra)}")


# -- section validators ---------------------------------------------------


def _validate_angle(d, where="angle") -> dict:
    d = _require_table(d, where)
    fam = d.get("family")
    if fam not in _ANGLE_FAMILIES:
        raise _fail(f"{where}.family",
                    f"expected one of {sorted(_ANGLE_FAMILIES)}, got {fam!r}")
    _reject_unknown(d, {"family", "depth"} | _ANGLE_FAMILIES[fam], where)
    out = {"family": fam}
    if "depth" in d:
        out["depth"] = _require_int(d["depth"], f"{where}.depth", 1)
    if fam == "constant" and "k" in d:
        out["k"] = _require_int(d["k"], f"{where}.k", 1)
    if fam == "power" and "s" in d:
        out["s"] = _require_int(d["s"], f"{where}.s", 1)
    if fam == "prop1":
        if "a1" in d:
            out["a1"] = _require_int(d["a1"], f"{where}.a1", 1)
        if "delta" in d:
            out["delta"] = _require_float(d["delta"], f"{where}.delta")
    if fam == "quotients":
        q = d.get("quotients")
        if (not isinstance(q, list) or not q
                or any(isinstance(a, bool) or not isinstance(a, int) or a < 1
                       for a in q)):
            raise _fail(f"{where}.quotients", "expected a nonempty list of positive integers")
        out["quotients"] = list(q)
    return out


def _validate_function(d, where: str) -> dict:
    d = _require_table(d, where)
    kind = d.get("kind")
    if kind not in _FN_KEYS:
        raise _fail(f"{where}.kind", f"expected one of {sorted(_FN_KEYS)}, got {kind!r}")
    _reject_unknown(d, {"kind"} | _FN_KEYS[kind], where)
    out = {"kind": kind}
    if kind == "constant":
        if "c" not in d:
            raise _fail(f"{where}.c", "required for kind 'constant'")
        out["c"] = _decode_num(d["c"], f"{where}.c")
    elif kind == "cosine":
        out["amplitude"] = _require_float(d.get("amplitude", 1.0), f"{where}.amplitude")
        out["mode"] = _require_int(d.get("mode", 1), f"{where}.mode", 1)
    elif kind == "trig":
        out["a0"] = _require_float(d.get("a0", 0.0), f"{where}.a0")
        for key in ("cos", "sin"):
            amps = d.get(key, [])
            if not isinstance(amps, list):
                raise _fail(f"{where}.{key}", "expected a list of amplitudes")
            out[key] = [_require_float(a, f"{where}.{key}[{i}]")
                        for i, a in enumerate(amps)]
    elif kind == "coboundary":
        if "u" not in d:
            raise _fail(f"{where}.u", "required for kind 'coboundary'")
        out["u"] = _validate_function(d["u"], f"{where}.u")
        out["weight"] = (_validate_function(d["weight"], f"{where}.weight")
                         if "weight" in d else {"kind": "zero"})
    elif kind == "propi":
        out["m"] = _require_int(d.get("m", 3), f"{where}.m", 1)
    if "shift" in d:
        out["shift"] = _decode_num(d["shift"], f"{where}.shift")
    return out


def _validate_stratum(d, where: str) -> dict:
    d = _require_table(d, where)
    _reject_unknown(d, {"alpha", "beta", "gamma", "mu"}, where)
    out = {}
    for key in ("alpha", "beta", "gamma"):
        if key not in d:
            raise _fail(f"{where}.{key}", "required")
        out[key] = _decode_num(d[key], f"{where}.{key}")
    mu = _require_table(d.get("mu"), f"{where}.mu") if "mu" in d else None
    if not mu:
        raise _fail(f"{where}.mu", "required, with at least one jump atom")
    atoms = {}
    for k, p in mu.items():
        try:
            r = int(k)
        except ValueError as exc:
            raise _fail(f"{where}.mu", f"jump key {k!r} is not an integer") from exc
        atoms[r] = _decode_num(p, f"{where}.mu[{k}]")
    out["mu"] = atoms
    return out


def _validate_environment(d) -> dict:
    where = "environment"
    d = _require_table(d, where)
    kind = d.get("kind")
    if kind not in _ENV_KINDS:
        raise _fail(f"{where}.kind", f"expected one of {sorted(_ENV_KINDS)}, got {kind!r}")
    out = {"kind": kind}
    if kind == "periodic":
        _reject_unknown(d, {"kind", "strata"}, where)
        strata = d.get("strata")
        if not isinstance(strata, list) or not strata:
            raise _fail(f"{where}.strata", "expected a nonempty list of stratum tables")
        out["strata"] = [_validate_stratum(s, f"{where}.strata[{i}]")
                         for i, s in enumerate(strata)]
    elif kind in ("vertically_flat", "general"):
        _reject_unknown(d, {"kind", "gamma0"}, where)
        g0 = _decode_num(d.get("gamma0", Fraction(1, 3)), f"{where}.gamma0")
        if not 0 < float(g0) < 1:
            raise _fail(f"{where}.gamma0", f"must lie in (0, 1), got {g0}")
        out["gamma0"] = g0
    else:
        _reject_unknown(d, {"kind"}, where)
    return out


def _validate_base_point(d) -> dict:
    where = "base_point"
    d = _require_table(d, where)
    _reject_unknown(d, {"x", "count", "seed"}, where)
    if "x" in d and "count" in d:
        raise _fail(where, "give either a single x or a sampling rule, not both")
    if "x" in d:
        x = _require_float(d["x"], f"{where}.x")
        if not 0.0 <= x < 1.0:
            raise _fail(f"{where}.x", f"must lie in [0, 1), got {x}")
        return {"x": x}
    if "count" in d:
        count = _require_int(d["count"], f"{where}.count", 1)
        seed = _require_int(d.get("seed", 0), f"{where}.seed", 0)
        return {"count": count, "seed": seed}
    raise _fail(where, "needs either x or count/seed")


def _validate_budgets(d) -> dict:
    where = "budgets"
    d = _require_table(d, where) if d is not None else {}
    _reject_unknown(d, {"dispersion_horizon", "series_terms", "mc_horizon",
                        "mc_seeds"}, where)
    return {
        "dispersion_horizon": _require_int(
            d.get("dispersion_horizon", 0), f"{where}.dispersion_horizon", 0),
        "series_terms": _require_int(
            d.get("series_terms", 20_000), f"{where}.series_terms", 1),
        "mc_horizon": _require_int(d.get("mc_horizon", 0), f"{where}.mc_horizon", 0),
        "mc_seeds": _require_int(d.get("mc_seeds", 0), f"{where}.mc_seeds", 0),
    }


def _validate_thresholds(d) -> dict:
    where = "thresholds"
    d = _require_table(d, where) if d is not None else {}
    _reject_unknown(d, {"lo", "hi"}, where)
    lo = _require_float(d.get("lo", 0.9), f"{where}.lo")
    hi = _require_float(d.get("hi", 1.1), f"{where}.hi")
    if not 0.0 < lo <= hi:
        raise _fail(where, f"need 0 < lo <= hi, got ({lo}, {hi})")
    return {"lo": lo, "hi": hi}


def _validate_measure(d) -> dict:
    where = "measure"
    d = _require_table(d, where)
    _reject_unknown(d, {"orbit_points", "modes"}, where)
    return {
        "orbit_points": _require_int(
            d.get("orbit_points", 100_000), f"{where}.orbit_points", 16),
        "modes": _require_int(d.get("modes", 64), f"{where}.modes", 1),
    }


def _validate_output(d) -> dict:
    where = "output"
    d = _require_table(d, where) if d is not None else {}
    _reject_unknown(d, {"formats", "dir"}, where)
    formats = d.get("formats", ["json", "csv"])
    if (not isinstance(formats, list) or not formats
            or any(f not in ("json", "csv") for f in formats)):
        raise _fail(f"{where}.formats", "expected a nonempty list drawn from json, csv")
    out = {"formats": sorted(set(formats))}
    if "dir" in d:
        if not isinstance(d["dir"], str) or not d["dir"]:
            raise _fail(f"{where}.dir", "expected a nonempty path string")
        out["dir"] = d["dir"]
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Canonical, validated experiment description.

    The dict-valued fields hold the canonical decoded form (Fractions for
    exact rationals); as_dict() re-encodes them for JSON/TOML embedding.
    """

    name: str
    environment: dict
    angle: dict | None = None
    f: dict | None = None
    g: dict | None = None
    base_point: dict = field(default_factory=lambda: {"x": 0.0})
    budgets: dict = field(default_factory=lambda: _validate_budgets(None))
    thresholds: dict = field(default_factory=lambda: _validate_thresholds(None))
    grid_ratio: float = 1.05
    measure: dict | None = None
    output: dict = field(default_factory=lambda: _validate_output(None))

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = _require_table(raw, "config")
        _reject_unknown(raw, {"name", "angle", "functions", "environment",
                              "base_point", "budgets", "thresholds", "grid_ratio",
                              "measure", "output"}, "config")
        name = raw.get("name")
        if not isinstance(name, str) or not name:
            raise _fail("name", "required nonempty string")
        env = _validate_environment(raw.get("environment"))

        angle = _validate_angle(raw["angle"]) if "angle" in raw else None
        fns = _require_table(raw.get("functions", {}), "functions")
        _reject_unknown(fns, {"f", "g"}, "functions")
        f = _validate_function(fns["f"], "functions.f") if "f" in fns else None
        g = _validate_function(fns["g"], "functions.g") if "g" in fns else None

        kind = env["kind"]
        if kind in ("vertically_flat", "general") and angle is None:
            raise _fail("angle", f"required for environment kind {kind!r}")
        if kind in ("vertically_flat", "general") and f is None:
            raise _fail("functions.f", f"required for environment kind {kind!r}")
        if kind == "general" and g is None:
            raise _fail("functions.g", "required for environment kind 'general'")
        if kind not in ("general",) and g is not None:
            raise _fail("functions.g", f"not used by environment kind {kind!r}")

        if "base_point" in raw:
            base = _validate_base_point(raw["base_point"])
        elif kind in ("vertically_flat", "general"):
            raise _fail("base_point", f"required for environment kind {kind!r}")
        else:
            base = {"x": 0.0}

        grid_ratio = _require_float(raw.get("grid_ratio", 1.05), "grid_ratio")
        if not 1.0 < grid_ratio <= 4.0:
            raise _fail("grid_ratio", f"must lie in (1, 4], got {grid_ratio}")

        if "measure" in raw and kind not in ("vertically_flat", "general"):
            raise _fail("measure", f"needs an orbit-driven environment, not {kind!r}")

        return cls(
            name=name,
            environment=env,
            angle=angle,
            f=f,
            g=g,
            base_point=base,
            budgets=_validate_budgets(raw.get("budgets")),
            thresholds=_validate_thresholds(raw.get("thresholds")),
            grid_ratio=grid_ratio,
            measure=_validate_measure(raw["measure"]) if "measure" in raw else None,
            output=_validate_output(raw.get("output")),
        )

    def as_dict(self) -> dict:
        out: dict = {"name": self.name}
        if self.angle is not None:
            out["angle"] = dict(self.angle)
        fns = {}
        if self.f is not None:
            fns["f"] = _encode_function(self.f)
        if self.g is not None:
            fns["g"] = _encode_function(self.g)
        if fns:
            out["functions"] = fns
        out["environment"] = _encode_environment(self.environment)
        out["base_point"] = dict(self.base_point)
        out["budgets"] = dict(self.budgets)
        out["thresholds"] = dict(self.thresholds)
        out["grid_ratio"] = self.grid_ratio
        if self.measure is not None:
            out["measure"] = dict(self.measure)
        out["output"] = {k: list(v) if isinstance(v, list) else v
                         for k, v in self.output.items()}
        return out

    # -- derived switches -------------------------------------------------

    @property
    def wants_montecarlo(self) -> bool:
        return self.budgets["mc_seeds"] > 0 and self.budgets["mc_horizon"] > 0

    @property
    def wants_measure(self) -> bool:
        return self.measure is not None

    def base_points(self) -> list[float]:
        if "x" in self.base_point:
            return [self.base_point["x"]]
        return sample_base_points(self.base_point["count"], self.base_point["seed"])


def _encode_function(spec: dict) -> dict:
    out = {}
    for k, v in spec.items():
        if isinstance(v, dict):
            out[k] = _encode_function(v)
        elif isinstance(v, list):
            out[k] = list(v)
        else:
            out[k] = _encode_num(v)
    return out


def _encode_environment(spec: dict) -> dict:
    out = {"kind": spec["kind"]}
    if "gamma0" in spec:
        out["gamma0"] = _encode_num(spec["gamma0"])
    if "strata" in spec:
        out["strata"] = [
            {
                "alpha": _encode_num(s["alpha"]),
                "beta": _encode_num(s["beta"]),
                "gamma": _encode_num(s["gamma"]),
                "mu": {str(r): _encode_num(p) for r, p in s["mu"].items()},
            }
            for s in spec["strata"]
        ]
    return out


# -- builders -------------------------------------------------------------


def sample_base_points(count: int, seed: int) -> list[float]:
    """Stratified sample for a.e.-x experiments: one uniform draw jittered
    inside each of `count` equal grid cells.  Deterministic in seed."""
    rng = np.random.default_rng(seed)
    return [(i + rng.random()) / count for i in range(count)]


def build_cf(angle: dict) -> ContinuedFraction:
    fam = angle["family"]
    if fam == "quotients":
        return ContinuedFraction.from_quotients(angle["quotients"])
    params = {k: v for k, v in angle.items() if k not in ("family", "depth")}
    return family_cf(fam, depth=angle.get("depth"), **params)


def build_function(spec: dict, cf: ContinuedFraction | None = None):
    kind = spec["kind"]
    if kind == "zero":
        fn = zero()
    elif kind == "constant":
        fn = constant(spec["c"])
    elif kind == "cosine":
        fn = cosine(spec.get("amplitude", 1.0), spec.get("mode", 1))
    elif kind == "trig":
        fn = TrigPoly(spec.get("a0", 0.0), tuple(spec.get("cos", ())),
                      tuple(spec.get("sin", ())))
    elif kind == "indicator_pm":
        fn = indicator_pm()
    elif kind == "sawtooth":
        fn = sawtooth()
    elif kind == "coboundary":
        if cf is None:
            raise ConfigError("functions: kind 'coboundary' needs an angle block")
        u = build_function(spec["u"], cf)
        weight = build_function(spec.get("weight", {"kind": "zero"}), cf)
        fn = CoboundaryObservable(u, weight, cf)
    elif kind == "propi":
        if cf is None:
            raise ConfigError("functions: kind 'propi' needs an angle block")
        fn, _, _ = build_propi(cf, spec.get("m", 3))
    else:  # pragma: no cover - kinds are validated upstream
        raise ConfigError(f"functions: unknown kind {kind!r}")
    if "shift" in spec:
        fn = fn.shift(spec["shift"])
    return fn


def build_environment(config: ExperimentConfig, x: float | None = None,
                      cf: ContinuedFraction | None = None, orbit=None,
                      f=None, g=None):
    """Instantiate the environment at base point x (orbit-driven kinds only).

    Passing cf/orbit/f/g lets callers share the rotation cache and the
    built observables across the base-point sweep; everything is built on
    demand otherwise.
    """
    spec = config.environment
    kind = spec["kind"]
    if kind == "periodic":
        return PeriodicEnvironment(spec["strata"])
    if kind == "cp_ramp":
        return cp_ramp_env()
    if kind == "cp_alternating":
        return cp_alternating_env()
    if cf is None:
        cf = build_cf(config.angle)
    if x is None:
        x = config.base_points()[0]
    if f is None:
        f = build_function(config.f, cf)
    if kind == "vertically_flat":
        return VerticallyFlatQP(f, cf, x=x, gamma0=spec["gamma0"], orbit=orbit)
    if g is None:
        g = build_function(config.g, cf)
    return GeneralQP(f, g, cf, x=x, gamma0=spec["gamma0"], orbit=orbit)


# -- file handling --------------------------------------------------------


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file; bare names resolve to bundled configs."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and "/" not in str(path):
        p = bundled_config_path(str(path))
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: invalid TOML: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def bundled_config_names() -> list[str]:
    return sorted(p.stem for p in _CONFIG_DIR.glob("*.toml"))


def bundled_config_path(name: str) -> Path:
    p = _CONFIG_DIR / f"{name}.toml"
    if not p.exists():
        raise ConfigError(
            f"no bundled config named {name!r}; available: "
            f"{', '.join(bundled_config_names())}")
    return p
