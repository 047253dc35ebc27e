"""Experiment pipeline: classify, corroborate, and emit a report bundle.

run_experiment drives validate -> dispersion -> criterion -> measure ->
montecarlo off an ExperimentConfig and writes everything under one output
directory: report.json (with the resolved config embedded), CSV tables,
and rendered figures.  With deterministic=True the bundle carries no
timestamps and repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, build_cf, build_environment, build_function
from .criterion import classify, geometric_grid
from .dispersion import DispersionTable
from .dynamics import OrbitCache
from .errors import StratwalkError
from .functions import TrigPoly, zero
from .measure import (
    functional_residual,
    integral_sign,
    nu_f_empirical,
    ratio_trajectory,
    solve_h,
)
from .montecarlo import aggregate, return_growth_test, run_many

__all__ = ["ReportBundle", "classify_config", "dispersion_rows", "run_experiment"]

_ORBIT_KINDS = ("vertically_flat", "general")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return int(obj) if obj.denominator == 1 else str(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclasses.dataclass
class ReportBundle:
    """In-memory mirror of everything run_experiment wrote."""

    config: dict
    criterion: dict
    dispersion_grid: list[dict]
    measure: dict | None
    montecarlo: dict | None
    created_at: str | None
    out_dir: Path
    paths: dict[str, str]

    def as_dict(self) -> dict:
        out = {
            "artifact": {"name": "stratwalk", "version": __version__},
            "config": self.config,
            "criterion": self.criterion,
            "measure": self.measure,
            "montecarlo": self.montecarlo,
            "outputs": dict(sorted(self.paths.items())),
        }
        if self.created_at is not None:
            out["created_at"] = self.created_at
        return _jsonable(out)


def _shared_rotation(config: ExperimentConfig):
    """(cf, orbit, f, g) shared across the base-point sweep; Nones for
    environments that need no rotation."""
    if config.environment["kind"] not in _ORBIT_KINDS:
        return None, None, None, None
    cf = build_cf(config.angle)
    f = build_function(config.f, cf)
    g = build_function(config.g, cf) if config.g is not None else None
    return cf, OrbitCache(cf), f, g


def _classify_one(config: ExperimentConfig, x, shared, threads: int,
                  keep_table: bool = True):
    """One base point.  keep_table=False drops the DispersionTable as soon
    as the verdict is in: with its prefix banks a full-horizon table runs
    to hundreds of MB, and a 16-point sweep cannot retain them all."""
    cf, orbit, f, g = shared
    env = build_environment(config, x=x, cf=cf, orbit=orbit, f=f, g=g)
    budget = config.budgets["series_terms"]
    horizon = max(config.budgets["dispersion_horizon"], 2 * budget + 64)
    table = DispersionTable(env, horizon=horizon)
    thresholds = (config.thresholds["lo"], config.thresholds["hi"])
    report = classify(env, budget=budget, grid_ratio=config.grid_ratio,
                      thresholds=thresholds, table=table, threads=threads)
    return env, table if keep_table else None, report


def classify_config(config: ExperimentConfig, threads: int = 1):
    """Classify at every configured base point.

    Returns (rows, detail, env, table) where rows hold one verdict dict per
    base point, detail is the full CriterionReport of the first point, and
    env/table belong to that first point for reuse by later stages.  Only
    the first point's table survives the sweep: a full-horizon table with
    its prefix banks runs to hundreds of MB and sixteen of them do not fit.
    """
    points = config.base_points()
    shared = _shared_rotation(config)
    rows = []
    first = None

    def consume(x, result):
        nonlocal first
        if first is None:
            first = result
        env, table, rep = result
        rows.append({
            "x": x,
            "verdict": rep.verdict,
            "rule": rep.diagnostics.get("rule", ""),
            "tail_slope": None if rep.fit is None else rep.fit.slope,
            "table_horizon": rep.table_horizon,
        })

    if len(points) == 1 or threads <= 1:
        for i, x in enumerate(points):
            consume(x, _classify_one(config, x, shared, threads,
                                     keep_table=(i == 0)))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(
                lambda ix: _classify_one(config, ix[1], shared, 1,
                                         keep_table=(ix[0] == 0)),
                enumerate(points))
            for x, result in zip(points, results):
                consume(x, result)
    env0, table0, detail = first
    return rows, detail, env0, table0


def _verdict_summary(rows: list[dict]) -> dict:
    counts: dict[str, int] = {}
    for r in rows:
        counts[r["verdict"]] = counts.get(r["verdict"], 0) + 1
    majority = max(sorted(counts), key=lambda k: counts[k])
    return {"counts": counts, "majority": majority, "n_points": len(rows)}


def dispersion_rows(table: DispersionTable, n_max: int, ratio: float = 1.25):
    """Profile of the spread functions on a geometric grid.

    Columns: n, phi_str, phi, phi_plus, psi, psi_plus, inv_phi_at_n,
    inv_phi_plus_at_n.  Flat environments use the drift-cocycle pair sums
    and the flat inverses; general environments the ratio-weighted ones.
    """
    flat = table.env.flat
    rows = []
    for n in geometric_grid(n_max, ratio).tolist():
        if flat:
            phi, phi_plus = table.flat_phi(n)
            psi = table.psi(-n, n)
            psi_plus = table.psi(-n, 0) + table.psi(0, n)
            inv = table.inverse("flat_phi", float(n))
            inv_plus = table.inverse("flat_phi_plus", float(n))
        else:
            phi, phi_plus = table.phi(n), table.phi_plus(n)
            full, plus, _, _ = table.psi_variants(n)
            psi, psi_plus = full * full, plus * plus
            inv = table.inverse("phi", float(n))
            inv_plus = table.inverse("phi_plus", float(n))
        rows.append({
            "n": n,
            "phi_str": table.phi_str(n),
            "phi": phi,
            "phi_plus": phi_plus,
            "psi": psi,
            "psi_plus": psi_plus,
            "inv_phi_at_n": inv,
            "inv_phi_plus_at_n": inv_plus,
        })
    return rows


def _measure_stage(config: ExperimentConfig, cf) -> dict:
    kind = config.environment["kind"]
    x0 = config.base_points()[0]
    n = config.measure["orbit_points"]
    if kind == "general":
        f = build_function(config.f, cf)
        g = build_function(config.g, cf)
    else:
        # flat walks: the ratio cocycle is trivial, nu_f is the plain orbit
        # measure and the criterion integral averages the drift itself
        f, g = zero(), build_function(config.f, cf)
    sign = integral_sign(f, g, cf, x0, n)
    meas = nu_f_empirical(f, cf, x0, n)
    resid = functional_residual(meas, f, cf)
    out = {
        "kind": kind,
        "x": x0,
        "orbit_points": n,
        "a_value": sign.fine.value,
        "a_spread": sign.fine.spread,
        "decided": sign.fine.decided(),
        "sign": sign.label,
        "transfer_residual_max": resid.max_residual,
        "ess": meas.ess,
        "a_history": {"ns": list(sign.fine.ns), "values": list(sign.fine.values)},
    }
    if kind == "general":
        traj = ratio_trajectory(f, cf, x0, n)
        out["ratio_trend"] = traj.trend()
        out["ratio_log_span"] = float(traj.running_log_max[-1] - traj.running_log_min[-1])
        if isinstance(f, TrigPoly) and sign.label == "inconclusive":
            try:
                sol = solve_h(f, g, cf, n_modes=config.measure["modes"])
                out["h_residual"] = sol.residual
            except StratwalkError as exc:
                out["h_residual"] = None
                out["h_error"] = f"{type(exc).__name__}: {exc}"
    return out


def _montecarlo_stage(config: ExperimentConfig, env, threads: int) -> dict:
    horizon = config.budgets["mc_horizon"]
    seeds = config.budgets["mc_seeds"]
    stats = run_many(env, horizon, seeds, seed=0, threads=threads)
    agg = aggregate(stats)
    out = {"aggregate": agg, "per_seed": [s.as_dict() for s in stats]}
    w = stats[0].window_len
    if horizon >= 10 and 4 * w <= horizon:
        growth = return_growth_test(stats, w, 4 * w)
        out["growth_test"] = growth.as_dict()
    return out


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])


def run_experiment(config: ExperimentConfig, out_dir,
                   deterministic: bool = False, threads: int = 1) -> ReportBundle:
    """Execute the configured pipeline and write the report bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, str] = {}

    rows, detail, env0, table0 = classify_config(config, threads)
    criterion = {
        "per_x": rows,
        "summary": _verdict_summary(rows),
        "detail": detail.as_dict(),
    }

    n_max = min(config.budgets["series_terms"], max(table0.horizon // 2, 1))
    disp_rows = dispersion_rows(table0, n_max)

    measure = None
    if config.wants_measure:
        cf = getattr(env0, "cf", None)
        measure = _measure_stage(config, cf)

    montecarlo = None
    if config.wants_montecarlo:
        montecarlo = _montecarlo_stage(config, env0, threads)

    created = None if deterministic else datetime.now(timezone.utc).isoformat()

    _write_csv(out / "criterion.csv", rows,
               ["x", "verdict", "rule", "tail_slope", "table_horizon"])
    paths["criterion_csv"] = "criterion.csv"
    _write_csv(out / "dispersion.csv", disp_rows,
               ["n", "phi_str", "phi", "phi_plus", "psi", "psi_plus",
                "inv_phi_at_n", "inv_phi_plus_at_n"])
    paths["dispersion_csv"] = "dispersion.csv"
    if montecarlo is not None:
        _write_csv(out / "simulate.csv", montecarlo["per_seed"],
                   ["seed", "stream", "returns", "last_return",
                    "max_abs_m", "max_abs_n"])
        paths["simulate_csv"] = "simulate.csv"

    from . import plotting  # deferred: pulls in matplotlib

    for name, fname in plotting.render_figures(
            out, detail, disp_rows, measure, montecarlo).items():
        paths[name] = fname

    paths["report"] = "report.json"
    bundle = ReportBundle(
        config=config.as_dict(),
        criterion=criterion,
        dispersion_grid=disp_rows,
        measure=measure,
        montecarlo=montecarlo,
        created_at=created,
        out_dir=out,
        paths=paths,
    )
    with open(out / "report.json", "w") as fh:
        json.dump(bundle.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bundle
