"""Command-line front end.

Subcommands cover the pipeline stages individually (inspect-theta,
dump-env, dump-dispersion, classify, measure, simulate) plus `run`, which
executes the full configured pipeline and writes a report bundle.  All
math comes from config files; the command line only carries budgets and
output plumbing.  Tabular output is CSV, to stdout unless --out is given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, build_cf, build_environment, load_config
from .dispersion import DispersionTable
from .errors import ConfigError, StratwalkError
from .report import classify_config, dispersion_rows, run_experiment
from . import montecarlo
from . import report as report_mod


def _add_common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--config", required=True, metavar="PATH",
                   help="TOML experiment file, or the bare name of a bundled config")
    if out:
        p.add_argument("--out", metavar="DIR", default=None,
                       help="write outputs under DIR instead of stdout")
    p.add_argument("--threads", type=int, default=1, metavar="N")


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="stratwalk",
        description="recurrence/transience diagnostics for stratified random walks",
    )
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect-theta", help="angle diagnostics from the config")
    _add_common(p)
    p.add_argument("--depth", type=int, default=12,
                   help="how many convergents to print")

    p = sub.add_parser("dump-env", help="stratum laws over a range of n")
    _add_common(p)
    p.add_argument("--n-lo", type=int, default=-16)
    p.add_argument("--n-hi", type=int, default=16)

    p = sub.add_parser("dump-dispersion", help="spread-function profile on a grid")
    _add_common(p)
    p.add_argument("--n-max", type=int, default=None,
                   help="largest n; defaults to the config series budget")
    p.add_argument("--grid-ratio", type=float, default=1.25)

    p = sub.add_parser("classify", help="criterion verdict at every base point")
    _add_common(p)
    p.add_argument("--budget-terms", type=int, default=None)
    p.add_argument("--grid-ratio", type=float, default=None)
    p.add_argument("--thresholds", default=None, metavar="LO,HI")

    p = sub.add_parser("measure", help="quasi-invariant measure diagnostics")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=None,
                   help="orbit points; defaults to the config measure block")
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--test-set", choices=["low-freq"], default="low-freq")

    p = sub.add_parser("simulate", help="Monte Carlo trajectories")
    _add_common(p)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--emit", choices=["stats", "trajectories"], default="stats")
    p.add_argument("--vertical", action="store_true",
                   help="simulate the embedded vertical chain instead")

    p = sub.add_parser("run", help="full pipeline: report bundle into --out")
    _add_common(p)
    p.add_argument("--deterministic", action="store_true",
                   help="omit timestamps so repeated runs are byte-identical")

    return top


def _emit_rows(rows: list[dict], columns: list[str], out: str | None,
               fname: str, trailer: list[str] | None = None) -> None:
    if out is None:
        w = csv.writer(sys.stdout)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
        for line in trailer or []:
            print(line)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
        for line in trailer or []:
            fh.write(line + "\n")
    print(path / fname)


def _cmd_inspect_theta(args) -> int:
    config = load_config(args.config)
    if config.angle is None:
        raise ConfigError("config has no angle block; nothing to inspect")
    cf = build_cf(config.angle)
    rows = []
    for i in range(min(args.depth, cf.depth) + 1):
        rows.append({
            "i": i,
            "a": cf.a[i] if i < len(cf.a) else "",
            "p": cf.p[i],
            "q": cf.q[i],
            "theta_minus_pq": float(cf.theta_mid() - cf.p[i] / cf.q[i]) if cf.q[i] else "",
        })
    ls = cf.log_series()
    trailer = [
        f"# family={config.angle['family']} depth={cf.depth}",
        f"# theta~{float(cf.theta_mid()):.15f}",
        f"# log_series_basis={ls.basis} diverging={ls.diverging}",
    ]
    _emit_rows(rows, ["i", "a", "p", "q", "theta_minus_pq"], args.out,
               "theta.csv", trailer)
    return 0


def _cmd_dump_env(args) -> int:
    config = load_config(args.config)
    if args.n_lo >= args.n_hi:
        raise ConfigError("--n-lo must be below --n-hi")
    env = build_environment(config)
    a, b, g, e = env.arrays(args.n_lo, args.n_hi)
    rows = [{"n": n, "alpha": a[i], "beta": b[i], "gamma": g[i], "epsilon": e[i]}
            for i, n in enumerate(range(args.n_lo, args.n_hi))]
    _emit_rows(rows, ["n", "alpha", "beta", "gamma", "epsilon"], args.out, "env.csv")
    return 0


def _cmd_dump_dispersion(args) -> int:
    config = load_config(args.config)
    env = build_environment(config)
    n_max = args.n_max or config.budgets["series_terms"]
    horizon = max(config.budgets["dispersion_horizon"], 2 * n_max + 64)
    table = DispersionTable(env, horizon=horizon)
    rows = dispersion_rows(table, n_max, args.grid_ratio)
    _emit_rows(rows, ["n", "phi_str", "phi", "phi_plus", "psi", "psi_plus",
                      "inv_phi_at_n", "inv_phi_plus_at_n"], args.out,
               "dispersion.csv")
    return 0


def _cmd_classify(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.budget_terms is not None:
        overrides["budgets"] = {**config.budgets, "series_terms": args.budget_terms}
    if args.grid_ratio is not None:
        overrides["grid_ratio"] = args.grid_ratio
    if args.thresholds is not None:
        try:
            lo, hi = (float(v) for v in args.thresholds.split(","))
        except ValueError:
            raise ConfigError("--thresholds expects LO,HI") from None
        overrides["thresholds"] = {"lo": lo, "hi": hi}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    rows, _, _, _ = classify_config(config, threads=args.threads)
    summary = report_mod._verdict_summary(rows)
    trailer = [f"# majority={summary['majority']} counts={summary['counts']}"]
    _emit_rows(rows, ["x", "verdict", "rule", "tail_slope", "table_horizon"],
               args.out, "criterion.csv", trailer)
    return 0


def _cmd_measure(args) -> int:
    config = load_config(args.config)
    if config.environment["kind"] not in ("vertically_flat", "general"):
        raise ConfigError("measure needs an orbit-driven environment")
    meas = dict(config.measure or {"orbit_points": 100_000, "modes": 64})
    if args.horizon is not None:
        meas["orbit_points"] = args.horizon
    if args.modes is not None:
        meas["modes"] = args.modes
    config = dataclasses.replace(config, measure=meas)
    cf = build_cf(config.angle)
    out = report_mod._measure_stage(config, cf)
    hist = out.pop("a_history")
    rows = [{"n": n, "a_running": v}
            for n, v in zip(hist["ns"], hist["values"])]
    trailer = [f"# {k}={v}" for k, v in out.items()]
    _emit_rows(rows, ["n", "a_running"], args.out, "measure.csv", trailer)
    return 0


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    horizon = args.horizon or config.budgets["mc_horizon"]
    seeds = args.seeds or config.budgets["mc_seeds"]
    if horizon <= 0 or seeds <= 0:
        raise ConfigError(
            "simulate needs --horizon and --seeds (or mc budgets in the config)")
    env = build_environment(config)
    stats = montecarlo.run_many(env, horizon, seeds, seed=0,
                                threads=args.threads, vertical=args.vertical)
    if args.emit == "stats":
        rows = [s.as_dict() for s in stats]
        agg = montecarlo.aggregate(stats)
        trailer = [f"# {k}={v}" for k, v in agg.items()]
        _emit_rows(rows, ["seed", "stream", "returns", "last_return",
                          "max_abs_m", "max_abs_n"], args.out,
                   "simulate.csv", trailer)
    else:
        rows = []
        for s in stats:
            cum = 0
            for i, h in enumerate(s.origin_hits_per_window):
                cum += h
                rows.append({"stream": s.stream,
                             "window_end": min((i + 1) * s.window_len, s.horizon),
                             "hits": h, "cum_returns": cum})
        _emit_rows(rows, ["stream", "window_end", "hits", "cum_returns"],
                   args.out, "trajectories.csv")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    out = args.out or config.output.get("dir") or f"runs/{config.name}"
    bundle = run_experiment(config, out, deterministic=args.deterministic,
                            threads=args.threads)
    summary = bundle.criterion["summary"]
    print(json.dumps({
        "out_dir": str(bundle.out_dir),
        "majority": summary["majority"],
        "counts": summary["counts"],
        "outputs": bundle.paths,
    }, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "inspect-theta": _cmd_inspect_theta,
    "dump-env": _cmd_dump_env,
    "dump-dispersion": _cmd_dump_dispersion,
    "classify": _cmd_classify,
    "measure": _cmd_measure,
    "simulate": _cmd_simulate,
    "run": _cmd_run,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StratwalkError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
