"""Figure rendering for report bundles.

One PNG per pipeline stage that ran, written next to the CSV tables.
Figures are diagnostic companions to the machine-readable outputs; the
PNG metadata is stripped so deterministic runs stay byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

__all__ = ["render_figures"]

_SAVE = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path: Path) -> None:
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def _series_figure(detail: dict, path: Path) -> bool:
    main = detail.get("main")
    if not main:
        return False
    fig, (ax, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax.plot(main["ns"], main["partials"], lw=1.2, label="sum 1/phi")
    tp = detail.get("trans_plus")
    if tp:
        ax.plot(tp["ns"], tp["partials"], lw=1.2, label="sum 1/phi_plus")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("partial sum")
    ax.legend(fontsize=8)
    ax.set_title(f"verdict: {detail['verdict']}", fontsize=9)

    incs = main.get("decade_increments") or []
    if incs:
        ax2.bar(range(len(incs)), [v for _, v in incs], color="#777777")
        ax2.set_xticks(range(len(incs)))
        ax2.set_xticklabels([f"1e{int(p)}" for p, _ in incs], fontsize=7)
        ax2.set_ylabel("decade mass of 1/phi")
        ax2.set_xlabel("decade end")
    fig.tight_layout()
    _save(fig, path)
    return True


def _dispersion_figure(rows: list[dict], path: Path) -> bool:
    if not rows:
        return False
    ns = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    for key in ("phi", "phi_plus", "phi_str"):
        ax.plot(ns, [r[key] for r in rows], lw=1.2, label=key)
    ax.plot(ns, ns, lw=0.8, ls="--", color="#999999", label="n")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("spread")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    return True


def _measure_figure(measure: dict, path: Path) -> bool:
    hist = measure.get("a_history")
    if not hist or not hist["ns"]:
        return False
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    ax.plot(hist["ns"], hist["values"], lw=1.2)
    a, s = measure["a_value"], measure["a_spread"]
    ax.axhline(a, color="#bb3333", lw=0.8)
    ax.axhspan(a - s, a + s, color="#bb3333", alpha=0.15)
    ax.set_xscale("log")
    ax.set_xlabel("orbit points")
    ax.set_ylabel("running A ratio")
    ax.set_title(f"sign: {measure['sign']}", fontsize=9)
    fig.tight_layout()
    _save(fig, path)
    return True


def _montecarlo_figure(mc: dict, path: Path) -> bool:
    per_seed = mc.get("per_seed")
    if not per_seed:
        return False
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    acc = None
    for row in per_seed:
        hits = row["hits_per_window"]
        w = row["window_len"]
        ts = [(i + 1) * w for i in range(len(hits))]
        cum = []
        tot = 0
        for h in hits:
            tot += h
            cum.append(tot)
        ax.plot(ts, cum, lw=0.5, alpha=0.25, color="#4477aa")
        acc = cum if acc is None else [a + c for a, c in zip(acc, cum)]
    mean = [a / len(per_seed) for a in acc]
    ax.plot(ts, mean, lw=1.8, color="#222222", label="mean")
    gt = mc.get("growth_test")
    if gt:
        ax.set_title(f"return growth: {gt['label']}", fontsize=9)
    ax.set_xlabel("steps")
    ax.set_ylabel("cumulative returns to origin")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    return True


def render_figures(out_dir, detail: dict | None, disp_rows, measure, mc) -> dict:
    """Render available figures; returns {logical name: file name}."""
    out = Path(out_dir)
    made = {}
    detail_dict = detail.as_dict() if hasattr(detail, "as_dict") else (detail or {})
    jobs = (
        ("series_png", "series.png", lambda p: _series_figure(detail_dict, p)),
        ("dispersion_png", "dispersion.png",
         lambda p: _dispersion_figure(disp_rows or [], p)),
        ("measure_png", "measure.png",
         lambda p: _measure_figure(measure, p) if measure else False),
        ("montecarlo_png", "montecarlo.png",
         lambda p: _montecarlo_figure(mc, p) if mc else False),
    )
    for name, fname, job in jobs:
        if job(out / fname):
            made[name] = fname
    return made
