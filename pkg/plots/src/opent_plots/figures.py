"""Figure builders: desk-scale analogues of the reference figures.

Every plotted number is read from a CSV cell of a completed run directory;
fit overlays are drawn from the parameters stored in fits.csv and are never
recomputed here.  Rendering is deterministic: fixed backend, size, dpi, and
stripped metadata make repeated renders byte-identical.

Figure ids and their inputs:

    fig1c  S_op(t) per run, log-time               observables.csv (+ log_tangent overlay)
    fig1d  eta(t0) and S0(t0) per run              fits.csv
    fig2a  p_S at late times + trial-function fits sectors.csv + fits.csv
    fig2b  S_op,S per spin sector vs time          sectors.csv
    fig2c  spin-sector Shannon entropy, log-time   aggregates.csv
    fig2d  averaged resolved entanglement          aggregates.csv
    fig3a  p_Sz at late times + Gaussian fits      sectors.csv + fits.csv
    fig3b  Gaussian width delta(t), double-log     fits.csv (+ power-law overlay)
    fig3c  scaled resolved-entanglement deltas     resolved_deltas.csv (+ decay overlay)
    fig3d  S_op at Sz=0 vs time, log-time          sectors.csv
    fig4   symmetry-broken runs: S_op + resolved   observables.csv + sectors.csv
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGURE_IDS = (
    "fig1c",
    "fig1d",
    "fig2a",
    "fig2b",
    "fig2c",
    "fig2d",
    "fig3a",
    "fig3b",
    "fig3c",
    "fig3d",
    "fig4",
)

REQUIRED_COLUMNS = {
    "observables.csv": ["time", "bond", "S_op", "shannon_Sz", "trunc_weight", "chi_used"],
    "sectors.csv": ["time", "bond", "sector_type", "sector_value", "p", "S_resolved"],
    "aggregates.csv": ["time", "bond", "shannon_S", "avg_S_op_S"],
    "resolved_deltas.csv": ["time", "bond", "sector_value", "delta_S_resolved", "delta_scaled"],
    "fits.csv": ["kind", "bond", "t0", "window_lo", "window_hi", "eta", "S0", "delta", "alpha", "a", "b", "c"],
}

BOND = 1  # figures report the inter-pair bond

plt.rcParams.update(
    {
        "figure.dpi": 120,
        "savefig.dpi": 120,
        "font.size": 9,
        "axes.grid": True,
        "grid.alpha": 0.25,
        "lines.linewidth": 1.2,
        "svg.hashsalt": "opent-plots",
    }
)


class SchemaError(RuntimeError):
    """Input files missing or not conforming to the documented CSV schema."""


class RenderWarning(UserWarning):
    pass


@dataclass
class RunData:
    path: Path
    label: str
    tables: dict  # filename -> list of row dicts
    sources: list = field(default_factory=list)

    def rows(self, filename: str, **filters):
        """Filtered rows of one table, recording the access for --dry-run."""
        table = self.tables.get(filename)
        if table is None:
            raise SchemaError(f"{self.path}/{filename}: file is missing")
        out = []
        for row in table:
            ok = True
            for col, want in filters.items():
                if row.get(col) != want:
                    ok = False
                    break
            if ok:
                out.append(row)
        desc = ", ".join(f"{k}={v}" for k, v in filters.items()) or "all rows"
        self.sources.append(f"{self.path}/{filename} [{desc}] -> {len(out)} rows")
        return out

    def has(self, filename: str) -> bool:
        return self.tables.get(filename) is not None


def _load_table(path: Path, required) -> list:
    with open(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        return list(reader)


def load_run(run_dir) -> RunData:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise SchemaError(f"{run_dir}: not a directory")
    tables = {}
    for name, required in REQUIRED_COLUMNS.items():
        path = run_dir / name
        if path.exists():
            tables[name] = _load_table(path, required)
    if "observables.csv" not in tables:
        raise SchemaError(f"{run_dir}: observables.csv is missing")
    label = run_dir.name
    meta = run_dir / "run.json"
    if meta.exists():
        try:
            cfg = json.loads(meta.read_text()).get("config", {})
            if "gamma" in cfg:
                label = f"gamma={cfg['gamma']:g}J"
        except (json.JSONDecodeError, TypeError):
            pass
    return RunData(path=run_dir, label=label, tables=tables)


def _series(run: RunData, filename: str, xcol: str, ycol: str, **filters):
    rows = run.rows(filename, **filters)
    pts = [(float(r[xcol]), float(r[ycol])) for r in rows if r[ycol] != ""]
    pts.sort()
    return [x for x, _ in pts], [y for _, y in pts]


def _fit_rows(run: RunData, kind: str, warnings: list):
    if not run.has("fits.csv"):
        warnings.append(f"{run.path}: fits.csv missing; {kind} overlay skipped")
        return []
    rows = run.rows("fits.csv", kind=kind, bond=str(BOND))
    rows = [r for r in rows if r.get("converged") == "1"]
    if not rows:
        warnings.append(f"{run.path}: no converged {kind} fit rows; overlay skipped")
    return rows


def _late_times(values, n=5):
    times = sorted(set(values))
    if not times:
        return []
    late = [t for t in times if t >= times[-1] / 2] or times
    if len(late) <= n:
        return late
    idx = np.linspace(0, len(late) - 1, n).round().astype(int)
    return [late[i] for i in sorted(set(idx.tolist()))]


def _shade(i, n):
    return plt.get_cmap("viridis")(0.15 + 0.7 * (i / max(n - 1, 1)))


# -- individual figures ----------------------------------------------------------


def fig1c(runs, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    for run in runs:
        t, s = _series(run, "observables.csv", "time", "S_op", bond=str(BOND))
        pos = [(x, y) for x, y in zip(t, s) if x > 0]
        ax.plot([x for x, _ in pos], [y for _, y in pos], label=run.label)
    rows = _fit_rows(runs[0], "log_tangent", warnings)
    if rows:
        last = max(rows, key=lambda r: float(r["t0"]))
        eta, s0, t0 = float(last["eta"]), float(last["S0"]), float(last["t0"])
        tt = np.linspace(max(t0 / 4, 1e-3), t0 * 1.5, 40)
        ax.plot(tt, eta * np.log2(tt) + s0, "k--", lw=1.0, label="log fit")
    ax.set_xscale("log")
    ax.set_xlabel("tJ")
    ax.set_ylabel("S_op")
    ax.legend(fontsize=7)
    return fig


def fig1d(runs, warnings):
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(4.2, 4.2), sharex=True)
    for run in runs:
        rows = _fit_rows(run, "log_tangent", warnings)
        pts = sorted((float(r["t0"]), float(r["eta"]), float(r["S0"])) for r in rows)
        if not pts:
            continue
        ax1.plot([p[0] for p in pts], [p[1] for p in pts], label=run.label)
        ax2.plot([p[0] for p in pts], [p[2] for p in pts])
    ax1.set_ylabel("eta(t0)")
    ax2.set_ylabel("S0(t0)")
    ax2.set_xlabel("t0 J")
    ax1.legend(fontsize=7)
    return fig


def _sector_panel(run, sector_type, fit_kind, model, xlabel, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    rows = run.rows("sectors.csv", bond=str(BOND), sector_type=sector_type)
    times = _late_times([float(r["time"]) for r in rows])
    fits = {float(r["t0"]): float(r["delta"]) for r in _fit_rows(run, fit_kind, warnings)}
    for i, t in enumerate(times):
        pts = sorted(
            (float(r["sector_value"]) / 2.0, float(r["p"]))
            for r in rows
            if float(r["time"]) == t and float(r["p"]) > 1e-4
        )
        color = _shade(i, len(times))
        ax.plot([x for x, _ in pts], [p for _, p in pts], "o", ms=3, color=color, label=f"tJ={t:g}")
        delta = fits.get(t)
        if delta:
            xs = np.linspace(min(x for x, _ in pts), max(x for x, _ in pts), 120)
            ax.plot(xs, model(xs, delta), "-", lw=0.9, color=color)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("p")
    ax.legend(fontsize=6)
    return fig


def fig2a(runs, warnings):
    def trial(s, delta):
        return (2 * s + 1) / np.sqrt(2 * np.pi * delta**2) * (
            np.exp(-(s**2) / (2 * delta**2)) - np.exp(-((s + 1) ** 2) / (2 * delta**2))
        )

    return _sector_panel(runs[0], "S", "trial_pS", trial, "S", warnings)


def fig2b(runs, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    run = runs[0]
    rows = run.rows("sectors.csv", bond=str(BOND), sector_type="S")
    sectors = sorted({int(r["sector_value"]) for r in rows if r["S_resolved"] != ""})
    for i, s2 in enumerate(sectors):
        pts = sorted(
            (float(r["time"]), float(r["S_resolved"]))
            for r in rows
            if int(r["sector_value"]) == s2 and r["S_resolved"] != ""
        )
        label = f"S={s2 // 2}" if s2 % 2 == 0 else f"S={s2}/2"
        ax.plot([t for t, _ in pts], [v for _, v in pts], color=_shade(i, len(sectors)), label=label)
    ax.set_xlabel("tJ")
    ax.set_ylabel("S_op,S")
    ax.legend(fontsize=6, ncol=2)
    return fig


def _aggregate_figure(runs, column, ylabel):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    for run in runs:
        t, v = _series(run, "aggregates.csv", "time", column, bond=str(BOND))
        pos = [(x, y) for x, y in zip(t, v) if x > 0]
        ax.plot([x for x, _ in pos], [y for _, y in pos], label=run.label)
    ax.set_xscale("log")
    ax.set_xlabel("tJ")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    return fig


def fig2c(runs, warnings):
    return _aggregate_figure(runs, "shannon_S", "-sum p_S log2 p_S")


def fig2d(runs, warnings):
    return _aggregate_figure(runs, "avg_S_op_S", "sum p_S S_op,S")


def fig3a(runs, warnings):
    def gaussian(sz, delta):
        return np.exp(-(sz**2) / (2 * delta**2)) / np.sqrt(2 * np.pi * delta**2)

    return _sector_panel(runs[0], "Sz", "gaussian", gaussian, "Sz", warnings)


def fig3b(runs, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    for run in runs:
        rows = _fit_rows(run, "gaussian", warnings)
        pts = sorted((float(r["t0"]), float(r["delta"])) for r in rows if r["t0"] != "")
        pts = [(t, d) for t, d in pts if t > 0 and d > 0]
        if pts:
            ax.plot([t for t, _ in pts], [d for _, d in pts], label=run.label)
    rows = _fit_rows(runs[0], "power_law", warnings)
    if rows:
        alpha = float(rows[0]["alpha"])
        lo, hi = float(rows[0]["window_lo"]), float(rows[0]["window_hi"])
        # anchor the guide line on the curve's value nearest the window start
        gauss = sorted((float(r["t0"]), float(r["delta"])) for r in _fit_rows(runs[0], "gaussian", warnings))
        anchor = min(gauss, key=lambda p: abs(p[0] - lo), default=None)
        if anchor:
            tt = np.linspace(lo, hi, 30)
            ax.plot(tt, anchor[1] * (tt / anchor[0]) ** alpha, "k--", lw=1.0, label=f"(tJ)^{alpha:.2f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("tJ")
    ax.set_ylabel("delta")
    ax.legend(fontsize=7)
    return fig


def fig3c(runs, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    run = runs[0]
    rows = run.rows("resolved_deltas.csv", bond=str(BOND))
    sectors = sorted({int(r["sector_value"]) for r in rows if int(r["sector_value"]) > 0})
    for i, sz2 in enumerate(sectors):
        pts = sorted(
            (float(r["time"]), float(r["delta_scaled"]))
            for r in rows
            if int(r["sector_value"]) == sz2
        )
        label = f"Sz={sz2 // 2}" if sz2 % 2 == 0 else f"Sz={sz2}/2"
        ax.plot([t for t, _ in pts], [v for _, v in pts], color=_shade(i, len(sectors)), label=label)
    fit = _fit_rows(run, "decay", warnings)
    if fit:
        a, b, c = (float(fit[0][k]) for k in ("a", "b", "c"))
        tmax = max((float(r["time"]) for r in rows), default=1.0)
        tt = np.linspace(0, tmax, 80)
        ax.plot(tt, (a + b * tt) ** (-c), "k-", lw=1.0, label=f"({a:.2f}+{b:.2f}tJ)^-{c:.2f}")
    ax.set_xlabel("tJ")
    ax.set_ylabel("dS_op,Sz / Sz^2")
    ax.legend(fontsize=6)
    return fig


def fig3d(runs, warnings):
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    for run in runs:
        rows = run.rows("sectors.csv", bond=str(BOND), sector_type="Sz", sector_value="0")
        pts = sorted(
            (float(r["time"]), float(r["S_resolved"])) for r in rows if r["S_resolved"] != ""
        )
        pts = [(t, v) for t, v in pts if t > 0]
        ax.plot([t for t, _ in pts], [v for _, v in pts], label=run.label)
    ax.set_xscale("log")
    ax.set_xlabel("tJ")
    ax.set_ylabel("S_op,Sz=0")
    ax.legend(fontsize=7)
    return fig


def fig4(runs, warnings):
    if len(runs) < 2:
        raise SchemaError("fig4 needs two run directories (symmetry-broken initial states)")
    fig, axes = plt.subplots(1, 2, figsize=(7.4, 3.0))
    for ax, run in zip(axes, runs[:2]):
        t, s = _series(run, "observables.csv", "time", "S_op", bond=str(BOND))
        pos = [(x, y) for x, y in zip(t, s) if x > 0]
        ax.plot([x for x, _ in pos], [y for _, y in pos], "k-", label="S_op")
        rows = run.rows("sectors.csv", bond=str(BOND), sector_type="Sz")
        for i, sz2 in enumerate(range(0, 10, 2)):
            pts = sorted(
                (float(r["time"]), float(r["S_resolved"]))
                for r in rows
                if int(r["sector_value"]) == sz2 and r["S_resolved"] != "" and float(r["time"]) > 0
            )
            if pts:
                ax.plot(
                    [x for x, _ in pts],
                    [y for _, y in pts],
                    color=_shade(i, 5),
                    lw=0.8,
                    label=f"Sz={sz2 // 2}",
                )
        ax.set_xscale("log")
        ax.set_xlabel("tJ")
        ax.set_title(run.label, fontsize=8)
        ax.legend(fontsize=6)
    axes[0].set_ylabel("S_op")
    return fig


BUILDERS = {
    "fig1c": fig1c,
    "fig1d": fig1d,
    "fig2a": fig2a,
    "fig2b": fig2b,
    "fig2c": fig2c,
    "fig2d": fig2d,
    "fig3a": fig3a,
    "fig3b": fig3b,
    "fig3c": fig3c,
    "fig3d": fig3d,
    "fig4": fig4,
}


def render(figure_id: str, run_dirs, out_path, dry_run: bool = False):
    """Render one figure; returns (sources, warnings).

    With ``dry_run`` no image is written and the CSV cells that would be
    consumed are listed instead.
    """
    if figure_id not in BUILDERS:
        raise SchemaError(f"unknown figure id {figure_id!r} (known: {', '.join(FIGURE_IDS)})")
    runs = [load_run(d) for d in run_dirs]
    if not runs:
        raise SchemaError("no run directories given")
    warnings: list = []
    fig = BUILDERS[figure_id](runs, warnings)
    sources = [s for run in runs for s in run.sources]
    if dry_run:
        plt.close(fig)
        return sources, warnings
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format=out_path.suffix.lstrip(".") or "png", metadata={"Software": None})
    plt.close(fig)
    return sources, warnings
