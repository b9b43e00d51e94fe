"""Command-line runner: evolution, oracle runs, comparisons, and analysis.

Subcommands:
    evolve   -- iTEBD run from a config file; writes spectra/observables/sectors
                CSVs plus run.json, with optional checkpointing and resume
    oracle   -- exact finite-chain run with the same CSV schema
    compare  -- deviation report between two completed runs on a shared grid
    analyze  -- fits.csv from a completed run directory

All outputs are written to a temporary file and renamed into place, so a
failed run leaves no partial CSVs.  OPENT_NUM_THREADS caps the linear-algebra
thread pools (set before numpy is first imported).
"""

from __future__ import annotations

import os

if os.environ.get("OPENT_NUM_THREADS"):
    _n = os.environ["OPENT_NUM_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import csv
import json
import math
import sys
import tempfile
import time as _time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    FitError,
    fit_decay,
    fit_gaussian,
    fit_log_tangent,
    fit_power_law,
    fit_trial_ps,
    P_REPORT_THRESHOLD,
)
from .config import AnalysisConfig, ConfigError, RunConfig
from .edoracle import build_liouvillian, evolve_exact, exact_operator_schmidt, initial_superket
from .impdo import (
    BlowUpError,
    CheckpointError,
    checkpoint_load,
    checkpoint_save,
    evolve,
    init_state,
)
from .observables import (
    SpectrumSnapshot,
    detect_multiplets,
    operator_entanglement,
    resolved_entanglement,
    sector_probabilities,
    shannon_entropy,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_IO = 4

SPECTRA_COLUMNS = ["time", "bond", "qk", "qb", "lambda"]
OBSERVABLES_COLUMNS = [
    "time",
    "bond",
    "S_op",
    "shannon_Sz",
    "trace_dev",
    "herm_dev",
    "trunc_weight",
    "chi_used",
]
SECTORS_COLUMNS = ["time", "bond", "sector_type", "sector_value", "p", "S_resolved"]
# auxiliary tables so the plotting layer never recomputes anything
AGGREGATES_COLUMNS = ["time", "bond", "shannon_S", "avg_S_op_S"]
DELTAS_COLUMNS = ["time", "bond", "sector_value", "delta_S_resolved", "delta_scaled"]
FITS_COLUMNS = [
    "kind",
    "bond",
    "t0",
    "window_lo",
    "window_hi",
    "eta",
    "S0",
    "delta",
    "alpha",
    "a",
    "b",
    "c",
    "residual",
    "converged",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


class CsvSink:
    """Collects snapshot-derived rows and writes the three CSVs atomically."""

    def __init__(self, bonds):
        self.bonds = set(bonds)
        self.spectra = []
        self.observables = []
        self.sectors = []
        self.aggregates = []
        self.deltas = []

    def emit(self, snap: SpectrumSnapshot) -> None:
        if snap.bond not in self.bonds:
            return
        t, b = snap.time, snap.bond
        for qk, qb, lam in snap.entries:
            self.spectra.append([t, b, qk, qb, lam])
        probs = sector_probabilities(snap)
        self.observables.append(
            [
                t,
                b,
                operator_entanglement(snap),
                shannon_entropy(probs),
                snap.trace_dev,
                snap.herm_dev,
                snap.trunc_weight,
                snap.chi,
            ]
        )
        resolved = resolved_entanglement(snap)
        for sz2, p in probs.items():
            s_res = resolved.get(sz2, 0.0) if p > P_REPORT_THRESHOLD else ""
            self.sectors.append([t, b, "Sz", sz2, p, s_res])
        table, p_s, s_op_s = detect_multiplets(snap)
        if table.consistent:
            for s2, p in p_s.items():
                s_res = s_op_s.get(s2, 0.0) if p > P_REPORT_THRESHOLD else ""
                self.sectors.append([t, b, "S", s2, p, s_res])
            self.aggregates.append(
                [t, b, shannon_entropy(p_s), sum(p_s[s2] * s_op_s.get(s2, 0.0) for s2 in p_s)]
            )
        if 0 in resolved and probs.get(0, 0.0) > P_REPORT_THRESHOLD:
            for sz2, val in resolved.items():
                if sz2 == 0 or probs.get(sz2, 0.0) <= P_REPORT_THRESHOLD:
                    continue
                delta = val - resolved[0]
                self.deltas.append([t, b, sz2, delta, delta / (sz2 / 2.0) ** 2])

    def write(self, out_dir: Path) -> None:
        _write_csv(out_dir / "spectra.csv", SPECTRA_COLUMNS, self.spectra)
        _write_csv(out_dir / "observables.csv", OBSERVABLES_COLUMNS, self.observables)
        _write_csv(out_dir / "sectors.csv", SECTORS_COLUMNS, self.sectors)
        _write_csv(out_dir / "aggregates.csv", AGGREGATES_COLUMNS, self.aggregates)
        _write_csv(out_dir / "resolved_deltas.csv", DELTAS_COLUMNS, self.deltas)


def _write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, suffix=".tmp", delete=False, newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
        tmp = fh.name
    os.replace(tmp, path)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", dir=path.parent, suffix=".tmp", delete=False) as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
        tmp = fh.name
    os.replace(tmp, path)


def _log(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg, file=sys.stderr)


# -- evolve ------------------------------------------------------------------


def cmd_evolve(args) -> int:
    cfg = RunConfig.load(args.config)
    out_dir = Path(args.out)
    params = cfg.params()
    if args.resume:
        state = checkpoint_load(args.resume)
        if state.kind != cfg.state:
            raise ConfigError(
                f"checkpoint state {state.kind!r} does not match config state {cfg.state!r}"
            )
        _log(args.quiet, f"resuming {state.kind} at tJ={state.time:g} (step {state.step})")
    else:
        state = init_state(cfg.state)
    sink = CsvSink(cfg.bonds)
    started = _time.time()
    checkpoint_path = out_dir / "checkpoint.opnt"

    next_checkpoint = [state.step + cfg.checkpoint_interval if cfg.checkpoint_interval else None]

    def emit(snap):
        sink.emit(snap)
        if next_checkpoint[0] is not None and state.step >= next_checkpoint[0]:
            out_dir.mkdir(parents=True, exist_ok=True)
            tmp = checkpoint_path.with_suffix(".tmp")
            checkpoint_save(state, tmp)
            os.replace(tmp, checkpoint_path)
            next_checkpoint[0] = state.step + cfg.checkpoint_interval

    evolve(
        state,
        params,
        t_max=cfg.t_max,
        observe_every=cfg.observe_every,
        sink=emit,
        chi_max=cfg.chi_max,
        eps_trunc=cfg.eps_trunc,
        emit_initial=not args.resume,
    )
    sink.write(out_dir)
    if cfg.checkpoint_interval:
        tmp = checkpoint_path.with_suffix(".tmp")
        checkpoint_save(state, tmp)
        os.replace(tmp, checkpoint_path)
    _write_json(
        out_dir / "run.json",
        {
            "command": "evolve",
            "config": json.loads(cfg.to_json()),
            "version": __version__,
            "status": "completed",
            "final_time": state.time,
            "final_step": state.step,
            "chi": {"bond0": state.chi(0), "bond1": state.chi(1)},
            "trunc_total": state.trunc_total,
            "trace_dev": state.trace_dev,
            "canon_warnings": state.canon_warnings,
            "dropped_groups": state.dropped_groups,
            "wall_seconds": _time.time() - started,
        },
    )
    _log(args.quiet, f"evolve done: tJ={state.time:g}, chi=({state.chi(0)},{state.chi(1)})")
    return EXIT_OK


# -- oracle ------------------------------------------------------------------


def cmd_oracle(args) -> int:
    cfg = RunConfig.load(args.config)
    out_dir = Path(args.out)
    n = cfg.oracle.n_sites
    params = cfg.params()
    if cfg.state in ("singlet_pairs", "triplet_pairs") and n % 2:
        raise ConfigError(f"oracle.n_sites must be even for {cfg.state}, got {n}")
    liouv = build_liouvillian(n, params)
    rho = initial_superket(cfg.state, n)
    # middle cuts: the even cut maps to the inter-pair bond (1), the odd cut
    # just left of it to the intra-pair bond (0)
    cut_even = 2 * (n // 4) if n >= 4 else None
    if cut_even is not None and not 1 <= cut_even <= n - 1:
        cut_even = None
    cut_odd = n // 2 if (n // 2) % 2 == 1 else max(n // 2 - 1, 1)
    cuts = {}
    if 0 in cfg.bonds and 1 <= cut_odd <= n - 1:
        cuts[cut_odd] = 0
    if 1 in cfg.bonds and cut_even is not None:
        cuts[cut_even] = 1
    sink = CsvSink(cfg.bonds)
    started = _time.time()
    n_obs = int(math.floor(cfg.t_max / (params.dt * cfg.observe_every) + 1e-9))
    times = [k * params.dt * cfg.observe_every for k in range(n_obs + 1)]
    current = rho
    t_now = 0.0
    for t in times:
        if t > t_now:
            current = evolve_exact(current, liouv, t - t_now, tol=cfg.oracle.tol)
            t_now = t
        for cut, bond in sorted(cuts.items()):
            sink.emit(exact_operator_schmidt(current, cut, time=t))
    sink.write(out_dir)
    _write_json(
        out_dir / "run.json",
        {
            "command": "oracle",
            "config": json.loads(cfg.to_json()),
            "version": __version__,
            "status": "completed",
            "n_sites": n,
            "cuts": {str(c): b for c, b in cuts.items()},
            "final_time": t_now,
            "wall_seconds": _time.time() - started,
        },
    )
    _log(args.quiet, f"oracle done: N={n}, tJ={t_now:g}")
    return EXIT_OK


# -- compare --------------------------------------------------------------------


def _read_observables(run_dir: Path):
    path = run_dir / "observables.csv"
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            key = (round(float(row["time"]), 9), int(row["bond"]))
            out[key] = float(row["S_op"])
    return out


def _read_sector_probs(run_dir: Path):
    path = run_dir / "sectors.csv"
    out = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["sector_type"] != "Sz":
                continue
            key = (round(float(row["time"]), 9), int(row["bond"]))
            out.setdefault(key, {})[int(row["sector_value"])] = float(row["p"])
    return out


def cmd_compare(args) -> int:
    a_dir, b_dir = Path(args.run_a), Path(args.run_b)
    obs_a, obs_b = _read_observables(a_dir), _read_observables(b_dir)
    lo = args.t_lo if args.t_lo is not None else -math.inf
    hi = args.t_hi if args.t_hi is not None else math.inf
    shared = sorted(k for k in obs_a if k in obs_b and lo <= k[0] <= hi)
    if not shared:
        raise ConfigError("no shared observation times in the requested window")
    dev_sop = {}
    for t, bond in shared:
        d = abs(obs_a[(t, bond)] - obs_b[(t, bond)])
        dev_sop[bond] = max(dev_sop.get(bond, 0.0), d)
    probs_a, probs_b = _read_sector_probs(a_dir), _read_sector_probs(b_dir)
    dev_p = 0.0
    for key in shared:
        pa = probs_a.get(key, {})
        pb = probs_b.get(key, {})
        for sector in set(pa) | set(pb):
            dev_p = max(dev_p, abs(pa.get(sector, 0.0) - pb.get(sector, 0.0)))
    report = {
        "run_a": str(a_dir),
        "run_b": str(b_dir),
        "window": [shared[0][0], shared[-1][0]],
        "n_shared_times": len({t for t, _ in shared}),
        "max_dS_op": {f"bond{b}": v for b, v in sorted(dev_sop.items())},
        "max_dp_Sz": dev_p,
        "tolerance": args.tol,
        "pass": bool(max(dev_sop.values()) <= args.tol and dev_p <= args.tol),
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out_file:
        _write_json(Path(args.out_file), report)
    print(text)
    return EXIT_OK


# -- analyze --------------------------------------------------------------------


def _read_series(run_dir: Path):
    obs = {}
    with open(run_dir / "observables.csv") as fh:
        for row in csv.DictReader(fh):
            key = int(row["bond"])
            obs.setdefault(key, []).append((float(row["time"]), float(row["S_op"])))
    sectors = {}
    sectors_path = run_dir / "sectors.csv"
    if not sectors_path.exists():
        return obs, None
    with open(sectors_path) as fh:
        for row in csv.DictReader(fh):
            bond = int(row["bond"])
            t = float(row["time"])
            kind = row["sector_type"]
            entry = sectors.setdefault((bond, t), {"Sz": {}, "S": {}, "res": {}})
            entry[kind][int(row["sector_value"])] = float(row["p"])
            if kind == "Sz" and row["S_resolved"] != "":
                entry["res"][int(row["sector_value"])] = float(row["S_resolved"])
    return obs, sectors


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "observables.csv").exists():
        raise ConfigError(f"{run_dir} does not contain observables.csv")
    analysis = AnalysisConfig()
    run_meta = run_dir / "run.json"
    if run_meta.exists():
        doc = json.loads(run_meta.read_text()).get("config", {})
        if "analysis" in doc:
            analysis = AnalysisConfig(**doc["analysis"])
            analysis.validate()
    obs, sectors = _read_series(run_dir)
    rows = []

    def emit(kind, bond, res, t0=""):
        params = res.params if res is not None else {}
        window = res.window if res is not None and res.window else ("", "")
        rows.append(
            [
                kind,
                bond,
                t0,
                window[0],
                window[1],
                params.get("eta", ""),
                params.get("S0", ""),
                params.get("delta", ""),
                params.get("alpha", ""),
                params.get("a", ""),
                params.get("b", ""),
                params.get("c", ""),
                res.residual if res is not None else "",
                int(res.converged) if res is not None else 0,
            ]
        )

    for bond, series in sorted(obs.items()):
        series = sorted(series)
        times = [t for t, _ in series]
        if len(times) >= 3:
            dt_obs = times[1] - times[0]
            for t0 in times:
                if t0 <= dt_obs or t0 - dt_obs <= 0:
                    continue
                try:
                    emit("log_tangent", bond, fit_log_tangent(series, t0, dt_obs), t0)
                except FitError:
                    continue

    if sectors is None:
        # sector data absent: the sector-based fits are emitted as flagged rows
        for bond in sorted(obs):
            for kind in ("gaussian", "trial_pS", "power_law", "decay"):
                emit(kind, bond, None)
        _write_csv(run_dir / "fits.csv", FITS_COLUMNS, rows)
        _log(args.quiet, f"analyze done ({len(rows)} rows; sectors.csv missing, sector fits flagged)")
        return EXIT_OK

    delta_series = {}
    for (bond, t), entry in sorted(sectors.items()):
        if entry["Sz"]:
            try:
                res = fit_gaussian(entry["Sz"])
                emit("gaussian", bond, res, t)
                delta_series.setdefault(bond, []).append((t, res.params["delta"]))
            except FitError:
                pass
        if entry["S"]:
            try:
                emit("trial_pS", bond, fit_trial_ps(entry["S"]), t)
            except FitError:
                pass

    for bond, series in sorted(delta_series.items()):
        if not series:
            continue
        t_end = max(t for t, _ in series)
        window = tuple(analysis.power_law_window) if analysis.power_law_window else (t_end / 3.0, t_end)
        try:
            emit("power_law", bond, fit_power_law(series, window))
        except FitError:
            emit("power_law", bond, None)

    # scaled resolved-entanglement differences, collapsed over Sz
    decay_pts = {}
    for (bond, t), entry in sorted(sectors.items()):
        res = entry["res"]
        if 0 not in res:
            continue
        for sz2, val in res.items():
            if sz2 <= 0:
                continue
            sz = sz2 / 2.0
            d = (val - res[0]) / sz**2
            if d > 0:
                decay_pts.setdefault(bond, []).append((t, d))
    for bond, pts in sorted(decay_pts.items()):
        window = tuple(analysis.decay_window) if analysis.decay_window else None
        if window:
            pts = [(t, d) for t, d in pts if window[0] <= t <= window[1]]
        try:
            emit("decay", bond, fit_decay(pts))
        except FitError:
            emit("decay", bond, None)

    _write_csv(run_dir / "fits.csv", FITS_COLUMNS, rows)
    _log(args.quiet, f"analyze done: {len(rows)} fit rows")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opent", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_evolve = sub.add_parser("evolve", help="run the infinite-chain engine")
    p_evolve.add_argument("--config", required=True, help="run configuration JSON")
    p_evolve.add_argument("--out", required=True, help="output directory")
    p_evolve.add_argument("--resume", help="checkpoint file to resume from")
    p_evolve.add_argument("--quiet", action="store_true")
    p_evolve.set_defaults(func=cmd_evolve)

    p_oracle = sub.add_parser("oracle", help="run the exact finite-chain oracle")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--out", required=True)
    p_oracle.add_argument("--quiet", action="store_true")
    p_oracle.set_defaults(func=cmd_oracle)

    p_cmp = sub.add_parser("compare", help="deviation report between two runs")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--t-lo", type=float, default=None)
    p_cmp.add_argument("--t-hi", type=float, default=None)
    p_cmp.add_argument("--tol", type=float, default=1e-3)
    p_cmp.add_argument("--out-file", help="also write the JSON report here")
    p_cmp.add_argument("--quiet", action="store_true")
    p_cmp.set_defaults(func=cmd_compare)

    p_an = sub.add_parser("analyze", help="produce fits.csv for a completed run")
    p_an.add_argument("run_dir")
    p_an.add_argument("--quiet", action="store_true")
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError,) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as err:
        print(f"numerical blow-up: {err}", file=sys.stderr)
        return EXIT_BLOWUP
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
