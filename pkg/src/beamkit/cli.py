"""Experiment runner: single designs and seeded Monte-Carlo sweeps with CSV
and JSON emission.

CSV schema (per-trial file):
    sweep_value,method,trial,ee_bits_per_hz_joule,sum_rate,min_user_sinr_db,
    min_target_gain_db,tx_power_w,feasible,outer_iters,wall_ms
The aggregated file keys on (sweep_value, method) and appends _mean/_stderr
columns.  Two kinds bend the column meaning (documented in the README):
convergence writes one row per outer iteration with outer_iters as the
iteration index and the energy efficiency of that iterate; beampattern
writes one row per probe angle with min_target_gain_db holding the gain at
that angle.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .metrics import beampattern_gain
from .model import (
    ConfigError,
    ScenarioConfig,
    figure_deg_to_physical_rad,
    load_config,
)
from .pipeline import METHODS, run_methods
from .sdpcore import InfeasibleDesignError

CSV_COLUMNS = [
    "sweep_value", "method", "trial", "ee_bits_per_hz_joule", "sum_rate",
    "min_user_sinr_db", "min_target_gain_db", "tx_power_w", "feasible",
    "outer_iters", "wall_ms",
]
NUMERIC_COLUMNS = CSV_COLUMNS[3:]

DEFAULT_GRIDS = {
    "snr": [float(v) for v in range(-10, 31, 5)],
    "gamma": [float(v) for v in range(1, 14)],
    "rfc": [float(v) for v in range(4, 13)],
    "convergence": [4.0, 6.0],
    "beampattern": [float(v) for v in range(-90, 91, 2)],
}
DEFAULT_METHODS = {
    "snr": ["proposed", "omp", "fdb"],
    "gamma": ["proposed", "comm_only"],
    "rfc": ["proposed"],
    "convergence": ["proposed"],
    "beampattern": ["proposed"],
}


@dataclass
class SweepSpec:
    kind: str
    grid: list
    trials: int
    base: ScenarioConfig
    methods: list = field(default_factory=lambda: ["proposed"])
    seed: int = None
    workers: int = None

    def __post_init__(self):
        if self.kind not in DEFAULT_GRIDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if not self.grid:
            raise ValueError("sweep grid must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods: {bad}")
        if self.seed is None:
            self.seed = self.base.rng_seed


def _user_fan_deg(n_users: int):
    """Figure-convention angles for synthesized user sets (rfc sweeps)."""
    if n_users == 1:
        return [45.0]
    return list(np.linspace(15.0, 75.0, n_users))


def variant_config(base: ScenarioConfig, kind: str, value: float) -> ScenarioConfig:
    """Scenario for one grid point."""
    if kind == "snr":
        return base.with_overrides(max_tx_power=10 ** (value / 10.0) * base.noise_power)
    if kind == "gamma":
        gam = 10 ** (value / 10.0)
        return base.with_overrides(
            beampattern_thresholds=(gam,) * base.n_targets)
    if kind in ("rfc", "convergence"):
        m_t = int(round(value))
        n_users = m_t - base.n_targets
        if n_users < 1:
            raise ValueError(f"rfc value {m_t} leaves no user streams")
        angles = tuple(figure_deg_to_physical_rad(_user_fan_deg(n_users)))
        return base.with_overrides(
            n_rfc=m_t,
            n_users=n_users,
            user_angles=angles,
            sinr_thresholds=(base.sinr_thresholds[0],) * n_users,
            user_distances=(base.user_distances[0],) * n_users,
        )
    if kind == "beampattern":
        return base
    raise ValueError(f"unknown sweep kind {kind!r}")


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    # shortest round-trip representation: parsing the CSV recovers the exact
    # float, so aggregates recompute bit-for-bit
    return repr(float(x))


def _min_db(values) -> float:
    vals = [v for v in values]
    if not vals:
        return float("nan")
    lo = min(vals)
    if lo <= 0:
        return float("-inf") if lo == 0 else float("nan")
    return 10.0 * math.log10(lo)


def _infeasible_rows(kind, value, method, trial, wall_ms, grid=None):
    base = {
        "sweep_value": value, "method": method, "trial": trial,
        "ee_bits_per_hz_joule": 0.0, "sum_rate": 0.0,
        "min_user_sinr_db": float("nan"), "min_target_gain_db": float("nan"),
        "tx_power_w": 0.0, "feasible": 0, "outer_iters": 0, "wall_ms": wall_ms,
    }
    if kind == "beampattern":
        return [dict(base, sweep_value=a) for a in grid]
    return [base]


def run_trial(spec: SweepSpec, value: float, trial: int) -> list:
    """All CSV rows contributed by one (grid value, trial) cell."""
    kind = spec.kind
    if kind == "beampattern":
        cfg = variant_config(spec.base, kind, 0.0)
    else:
        cfg = variant_config(spec.base, kind, value)
    cfg = cfg.with_overrides(rng_seed=spec.seed + trial)
    t0 = time.perf_counter()
    try:
        results = run_methods(cfg, spec.methods)
    except InfeasibleDesignError:
        wall_ms = (time.perf_counter() - t0) * 1e3
        rows = []
        for method in spec.methods:
            rows.extend(_infeasible_rows(kind, value, method, trial, wall_ms,
                                         grid=spec.grid))
        return rows

    rows = []
    for method in spec.methods:
        res = results.get(method)
        if res is None:
            wall_ms = (time.perf_counter() - t0) * 1e3
            rows.extend(_infeasible_rows(kind, value, method, trial, wall_ms,
                                         grid=spec.grid))
            continue
        rep = res.report
        common = {
            "method": method, "trial": trial,
            "tx_power_w": rep.tx_power, "feasible": int(rep.feasible),
            "wall_ms": rep.wall_time * 1e3,
        }
        if kind == "convergence":
            for k, lam in enumerate(rep.lambda_trace):
                rows.append(dict(
                    common, sweep_value=value, outer_iters=k,
                    ee_bits_per_hz_joule=lam, sum_rate=rep.sum_rate,
                    min_user_sinr_db=_min_db(rep.per_user_sinr),
                    min_target_gain_db=_min_db(rep.per_target_gain)))
        elif kind == "beampattern":
            for angle_deg in spec.grid:
                theta = float(figure_deg_to_physical_rad(angle_deg))
                gain = beampattern_gain(theta, res.beamformer,
                                        cfg.antenna_spacing, cfg.carrier_wavelength)
                gain_db = 10.0 * math.log10(max(gain, 1e-300))
                rows.append(dict(
                    common, sweep_value=angle_deg,
                    ee_bits_per_hz_joule=rep.energy_efficiency,
                    sum_rate=rep.sum_rate,
                    min_user_sinr_db=_min_db(rep.per_user_sinr),
                    min_target_gain_db=gain_db,
                    outer_iters=rep.iterations.get("outer", 0)))
        else:
            rows.append(dict(
                common, sweep_value=value,
                ee_bits_per_hz_joule=rep.energy_efficiency,
                sum_rate=rep.sum_rate,
                min_user_sinr_db=_min_db(rep.per_user_sinr),
                min_target_gain_db=_min_db(rep.per_target_gain),
                outer_iters=rep.iterations.get("outer", 0)))
    return rows


def _limit_blas(_=None):  # worker initializer
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"


def _run_cell(args):
    spec, value, trial = args
    return run_trial(spec, value, trial)


def run_sweep(spec: SweepSpec, out_dir, config_source=None) -> dict:
    """Execute the sweep, write <kind>.csv, <kind>_agg.csv and meta.json."""
    os.makedirs(out_dir, exist_ok=True)
    if spec.kind == "beampattern":
        cells = [(None, t) for t in range(spec.trials)]
    else:
        cells = [(v, t) for v in spec.grid for t in range(spec.trials)]

    workers = spec.workers
    if workers is None:
        workers = int(os.environ.get("BEAMKIT_THREADS", "0")) or (os.cpu_count() or 1)
    rows = []
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_blas) as pool:
            args = [(spec, v if v is not None else spec.grid[0], t) for v, t in cells]
            for chunk in pool.map(_run_cell, args):
                rows.extend(chunk)
    else:
        for v, t in cells:
            rows.extend(run_trial(spec, v if v is not None else spec.grid[0], t))

    def sort_key(r):
        return (float(r["sweep_value"]), r["method"], int(r["trial"]),
                int(r["outer_iters"]))

    rows.sort(key=sort_key)
    csv_path = os.path.join(out_dir, f"{spec.kind}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in CSV_COLUMNS) + "\n")

    agg_rows = aggregate_rows(rows, per_iteration=(spec.kind == "convergence"))
    agg_path = os.path.join(out_dir, f"{spec.kind}_agg.csv")
    agg_cols = (["sweep_value", "method"]
                + [f"{c}_{s}" for c in NUMERIC_COLUMNS for s in ("mean", "stderr")])
    with open(agg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(agg_cols) + "\n")
        for r in agg_rows:
            fh.write(",".join(_fmt(r[c]) for c in agg_cols) + "\n")

    meta = {
        "toolkit_version": __version__,
        "kind": spec.kind,
        "grid": list(map(float, spec.grid)),
        "trials": spec.trials,
        "seed": spec.seed,
        "methods": list(spec.methods),
        "workers": workers,
        "config_source": str(config_source) if config_source else None,
        "config_resolved": _config_dict(spec.base),
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"csv": csv_path, "agg": agg_path, "rows": len(rows)}


def aggregate_rows(rows, per_iteration=False) -> list:
    groups = {}
    for r in rows:
        key = (float(r["sweep_value"]), r["method"])
        if per_iteration:
            key = key + (int(r["outer_iters"]),)
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups):
        bucket = groups[key]
        agg = {"sweep_value": key[0], "method": key[1]}
        for col in NUMERIC_COLUMNS:
            vals = np.array([float(b[col]) for b in bucket])
            mean = float(np.mean(vals))
            if vals.size > 1:
                stderr = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
            else:
                stderr = 0.0
            agg[f"{col}_mean"] = mean
            agg[f"{col}_stderr"] = stderr
        out.append(agg)
    return out


def _config_dict(cfg: ScenarioConfig) -> dict:
    doc = {}
    for name, value in vars(cfg).items():
        if isinstance(value, tuple):
            doc[name] = list(value)
        else:
            doc[name] = value
    return doc


def run_single(config_path) -> int:
    """One full pipeline run; prints the report as JSON."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        results = run_methods(cfg, ("proposed",))
    except InfeasibleDesignError as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        print(json.dumps({"feasible": False, "most_violated": str(exc.most_violated)},
                         indent=2))
        return 2
    rep = results["proposed"].report
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return 0 if rep.feasible else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="beamkit",
        description="Energy-efficient hybrid beamforming designer and sweep runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="run one design from a JSON scenario")
    p_design.add_argument("config", help="path to the scenario JSON")

    p_sweep = sub.add_parser("sweep", help="run a seeded Monte-Carlo sweep")
    p_sweep.add_argument("--kind", required=True, choices=sorted(DEFAULT_GRIDS))
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--trials", type=int, default=50)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--methods", default=None,
                         help="comma-separated subset of " + ",".join(METHODS))
    p_sweep.add_argument("--grid", default=None,
                         help="comma-separated grid override")

    args = parser.parse_args(argv)
    if args.command == "design":
        return run_single(args.config)

    try:
        base = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    methods = (args.methods.split(",") if args.methods
               else list(DEFAULT_METHODS[args.kind]))
    grid = ([float(v) for v in args.grid.split(",")] if args.grid
            else list(DEFAULT_GRIDS[args.kind]))
    try:
        spec = SweepSpec(kind=args.kind, grid=grid, trials=args.trials,
                         base=base, methods=methods, seed=args.seed)
    except ValueError as exc:
        print(f"sweep error: {exc}", file=sys.stderr)
        return 1
    info = run_sweep(spec, args.out, config_source=args.config)
    print(f"wrote {info['rows']} rows to {info['csv']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
