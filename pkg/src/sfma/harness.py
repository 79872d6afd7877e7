"""Monte Carlo driver, CSV writers and plot-script generation.

One task is one (sweep cell, draw): the scenario and profiles are drawn
once and every requested scheme is solved on them, so schemes are compared
on common random numbers. When both are requested, the proposed scheme
reuses the equal-allocation solution as its warm start; its ``wall_ms``
includes that warm start.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .feasibility import InfeasibleDraw, static_prune
from .link import SystemModel
from .orchestrator import (
    SchemeResult, solve_channel_pairing, solve_equal_allocation, solve_fdma, solve_profile_family, solve_proposed,
)
from .profiles import PairProfileSet, load_profiles, synth_profiles
from .scenario import generate_scenario

ROW_HEADER = ("sweep_var", "sweep_value", "scheme", "draw", "seed", "sum_rate_bps", "feasible", "iters", "wall_ms")
AGG_HEADER = ("sweep_var", "sweep_value", "scheme", "draws", "feasible_draws", "mean_sum_rate_bps",
              "std_sum_rate_bps")


def fmt(x: float) -> str:
    """Full-precision scientific notation (round-trips through float())."""
    return f"{float(x):.16e}"


@dataclass(frozen=True)
class Row:
    sweep_var: str
    sweep_value: float
    scheme: str
    draw: int
    seed: int
    sum_rate_bps: float
    feasible: bool
    iters: int
    wall_ms: float


@dataclass
class Aggregate:
    sweep_var: str
    sweep_value: float
    scheme: str
    draws: int
    feasible_draws: int
    mean: float
    std: float


@dataclass
class Results:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    schemes: tuple = ()
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# one draw

def draw_inputs(config: RunConfig, var: str, value: float, seed: int, fixed_profiles: PairProfileSet | None = None):
    """(scenario, profiles) for one draw of one sweep cell."""
    n = config.num_users_for(var, value)
    sc = config.scenario
    scenario = generate_scenario(n, seed, cell_radius_m=sc.cell_radius_m, shadow_sigma_db=sc.shadow_sigma_db,
                                 budgets=config.budgets_for(var, value))
    if fixed_profiles is not None:
        if fixed_profiles.num_users != n:
            raise ValueError(f"profile file has {fixed_profiles.num_users} users, the draw has {n}")
        return scenario, fixed_profiles
    return scenario, synth_profiles(n, config.profiles.gen_params(), seed=seed)


def solve_draw(config: RunConfig, var: str, value: float, seed: int, schemes,
               fixed_profiles: PairProfileSet | None = None) -> dict:
    """Solve every scheme on one draw; returns ``{scheme: SchemeResult}``."""
    scenario, profiles = draw_inputs(config, var, value, seed, fixed_profiles)
    model = SystemModel(scenario, profiles)
    opt = config.algorithm.ao_options()
    out = {}
    try:
        t0 = time.perf_counter()
        edge_set = static_prune(model)
        prune_ms = (time.perf_counter() - t0) * 1e3
    except InfeasibleDraw as exc:
        edge_set, prune_ms = None, 0.0
        why = str(exc)
    equal = None
    if "equal" in schemes or "proposed" in schemes:
        equal = (solve_equal_allocation(model, opt, edge_set) if edge_set is not None
                 else SchemeResult("equal", 0.0, False, notes=[why]))
        equal.wall_ms += prune_ms
    for name in schemes:
        if name == "equal":
            res = equal
        elif name == "proposed":
            if equal.feasible:
                res = solve_proposed(model, opt, edge_set, start=equal.state)
                res.wall_ms += equal.wall_ms
            else:
                res = SchemeResult("proposed", 0.0, False, wall_ms=equal.wall_ms, notes=list(equal.notes))
        elif name == "channel":
            res = (solve_channel_pairing(model, opt, edge_set) if edge_set is not None
                   else SchemeResult("channel", 0.0, False, notes=[why]))
            res.wall_ms += prune_ms
        elif name == "fdma":
            res = solve_fdma(scenario)
        elif name == "family":
            res = solve_profile_family(scenario, profiles, config.profiles.family_multiplier, opt)
        else:  # pragma: no cover - config validation rejects these
            raise ValueError(f"unknown scheme {name!r}")
        out[name] = res
    return out


def _task(args):
    config, cell_idx, var, value, draw, seed, fixed = args
    results = solve_draw(config, var, value, seed, config.schemes, fixed)
    return cell_idx, draw, [
        Row(var, value, name, draw, seed, r.sum_rate if r.feasible else 0.0, r.feasible, r.iterations,
            r.wall_ms if config.outputs.timing else 0.0)
        for name, r in results.items()
    ]


# ---------------------------------------------------------------------------
# Monte Carlo

def run_monte_carlo(config: RunConfig, threads: int = 1, progress=None) -> Results:
    """Every sweep cell x draw x scheme; rows come back in (cell, scheme, draw) order."""
    fixed = load_profiles(config.profiles.path) if config.profiles.path else None
    seeds = config.scenario.seed_list()
    tasks = [(config, c, var, value, d, s, fixed)
             for c, (var, value) in enumerate(config.cells()) for d, s in enumerate(seeds)]
    done = {}
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for k, (c, d, rows) in enumerate(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * threads)))):
                done[(c, d)] = rows
                if progress:
                    progress(k + 1, len(tasks))
    else:
        for k, t in enumerate(tasks):
            c, d, rows = _task(t)
            done[(c, d)] = rows
            if progress:
                progress(k + 1, len(tasks))
    order = {name: k for k, name in enumerate(config.schemes)}
    rows = sorted((r for rs in done.values() for r in rs),
                  key=lambda r: (_cell_index(config, r), order[r.scheme], r.draw))
    res = Results(rows=rows, schemes=tuple(config.schemes))
    res.aggregates = aggregate(rows, include_infeasible=config.outputs.infeasible_as_zero)
    return res


def _cell_index(config: RunConfig, row: Row) -> int:
    return config.cells().index((row.sweep_var, row.sweep_value))


def aggregate(rows, include_infeasible: bool = False) -> list:
    """Mean and sample standard deviation per (cell, scheme), in first-seen order.

    Infeasible draws are excluded unless ``include_infeasible`` (then they
    count as zero rate). A cell with no usable draw gets NaN statistics.
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.sweep_var, r.sweep_value, r.scheme), []).append(r)
    out = []
    for (var, value, scheme), rs in groups.items():
        vals = np.array([r.sum_rate_bps if r.feasible else 0.0 for r in rs if r.feasible or include_infeasible])
        mean = float(np.mean(vals)) if vals.size else float("nan")
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else (0.0 if vals.size else float("nan"))
        out.append(Aggregate(var, value, scheme, len(rs), sum(r.feasible for r in rs), mean, std))
    return out


# ---------------------------------------------------------------------------
# output files

def _open_for_write(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists() and not os.access(path, os.W_OK):
        raise PermissionError(f"cannot write {path}")
    return path


def emit_csv(results: Results, path, aggregate_path=None) -> tuple[Path, Path]:
    """Row-level CSV at ``path`` and the mean/std file next to it."""
    path = _open_for_write(path)
    agg_path = _open_for_write(aggregate_path or path.with_name(path.stem + "_aggregate.csv"))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_HEADER)
        for r in results.rows:
            w.writerow([r.sweep_var, fmt(r.sweep_value), r.scheme, r.draw, r.seed, fmt(r.sum_rate_bps),
                        int(r.feasible), r.iters, fmt(r.wall_ms)])
    with agg_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for a in results.aggregates:
            w.writerow([a.sweep_var, fmt(a.sweep_value), a.scheme, a.draws, a.feasible_draws, fmt(a.mean), fmt(a.std)])
    return path, agg_path


def read_rows(path) -> list:
    with Path(path).open(newline="") as fh:
        return [Row(d["sweep_var"], float(d["sweep_value"]), d["scheme"], int(d["draw"]), int(d["seed"]),
                    float(d["sum_rate_bps"]), bool(int(d["feasible"])), int(d["iters"]), float(d["wall_ms"]))
                for d in csv.DictReader(fh)]


def read_aggregates(path) -> list:
    with Path(path).open(newline="") as fh:
        return [Aggregate(d["sweep_var"], float(d["sweep_value"]), d["scheme"], int(d["draws"]),
                          int(d["feasible_draws"]), float(d["mean_sum_rate_bps"]), float(d["std_sum_rate_bps"]))
                for d in csv.DictReader(fh)]


_AXIS_LABELS = {
    "power_dbm": ("P_max (dBm)", 1.0),
    "num_users": ("number of users N", 1.0),
    "bandwidth_hz": ("B_max (MHz)", 1e-6),
}

_PLOT_TEMPLATE = '''"""Plots for a Monte Carlo run. Generated; edit PLOTS to restyle."""
import csv
import math
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent
AGGREGATE_CSV = HERE / {aggregate!r}
PLOTS = {plots}


def load():
    cells = defaultdict(dict)
    with AGGREGATE_CSV.open(newline="") as fh:
        for d in csv.DictReader(fh):
            cells[(d["sweep_var"], float(d["sweep_value"]))][d["scheme"]] = (
                float(d["mean_sum_rate_bps"]) / 1e6, float(d["std_sum_rate_bps"]) / 1e6)
    return cells


def line_plot(spec, cells):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    xs = sorted(v for var, v in cells if var == spec["sweep_var"])
    for scheme in spec["schemes"]:
        pts = [(x * spec["x_scale"], *cells[(spec["sweep_var"], x)][scheme])
               for x in xs if scheme in cells[(spec["sweep_var"], x)]]
        pts = [p for p in pts if not math.isnan(p[1])]
        if pts:
            x, m, s = zip(*pts)
            ax.errorbar(x, m, yerr=s, marker="o", capsize=3, label=scheme)
    ax.set_xlim(*spec["xlim"])
    ax.set_ylim(*spec["ylim"])
    ax.set_xlabel(spec["xlabel"])
    ax.set_ylabel("sum rate (Mbps)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(HERE / spec["output"], dpi=150)
    plt.close(fig)


def bar_plot(spec, cells):
    fig, ax = plt.subplots(figsize=(5, 3.6))
    data = cells[(spec["sweep_var"], spec["sweep_value"])]
    names = [s for s in spec["schemes"] if s in data]
    ax.bar(names, [data[s][0] for s in names], yerr=[data[s][1] for s in names], capsize=4)
    ax.set_ylim(*spec["ylim"])
    ax.set_ylabel("sum rate (Mbps)")
    ax.set_title(spec["title"], fontsize=9)
    fig.tight_layout()
    fig.savefig(HERE / spec["output"], dpi=150)
    plt.close(fig)


def main():
    cells = load()
    for spec in PLOTS:
        (line_plot if spec["kind"] == "line" else bar_plot)(spec, cells)
        print("wrote", spec["output"], file=sys.stderr)


if __name__ == "__main__":
    main()
'''


def plot_specs(results: Results) -> list:
    """Declarative plot descriptions; axis ranges come from the data extent."""
    aggs = [a for a in results.aggregates if not np.isnan(a.mean)]
    specs = []
    by_var: dict = {}
    for a in aggs:
        by_var.setdefault(a.sweep_var, []).append(a)

    def y_range(items):
        lo = min(a.mean - a.std for a in items) / 1e6
        hi = max(a.mean + a.std for a in items) / 1e6
        pad = 0.05 * (hi - lo) if hi > lo else 0.05 * max(abs(hi), 1.0)
        return [max(0.0, lo - pad), hi + pad]

    for var, items in by_var.items():
        if var in _AXIS_LABELS:
            label, scale = _AXIS_LABELS[var]
            xs = [a.sweep_value * scale for a in items]
            pad = 0.05 * (max(xs) - min(xs)) if max(xs) > min(xs) else 0.5 * max(abs(xs[0]), 1.0)
            specs.append({
                "kind": "line", "sweep_var": var, "x_scale": scale, "xlabel": label,
                "xlim": [min(xs) - pad, max(xs) + pad], "ylim": y_range(items),
                "schemes": list(results.schemes), "output": f"rate_vs_{var}.png",
            })
        # scheme comparison at every cell of this sweep
        for value in sorted({a.sweep_value for a in items}):
            cell = [a for a in items if a.sweep_value == value]
            specs.append({
                "kind": "bar", "sweep_var": var, "sweep_value": value, "schemes": list(results.schemes),
                "ylim": y_range(cell), "title": f"{var} = {value:g}" if var != "none" else "scheme comparison",
                "output": f"schemes_{var}_{value:g}.png",
            })
    return specs


def emit_plot_script(results: Results, path, aggregate_csv) -> Path:
    """A self-contained matplotlib script that reads only ``aggregate_csv``.

    ``aggregate_csv`` is resolved relative to the script's own directory.
    """
    path = _open_for_write(path)
    agg_rel = os.path.relpath(Path(aggregate_csv).resolve(), path.resolve().parent)
    plots = json.dumps(plot_specs(results), indent=4)
    path.write_text(_PLOT_TEMPLATE.format(aggregate=agg_rel, plots=plots))
    return path


def write_outputs(results: Results, config: RunConfig, out_dir=None) -> dict:
    out = Path(out_dir or config.outputs.dir)
    rows, agg = emit_csv(results, out / config.outputs.rows_csv, out / config.outputs.aggregate_csv)
    script = emit_plot_script(results, out / config.outputs.plot_script, agg)
    return {"rows": rows, "aggregate": agg, "plot_script": script}
