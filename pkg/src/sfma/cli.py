"""Command line entry point: ``sfma run | solve | profile | validate``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, RunConfig, config_schema, load_config, parse_config
from .harness import run_monte_carlo, solve_draw, write_outputs
from .profiles import default_power_grid, load_profiles, refit_profiles, save_profiles, synth_profiles


def _schemes(text):
    return [s.strip() for s in text.split(",") if s.strip()] if text else None


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    return cfg.with_overrides(seed=getattr(args, "seed", None), schemes=_schemes(getattr(args, "scheme", None)),
                              out=getattr(args, "out", None))


def cmd_run(args) -> int:
    cfg = _load(args)
    cells = cfg.cells()
    n_tasks = len(cells) * len(cfg.scenario.seed_list())
    print(f"{len(cells)} cell(s) x {len(cfg.scenario.seed_list())} draw(s), schemes: {', '.join(cfg.schemes)}",
          file=sys.stderr)
    t0 = time.perf_counter()
    step = max(1, n_tasks // 20)

    def progress(k, total):
        if k % step == 0 or k == total:
            print(f"  {k}/{total} draws ({time.perf_counter() - t0:.1f} s)", file=sys.stderr)

    res = run_monte_carlo(cfg, threads=args.threads, progress=progress)
    paths = write_outputs(res, cfg)
    print(f"{'sweep':>14} {'value':>12} {'scheme':>9} {'feasible':>9} {'mean Mbps':>10} {'std':>8}")
    for a in res.aggregates:
        print(f"{a.sweep_var:>14} {a.sweep_value:>12g} {a.scheme:>9} {a.feasible_draws:>4}/{a.draws:<4} "
              f"{a.mean / 1e6:>10.3f} {a.std / 1e6:>8.3f}")
    for k, p in paths.items():
        print(f"{k}: {p}", file=sys.stderr)
    return 0


def _state_dict(state):
    return {"pairs": [list(p) for p in state.pairs], "p_w": state.p.tolist(), "b_hz": state.b.tolist(),
            "delta": state.delta.tolist()}


def cmd_solve(args) -> int:
    cfg = _load(args)
    var, value = cfg.cells()[0]
    seed = cfg.scenario.seed_list()[0]
    results = solve_draw(cfg, var, value, seed, cfg.schemes)
    report = {"seed": seed, "sweep_var": var, "sweep_value": value, "schemes": {}}
    for name, r in results.items():
        print(f"[{name}] feasible={r.feasible} sum_rate={r.sum_rate / 1e6:.4f} Mbps iters={r.iterations} "
              f"wall={r.wall_ms:.1f} ms")
        for note in r.notes:
            print(f"    note: {note}")
        entry = {"feasible": r.feasible, "sum_rate_bps": r.sum_rate, "iterations": r.iterations,
                 "wall_ms": r.wall_ms, "notes": list(r.notes)}
        if r.trace is not None:
            print(f"    initial {r.trace.initial / 1e6:.4f} Mbps, termination: {r.trace.termination}")
            for rec in r.trace.records:
                hat = f"{rec.xi_hat / 1e6:.4f}" if rec.xi_hat is not None else "-"
                print(f"    it {rec.n}: xi_c={rec.xi_c / 1e6:.4f} xi_hat={hat} xi={rec.xi / 1e6:.4f} "
                      f"accepted={rec.accepted} delta_kept={rec.delta_kept} reinit={rec.reinit} "
                      f"pairing={rec.pairing_status or '-'} "
                      + " ".join(f"{k}={v * 1e3:.1f}ms" for k, v in rec.timings.items()))
            entry["trace"] = {
                "initial": r.trace.initial, "termination": r.trace.termination,
                "records": [{"n": rec.n, "xi_c": rec.xi_c, "xi_hat": rec.xi_hat, "xi": rec.xi,
                             "accepted": rec.accepted, "delta_kept": rec.delta_kept, "reinit": rec.reinit,
                             "pairing_status": rec.pairing_status, "timings": rec.timings, "duals": rec.duals}
                            for rec in r.trace.records],
            }
        if r.state is not None:
            entry["state"] = _state_dict(r.state)
            print(f"    pairs {list(r.state.pairs)}")
        report["schemes"][name] = entry
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "solve.json").write_text(json.dumps(report, indent=1))
        print(f"trace: {out / 'solve.json'}", file=sys.stderr)
    return 0


def cmd_profile(args) -> int:
    cfg = _load(args)
    n = cfg.scenario.num_users
    seed = cfg.scenario.seed_list()[0]
    if args.input:
        profiles = load_profiles(args.input)
    else:
        profiles = synth_profiles(n, cfg.profiles.gen_params(), seed=seed)
    if args.fit:
        budgets = cfg.budgets_for("none", 0.0)
        powers = default_power_grid(budgets.total_power_watts, profiles.num_users // 2)
        deltas = np.asarray(cfg.profiles.gen_params().delta_grid)
        profiles = refit_profiles(profiles, powers, deltas, args.noise, seed=seed)
    target = Path(args.out) if args.out else Path("profiles.json")
    if target.suffix != ".json":
        target = target / "profiles.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    save_profiles(profiles, target)
    print(f"{profiles.num_pairs} pair profiles for N={profiles.num_users} -> {target}")
    return 0


def cmd_validate(args) -> int:
    if args.schema:
        print(json.dumps(config_schema(), indent=1))
        return 0
    cfg = _load(args)
    print("config OK")
    print(yaml.safe_dump(cfg.model_dump(), sort_keys=False), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfma", description="SFMA pairing and resource-allocation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory"):
        p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        p.add_argument("--seed", type=_u64, help="base seed, overrides the config")
        p.add_argument("--out", help=out_help)
        p.add_argument("--threads", type=int, default=1, help="worker processes for independent draws")
        p.add_argument("--scheme", help="comma-separated schemes, e.g. proposed,equal")

    p = sub.add_parser("run", help="full Monte Carlo sweep, writes CSVs and a plot script")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("solve", help="one draw with a verbose trace")
    common(p, "directory for solve.json")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("profile", help="emit a synthetic profile file, optionally re-fitted")
    common(p, "profile file (.json) or directory")
    p.add_argument("--input", help="start from this profile file instead of generating one")
    p.add_argument("--fit", action="store_true", help="sample every surface on the profiling grid and re-fit it")
    p.add_argument("--noise", type=float, default=0.0, help="uniform sample noise amplitude for --fit")
    p.set_defaults(func=cmd_profile)
    p = sub.add_parser("validate", help="check a configuration and print it with defaults filled in")
    common(p)
    p.add_argument("--schema", action="store_true", help="print the JSON schema instead")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration:\n{exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
