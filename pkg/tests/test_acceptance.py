"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines
inline; they are also repeated in the terminal summary. Criteria backed by
Monte Carlo runs are marked ``slow`` (about ten minutes together on one core).
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from sfma.compression import GroupDelta
from sfma.config import load_config, parse_config
from sfma.feasibility import static_prune
from sfma.harness import run_monte_carlo, solve_draw, write_outputs
from sfma.link import AllocationState, SystemModel, check_feasible
from sfma.matching import max_weight_perfect_matching
from sfma.orchestrator import fdma_sum_rate
from sfma.pairing import PricingTable, run_pairing, validate_pairing
from sfma.powerbw import (
    build_surrogate, r_minus, r_minus_grad, r_plus, solve_convex_subproblem,
)
from sfma.profiles import (
    RhoSurface, candidate_pairs, default_power_grid, eval_rho, fit_rho, rho_partials, rho_values, sample_grid,
    synth_profiles,
)
from sfma.scenario import generate_scenario, make_budgets

import conftest
from conftest import CLUSTER, draw_model

ROOT = Path(__file__).resolve().parents[1]


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared 100-draw run at N = 10, 30 dBm (criteria 1, 8, 9)

@pytest.fixture(scope="module")
def main_run():
    cfg = parse_config({"scenario": {"num_users": 10, "draws": 100, "seed": 0}})
    out = {"proposed": [], "equal": [], "channel": [], "traces": [], "feasible": [], "ao_seconds": 0.0}
    for seed in cfg.scenario.seed_list():
        t0 = time.perf_counter()
        res = solve_draw(cfg, "none", 0.0, seed, ["equal", "proposed"])
        out["ao_seconds"] += time.perf_counter() - t0
        ch = solve_draw(cfg, "none", 0.0, seed, ["channel"])["channel"]
        eq, pr = res["equal"], res["proposed"]
        out["equal"].append(eq.sum_rate if eq.feasible else np.nan)
        out["proposed"].append(pr.sum_rate if pr.feasible else np.nan)
        out["channel"].append(ch.sum_rate if ch.feasible else np.nan)
        out["traces"] += [r.trace for r in (eq, pr, ch) if r.trace is not None]
        if pr.feasible:
            model = SystemModel(generate_scenario(10, seed, budgets=cfg.budgets_for("none", 0.0)),
                                synth_profiles(10, cfg.profiles.gen_params(), seed=seed))
            out["feasible"].append(check_feasible(pr.state, model).ok)
    for k in ("proposed", "equal", "channel"):
        out[k] = np.array(out[k])
    return out


@pytest.mark.slow
def test_criterion_01_monotone_objective(main_run):
    bad = sum(not tr.is_monotone(1e-9) for tr in main_run["traces"])
    t = main_run["ao_seconds"]
    ok = bad == 0 and t < 60.0 and all(main_run["feasible"])
    report(1, ok, f"{len(main_run['traces'])} traces, {bad} non-monotone, "
                  f"{sum(main_run['feasible'])}/{len(main_run['feasible'])} final states feasible, AO time {t:.1f} s")


# ---------------------------------------------------------------------------

def _random_state(rng):
    n = int(rng.choice([4, 6, 8, 10]))
    model = draw_model(n, int(rng.integers(1 << 30)))
    users = rng.permutation(n)
    pairs = [tuple(sorted((int(users[2 * k]), int(users[2 * k + 1])))) for k in range(n // 2)]
    k = n // 2
    p = rng.dirichlet(np.ones(k)) * model.budgets.total_power_watts
    b = rng.dirichlet(np.ones(k)) * model.budgets.total_bandwidth_hz
    delta = rng.uniform(model.budgets.delta_min, 1.0, k)
    return model, pairs, p, b, delta


def test_criterion_02_surrogate_tangency():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        model, pairs, p, b, delta = _random_state(rng)
        edges = [model.edge(*pr) for pr in pairs]
        sur = build_surrogate(model, edges, delta, p, b)
        true = AllocationState(pairs=pairs, p=p, b=b, delta=delta).objective(model)
        worst = max(worst, abs(sur.value(p, b) - true) / abs(true))
    report(2, worst < 1e-9, f"1000 expansion points, max relative gap {worst:.2e}")


# ---------------------------------------------------------------------------

def _k2_instance(seed):
    rng = np.random.default_rng(seed)
    gains = np.sort(rng.uniform(2e-11, 2e-9, 4))[::-1]
    scen = generate_scenario(4, seed)
    scen = type(scen)(positions=scen.positions, gain_sq=gains, budgets=scen.budgets)
    model = SystemModel(scen, synth_profiles(4, CLUSTER, seed=seed))
    edges = [model.edge(0, 3), model.edge(1, 2)]
    delta = rng.uniform(0.4, 1.0, 2)
    p0 = rng.dirichlet([4, 4]) * model.budgets.total_power_watts * 0.95
    b0 = rng.dirichlet([4, 4]) * model.budgets.total_bandwidth_hz * 0.95
    return model, build_surrogate(model, edges, delta, p0, b0)


def _dense_best(model, sur, n=200, samples=40_000, seed=0):
    """Grid over exact budget splits plus random interior points of the budget set."""
    P, B, E = model.budgets.total_power_watts, model.budgets.total_bandwidth_hz, model.budgets.energy_budget_j
    frac = np.linspace(1e-4, 1 - 1e-4, n)
    pp = np.stack([frac * P, (1 - frac) * P], 1)[:, None, :].repeat(n, 1).reshape(-1, 2)
    bb = np.stack([frac * B, (1 - frac) * B], 1)[None, :, :].repeat(n, 0).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    pr = rng.dirichlet([1, 1, 1], samples)[:, :2] * P
    br = rng.dirichlet([1, 1, 1], samples)[:, :2] * B
    p, b = np.vstack([pp, pr]), np.vstack([bb, br])
    q = sur.q_icpt[None, :] + sur.q_slope[None, :] * p
    z = (sur.alpha_p[None] * p[:, :, None] + sur.beta_p[None]) / b[:, :, None]
    rp = b[:, :, None] / np.log(2) * np.log1p(z)
    dp, db = sur.grad_m
    lin = sur.val_m[None] + dp[None] * (p - sur.p0)[:, :, None] + db[None] * (b - sur.b0)[:, :, None]
    lb = rp - lin
    ok = (np.all(q >= 0, axis=1) & (np.sum(p * sur.t_hat, axis=1) + sur.comp_energy <= E)
          & np.all(lb >= sur.floors[None], axis=(1, 2)))
    return float(np.max(np.where(ok, lb.sum(axis=(1, 2)), -np.inf)))


def test_criterion_03_convex_subproblem_oracle():
    worst_gap, worst_res, fails = -np.inf, 0.0, 0
    for seed in range(20):
        model, sur = _k2_instance(seed)
        res = solve_convex_subproblem(model, sur, [1.0, 1.0])
        best = _dense_best(model, sur, seed=seed)
        if not res.ok or not np.isfinite(best):
            fails += 1
            continue
        got = sur.value(res.p, res.b)
        worst_gap = max(worst_gap, (best - got) / abs(best))
        worst_res = max(worst_res, res.residual)
    ok = fails == 0 and worst_gap <= 1e-3 and worst_res < 1e-6
    report(3, ok, f"20 K=2 instances, worst shortfall vs dense grid {worst_gap:.2e} relative, "
                  f"max first-order residual {worst_res:.2e}, {fails} failures")


# ---------------------------------------------------------------------------

def test_criterion_04_delta_oracle():
    rng = np.random.default_rng(4)
    worst, done = 0.0, 0
    while done < 50:
        model = draw_model(10, int(rng.integers(1 << 30)))
        e = int(rng.integers(model.profiles.num_pairs))
        g = GroupDelta(model, e, rng.uniform(0.05, 0.5), rng.uniform(5e5, 4e6))
        if not g.intervals():
            continue
        lam = rng.choice([0.0, rng.uniform(0, 3e9)])
        _, v = g.solve(lam)
        xs = np.concatenate([np.linspace(lo, hi, 10_000) for lo, hi in g.intervals()])
        ref = float(np.max(g.objective(xs, lam)))
        worst = max(worst, (ref - v) / abs(ref))
        done += 1
    report(4, worst <= 1e-6, f"50 groups, worst shortfall vs 10,000-point scan {max(worst, 0.0):.2e} relative")


# ---------------------------------------------------------------------------

def test_criterion_05_pruning_soundness():
    pruned, violations = 0, 0
    for seed in range(50):
        model = draw_model(8, 500 + seed, distortion_max=0.0018)
        es = static_prune(model, check_matching=False)
        grid = np.linspace(model.budgets.delta_min, 1.0, 200)
        for e in np.flatnonzero(~es.mask):
            pruned += 1
            i, j = model.edge_i[e], model.edge_j[e]
            env_i, env_j = model.profiles.envelopes[e]
            ok = ((env_i(grid) <= model.budgets.distortion_max[i]) & (env_j(grid) <= model.budgets.distortion_max[j])
                  & (model.time_budget[i] > 0) & (model.time_budget[j] > 0))
            violations += int(ok.any())
    report(5, violations == 0 and pruned > 0, f"50 scenarios, {pruned} pruned edges, {violations} found feasible")


# ---------------------------------------------------------------------------

def _table(n, k, rate, feasible):
    m = len(candidate_pairs(n))
    z = np.zeros((m, k))
    return PricingTable(num_users=n, pairs=np.array(candidate_pairs(n)), rate=rate, energy=z, dist_i=z, dist_j=z,
                        feasible=feasible, energy_max=1.0, dist_max=1.0)


def _forced_fallback(rng, n):
    """A best matching that no group assignment can host, and one that fits."""
    k = n // 2
    pairs = candidate_pairs(n)
    m = len(pairs)
    rate = rng.uniform(1, 2, (m, k))
    feas = np.zeros((m, k), bool)
    perm = rng.permutation(n)
    good = [tuple(sorted((int(perm[2 * g]), int(perm[2 * g + 1])))) for g in range(k)]
    for g, pr in enumerate(good):
        feas[pairs.index(pr), g] = True
    bad = [tuple(sorted((int(perm[(2 * g + 1) % n]), int(perm[(2 * g + 2) % n])))) for g in range(k)]
    for pr in bad:
        row = pairs.index(pr)
        feas[row, 0] = True
        rate[row, 0] = 50.0
    return _table(n, k, rate, feas)


def _hostable(table):
    """Whether any perfect matching can be assigned one-to-one to feasible groups."""
    n, k = table.num_users, table.rate.shape[1]
    row_of = {tuple(int(u) for u in pr): r for r, pr in enumerate(table.pairs)}
    for mt in _enumerate(list(range(n))):
        adj = csr_matrix(np.array([table.feasible[row_of[pr]] for pr in mt], dtype=np.int8))
        if np.all(maximum_bipartite_matching(adj, perm_type="column") >= 0) and adj.shape == (k, k):
            return True
    return False


def test_criterion_06_pairing_structure():
    rng = np.random.default_rng(6)
    violations, statuses = 0, {}
    for t in range(1000):
        n = int(rng.choice([4, 6, 8, 10]))
        k, m = n // 2, n * (n - 1) // 2
        kind = t % 3
        if kind == 2:
            table = _forced_fallback(rng, n)
        else:
            feas = rng.random((m, k)) < rng.uniform(0.3, 1.0)
            rate = rng.uniform(1, 10, (m, k))
            if kind == 1:  # a handful of pairs dominate every group
                rate[rng.choice(m, 2, replace=False)] += 100.0
            table = _table(n, k, rate, feas)
        res = run_pairing(table)
        statuses[res.status] = statuses.get(res.status, 0) + 1
        if res.pairs is None:
            if res.status != "failed" or _hostable(table):
                violations += 1
            continue
        used = sorted(u for pr in res.pairs for u in pr)
        if used != list(range(n)) or len(res.pairs) != k or not validate_pairing(table, res.rows):
            violations += 1
    summary = ", ".join(f"{k} {v}" for k, v in sorted(statuses.items()))
    ok = violations == 0 and statuses.get("fallback", 0) > 0 and statuses.get("stage2", 0) > 0
    report(6, ok, f"1000 instances ({summary}), {violations} structural violations")


# ---------------------------------------------------------------------------

def _enumerate(nodes):
    if not nodes:
        yield []
        return
    for k in range(1, len(nodes)):
        for tail in _enumerate(nodes[1:k] + nodes[k + 1:]):
            yield [(nodes[0], nodes[k])] + tail


def test_criterion_07_matching_exactness():
    rng = np.random.default_rng(7)
    mismatches = 0
    for n in (4, 6, 8, 10):
        all_m = list(_enumerate(list(range(n))))
        for _ in range(100):
            w = {(i, j): float(rng.normal()) for i in range(n) for j in range(i + 1, n)}
            ref = max(sum(w[pr] for pr in mt) for mt in all_m)
            got = max_weight_perfect_matching(range(n), w)
            mismatches += int(got is None or abs(got[1] - ref) > 1e-9)
    report(7, mismatches == 0, f"N in 4..10, 100 weight draws each, {mismatches} mismatches vs (N-1)!! enumeration")


# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_dominance(main_run):
    pr, eq = main_run["proposed"], main_run["equal"]
    both = np.isfinite(pr) & np.isfinite(eq)
    bad = int(np.sum(pr[both] < eq[both] * (1 - 1e-6)))
    report(8, bad == 0 and both.sum() > 0, f"{both.sum()} draws, proposed below equal on {bad}")


@pytest.mark.slow
def test_criterion_09_trends(main_run):
    pr, eq, ch = (np.nanmean(main_run[k]) / 1e6 for k in ("proposed", "equal", "channel"))
    fdma = []
    for n in (6, 8, 10, 12, 14, 16):
        fdma.append(np.mean([fdma_sum_rate(generate_scenario(n, s, budgets=make_budgets(n))) for s in range(100)]))
    fdma = np.array(fdma) / 1e6
    spread = (fdma.max() - fdma.min()) / fdma.mean()
    ok = pr > eq > ch and spread < 0.10
    report(9, ok, f"means proposed {pr:.2f} > equal {eq:.2f} > channel {ch:.2f} Mbps; "
                  f"FDMA over N=6..16 {fdma.min():.1f}-{fdma.max():.1f} Mbps, spread {100 * spread:.1f}%")


# ---------------------------------------------------------------------------

def test_criterion_10_rho_fit_recovery():
    rng = np.random.default_rng(10)
    powers = default_power_grid(1.0, 5)
    deltas = np.linspace(0.0625, 1.0, 9)
    clean, noisy = 0.0, 0.0
    for _ in range(20):
        lo = rng.uniform(0.01, 0.2)
        truth = RhoSurface(a=rng.uniform(4, 16), b=rng.uniform(4, 16), d=rng.uniform(-3, -1),
                           rho_min=lo, rho_max=lo + rng.uniform(0.2, 0.6))
        ref = eval_rho(truth, powers[:, None], deltas[None, :])
        fit = fit_rho(sample_grid(truth, powers, deltas))
        clean = max(clean, float(np.max(np.abs(eval_rho(fit, powers[:, None], deltas[None, :]) - ref))))
        fit = fit_rho(sample_grid(truth, powers, deltas, noise_amplitude=0.01, rng=rng))
        noisy = max(noisy, float(np.max(np.abs(eval_rho(fit, powers[:, None], deltas[None, :]) - ref))))
    report(10, clean < 1e-6 and noisy < 0.02, f"20 surfaces, noiseless max error {clean:.1e}, "
                                              f"noise 0.01 max truth error {noisy:.4f}")


# ---------------------------------------------------------------------------

def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def test_criterion_11_finite_differences():
    rng = np.random.default_rng(11)
    worst = {}

    def track(name, a, b):
        err = _rel(a, b)
        worst[name] = max(worst.get(name, 0.0), err if np.isfinite(err) else np.inf)

    n0 = 4e-21
    model = draw_model(10, 11)
    for _ in range(100):
        a, b_, d = rng.uniform(4, 16), rng.uniform(4, 16), rng.uniform(-3, -1)
        lo, hi = rng.uniform(0.01, 0.2), rng.uniform(0.3, 0.7)
        p, dl = rng.uniform(0.05, 0.5), rng.uniform(0.1, 0.9)
        gp, gd = rho_partials(a, b_, d, lo, hi, p, dl)
        h = 1e-6
        track("rho_p", gp, (rho_values(a, b_, d, lo, hi, p + h, dl) - rho_values(a, b_, d, lo, hi, p - h, dl)) / (2 * h))
        track("rho_delta", gd, (rho_values(a, b_, d, lo, hi, p, dl + h)
                                - rho_values(a, b_, d, lo, hi, p, dl - h)) / (2 * h))

        # r- gradient
        # interior: the interference product q = t + s p stays positive
        g, s, t = rng.uniform(1e-11, 1e-8), rng.uniform(0.05, 0.5), rng.uniform(0.0, 0.05)
        pw, bw = rng.uniform(0.1, 1), rng.uniform(1e5, 1e7)
        f = lambda pp, bb: r_minus(pp, bb, g, t + s * pp, n0)  # noqa: E731
        dp, db = r_minus_grad(bw, g, t + s * pw, s, n0)
        hp, hb = 1e-6 * pw, 1e-6 * bw
        track("r_minus_p", dp, (f(pw + hp, bw) - f(pw - hp, bw)) / (2 * hp))
        track("r_minus_b", db, (f(pw, bw + hb) - f(pw, bw - hb)) / (2 * hb))

        # surrogate (r+ minus linearised r-) gradients
        k = 5
        edges = rng.choice(model.profiles.num_pairs, k, replace=False)
        p0 = rng.dirichlet(np.ones(k)) * 0.9
        b0 = rng.dirichlet(np.ones(k)) * 9e6
        sur = build_surrogate(model, edges, rng.uniform(0.2, 1, k), p0, b0)
        pq, bq = p0 * rng.uniform(0.8, 1.2, k), b0 * rng.uniform(0.8, 1.2, k)
        d_p, d_b, _ = sur.rate_bound_grad(pq, bq)
        hp, hb = 1e-6 * pq[0], 1e-6 * bq[0]
        ep = np.zeros(k)
        ep[0] = 1.0
        fd_p = (sur.rate_bounds(pq + hp * ep, bq) - sur.rate_bounds(pq - hp * ep, bq))[0] / (2 * hp)
        fd_b = (sur.rate_bounds(pq, bq + hb * ep) - sur.rate_bounds(pq, bq - hb * ep))[0] / (2 * hb)
        for m in range(2):
            track("surrogate_p", d_p[0, m], fd_p[m])
            track("surrogate_b", d_b[0, m], fd_b[m])
        # decomposition: with q = rho p, r+ - r- is the exact rate
        rho = rng.uniform(0, 0.5)
        sinr = (pw / 2) * g / (rho * (pw / 2) * g + bw * n0)
        track("rate_split", float(r_plus(pw, bw, g, rho * pw, n0) - r_minus(pw, bw, g, rho * pw, n0)),
              bw * np.log2(1 + sinr))

        # stationarity terms of the delta subproblem
        e = int(rng.integers(model.profiles.num_pairs))
        grp = GroupDelta(model, e, rng.uniform(0.1, 0.5), rng.uniform(5e5, 4e6))
        x, lam = rng.uniform(0.15, 0.95), rng.uniform(0, 3e9)
        hx = 1e-6
        dom = np.argmax(grp.evaluate(np.array([x - hx, x, x + hx]))[2], axis=0)
        if np.all(dom == dom[1]):
            fd = (grp.objective(x + hx, lam) - grp.objective(x - hx, lam))[0] / (2 * hx)
            track("delta_objective", float(grp.gradient(x, lam)[0]), fd)
    top = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(11, top < 1e-5, f"100 points each, worst relative error: {detail}")


# ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_12_performance(tmp_path):
    cfg = parse_config({"scenario": {"num_users": 16, "draws": 1, "seed": 16}})
    t0 = time.perf_counter()
    res = solve_draw(cfg, "none", 0.0, 16, ["equal", "proposed"])
    t16 = time.perf_counter() - t0
    bench = load_config(ROOT / "configs" / "benchmark.yaml")
    cells, draws = len(bench.cells()), len(bench.scenario.seed_list())
    t0 = time.perf_counter()
    out = run_monte_carlo(bench)
    write_outputs(out, bench, tmp_path)
    tb = time.perf_counter() - t0
    ok = t16 < 10.0 and tb < 600.0 and res["proposed"].feasible
    report(12, ok, f"N=16 solve {t16:.2f} s; benchmark ({len(bench.sweeps)} sweeps, {cells} cells x {draws} draws, "
                   f"{len(bench.schemes)} schemes) {tb:.0f} s")
