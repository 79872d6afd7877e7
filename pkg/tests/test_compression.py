import numpy as np
import pytest

from sfma.compression import (
    DeltaOptions, GroupDelta, dual_energy_update, feasible_delta_interval, optimize_delta,
)
from sfma.link import SystemModel
from sfma.profiles import synth_profiles

from conftest import draw_model, fixed_scenario


def k1_model(gains=(3e-10, 1e-10), seed=1, **kw):
    return SystemModel(fixed_scenario(list(gains), **kw), synth_profiles(2, seed=seed))


def link_objective(model, edge, p, b, delta, lam):
    """Rate minus priced energy recomputed through the link module."""
    m = model.metrics(np.full(np.size(delta), edge), p, b, delta)
    return m.sum_rate - lam * m.energy, m


def test_group_objective_matches_link(model10, rng):
    for _ in range(10):
        e = int(rng.integers(model10.profiles.num_pairs))
        p, b, lam = rng.uniform(0.05, 0.5), rng.uniform(5e5, 3e6), rng.uniform(0, 1e9)
        xs = rng.uniform(0.0625, 1.0, 20)
        g = GroupDelta(model10, e, p, b)
        ref, _ = link_objective(model10, e, p, b, xs, lam)
        assert np.allclose(g.objective(xs, lam), ref, rtol=1e-12)
        assert np.allclose(g.objective(xs, 0.0), model10.sum_rate(e, p, b, xs), rtol=1e-12)


def test_interval_loose_budget_is_distortion_range():
    model = k1_model()
    lo, hi = feasible_delta_interval(model, 0, 1.0, 10e6)[0]
    assert lo == pytest.approx(model.delta_lb[0])
    assert hi == 1.0


def test_interval_boundary_matches_grid():
    # weak pair on a narrow band: latency binds below delta = 1
    model = k1_model(gains=(2e-11, 1e-11))
    p, b = 0.5, 2e6
    ivs = feasible_delta_interval(model, 0, p, b)
    assert len(ivs) == 1 and ivs[0][1] < 1.0
    xs = np.linspace(model.delta_lb[0], 1.0, 10_000)
    _, m = link_objective(model, 0, p, b, xs, 0.0)
    ok = xs[m.latency <= model.budgets.max_latency_s]
    assert abs(ivs[0][0] - ok.min()) < 1e-4
    assert abs(ivs[0][1] - ok.max()) < 1e-4
    # the returned end points are themselves latency-feasible
    _, m_end = link_objective(model, 0, p, b, np.array(ivs[0]), 0.0)
    assert np.all(m_end.latency <= model.budgets.max_latency_s)


def test_interval_empty_when_incompatible():
    model = k1_model(gains=(1e-13, 1e-13))
    assert feasible_delta_interval(model, 0, 0.1, 1e5) == []
    assert optimize_delta(model, [0], [0.1], [1e5]).delta is None


@pytest.mark.parametrize("lam", [0.0, 3e8, 1e9, 3e9])
def test_group_solve_matches_dense_grid(model10, rng, lam):
    for _ in range(5):
        e = int(rng.integers(model10.profiles.num_pairs))
        g = GroupDelta(model10, e, 0.2, 2e6)
        if not g.intervals():
            continue
        x, v = g.solve(lam)
        xs = np.concatenate([np.linspace(lo, hi, 10_000) for lo, hi in g.intervals()])
        vals = g.objective(xs, lam)
        assert v >= vals.max() - 1e-6 * abs(vals.max())
        assert any(lo <= x <= hi for lo, hi in g.intervals())


def test_lambda_zero_monotone_rate_picks_upper_end():
    model = k1_model()
    g = GroupDelta(model, 0, 1.0, 10e6)
    assert g.solve(0.0)[0] == pytest.approx(1.0)


def test_large_lambda_drives_to_energy_minimiser():
    model = k1_model()
    g = GroupDelta(model, 0, 1.0, 10e6)
    xs = np.linspace(*g.intervals()[0], 10_000)
    e_min_at = xs[np.argmin(g.evaluate(xs)[4])]
    assert g.solve(1e15)[0] == pytest.approx(e_min_at, abs=2e-4)


def test_newton_never_worse_than_grid_seed(model10, rng):
    for _ in range(20):
        e = int(rng.integers(model10.profiles.num_pairs))
        g = GroupDelta(model10, e, 0.2, 2e6)
        if not g.intervals():
            continue
        lam = rng.uniform(0, 3e9)
        xs = np.concatenate([np.linspace(lo, hi, 32) for lo, hi in g.intervals()])
        assert g.solve(lam)[1] >= g.objective(xs, lam).max() - 1e-9


def test_dual_energy_update():
    assert dual_energy_update(1.0, 2.0, 0.0, 0.1) == pytest.approx(1.2)
    assert dual_energy_update(0.7, 0.25, 0.25, 0.1) == 0.7
    assert dual_energy_update(0.0, 0.1, 0.25, 0.1) == 0.0


def test_slack_budget_keeps_lambda_zero():
    model = k1_model(energy_budget_j=100.0)
    res = optimize_delta(model, [0], [1.0], [10e6])
    assert res.lam == 0.0 and res.status == "slack"
    assert res.delta[0] == pytest.approx(GroupDelta(model, 0, 1.0, 10e6).solve(0.0)[0])


@pytest.mark.parametrize("e_max", [0.03, 0.02])
def test_k1_binding_budget_matches_brute_force(e_max):
    model = k1_model(energy_budget_j=e_max)
    res = optimize_delta(model, [0], [1.0], [10e6])
    assert all(lam >= 0 for lam in res.lam_history)
    xs = np.linspace(model.delta_lb[0], 1.0, 10_001)
    _, m = link_objective(model, 0, 1.0, 10e6, xs, 0.0)
    ok = (m.energy <= e_max) & (m.latency <= model.budgets.max_latency_s)
    best = xs[np.argmax(np.where(ok, m.sum_rate, -np.inf))]
    assert abs(res.delta[0] - best) < 1e-4
    _, m_res = link_objective(model, 0, 1.0, 10e6, res.delta, 0.0)
    assert m_res.energy[0] <= e_max
    # budget is (approximately) exhausted when the multiplier is active
    assert abs(m_res.energy[0] - e_max) < 1e-3 * e_max


def test_optimize_delta_respects_intervals(rng):
    for seed in range(5):
        model = draw_model(8, seed)
        edges = rng.choice(model.profiles.num_pairs, 4, replace=False)
        p, b = np.full(4, 0.25), np.full(4, 2.5e6)
        res = optimize_delta(model, edges, p, b, DeltaOptions())
        if res.delta is None:
            continue
        for e, x in zip(edges, res.delta):
            ivs = feasible_delta_interval(model, e, 0.25, 2.5e6)
            assert any(lo - 1e-12 <= x <= hi + 1e-12 for lo, hi in ivs)
        m = model.metrics(edges, p, b, res.delta)
        assert m.energy.sum() <= model.budgets.energy_budget_j
