import dataclasses

import numpy as np
import pytest

from sfma.feasibility import InfeasibleDraw, dynamic_edges, static_prune
from sfma.link import SystemModel
from sfma.profiles import build_envelope

from conftest import draw_model, fixed_scenario, flat_profiles

GAINS = [1e-8, 5e-9, 2e-9, 1e-9, 8e-10, 6e-10]


def test_no_pruning_when_all_pairs_feasible():
    model = SystemModel(fixed_scenario(GAINS), flat_profiles(6))
    es = static_prune(model)
    assert len(es) == 15


def test_distortion_floor_prunes_pair():
    prof = flat_profiles(6)
    e = prof.edge(1, 4)
    bad = build_envelope([(0.0625, 0.02), (1.0, 0.009)])  # floor above D_max = 0.005
    envs = list(prof.envelopes)
    envs[e] = (envs[e][0], bad)
    prof = dataclasses.replace(prof, envelopes=tuple(envs))
    es = static_prune(SystemModel(fixed_scenario(GAINS), prof))
    assert e not in es
    assert len(es) == 14


def _budget_model(dec_cycles):
    scen = fixed_scenario(GAINS)
    bud = dataclasses.replace(scen.budgets, dec_cycles=np.asarray(dec_cycles, dtype=float))
    scen = dataclasses.replace(scen, budgets=bud)
    return SystemModel(scen, flat_profiles(6))


def test_time_budget_prunes_all_incident_edges():
    # user 2 needs 0.095 s to decode: tau_bs + tau_dec >= T_max
    model = _budget_model([1e7, 1e7, 9.5e7, 1e7, 1e7, 1e7])
    es = static_prune(model, check_matching=False)
    assert all(2 not in pr for pr in es.pairs(model))
    assert len(es) == 10
    with pytest.raises(InfeasibleDraw):
        static_prune(model)


def test_pruning_brute_force_confirms_infeasibility():
    for seed in range(10):
        model = draw_model(8, seed, distortion_max=0.0018)
        es = static_prune(model, check_matching=False)
        grid = np.linspace(model.budgets.delta_min, 1.0, 200)
        for e in np.flatnonzero(~es.mask):
            i, j = model.edge_i[e], model.edge_j[e]
            env_i, env_j = model.profiles.envelopes[e]
            ok = ((env_i(grid) <= model.budgets.distortion_max[i]) & (env_j(grid) <= model.budgets.distortion_max[j])
                  & (model.time_budget[i] > 0) & (model.time_budget[j] > 0))
            assert not ok.any()


def test_dynamic_edges_empty_below_distortion_bound():
    prof = flat_profiles(6, dist=0.004)
    e = prof.edge(0, 1)
    envs = [(build_envelope([(0.0625, 0.02), (0.5, 0.005), (1.0, 0.001)]),) * 2] * len(prof.pairs)
    prof = dataclasses.replace(prof, envelopes=tuple(envs))
    model = SystemModel(fixed_scenario(GAINS), prof)
    es = static_prune(model)
    assert es.delta_lb.min() == pytest.approx(0.5)
    assert dynamic_edges(model, es, 1.0, 1e7, 0.3).size == 0
    assert e in dynamic_edges(model, es, 1.0, 1e7, 0.6)


def test_dynamic_edges_generous_resources_equal_static_set():
    model = SystemModel(fixed_scenario(GAINS), flat_profiles(6, rho=0.01))
    es = static_prune(model)
    assert np.array_equal(dynamic_edges(model, es, 1.0, 10e6, 1.0), es.edges)


def test_dynamic_edge_rate_exactly_at_floor_retained():
    scen = fixed_scenario([1e-9, 1e-9])
    model = SystemModel(scen, flat_profiles(2, rho=0.05))
    p, b, delta = 0.3, 2e6, 1.0
    r_i, _ = model.pair_rates(np.array([0]), p, b, delta)
    t = model.time_budget[0]
    q = float(r_i[0] * t)
    # nudge Q until the computed floor equals the rate bit for bit
    for _ in range(100):
        floor = q * delta / t
        if floor == r_i[0]:
            break
        q = np.nextafter(q, -np.inf if floor > r_i[0] else np.inf)
    bud = dataclasses.replace(scen.budgets, source_bits=np.array([q, 1.0]))
    model = SystemModel(dataclasses.replace(scen, budgets=bud), flat_profiles(2, rho=0.05))
    assert model.rate_floors(np.array([0]), delta)[0][0] == model.pair_rates(np.array([0]), p, b, delta)[0][0]
    es = static_prune(model)
    assert dynamic_edges(model, es, p, b, delta).tolist() == [0]
    assert dynamic_edges(model, es, p * 0.999, b, delta).size == 0


def test_dynamic_edges_monotone_in_power_and_bandwidth(rng):
    model = draw_model(8, 11)
    es = static_prune(model)
    for _ in range(50):
        p, b, dl = rng.uniform(0.01, 0.5), rng.uniform(2e5, 3e6), rng.uniform(0.1, 1.0)
        base = set(dynamic_edges(model, es, p, b, dl).tolist())
        assert base <= set(dynamic_edges(model, es, 1.5 * p, b, dl).tolist())
        assert base <= set(dynamic_edges(model, es, p, 1.5 * b, dl).tolist())
        assert base <= set(es.edges.tolist())
