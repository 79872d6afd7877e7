import numpy as np
import pytest

from sfma.profiles import (
    RhoSurface, build_envelope, default_power_grid, drho_ddelta, drho_dp, eval_rho, fit_rho, load_profiles,
    min_delta_for_distortion, pair_delta_lower_bound, sample_grid, save_profiles, synth_profiles,
)

SURF = RhoSurface(a=2.0, b=4.0, d=-3.0, rho_min=0.05, rho_max=0.6)


def naive_rho(s, p, delta):
    return s.rho_min + (s.rho_max - s.rho_min) / (1.0 + np.exp(s.a * p + s.b * delta + s.d))


def test_rho_direct_evaluation():
    assert eval_rho(SURF, 0.5, 0.5) == pytest.approx(0.325, abs=1e-15)


def test_rho_midpoint_and_saturation():
    assert eval_rho(SURF, 1.5, 0.0) == pytest.approx(0.5 * (0.05 + 0.6))
    assert eval_rho(SURF, 1e6, 0.5) == pytest.approx(0.05)
    # no overflow warnings at huge exponents
    with np.errstate(over="raise"):
        assert eval_rho(SURF, 1e300, 1.0) == pytest.approx(0.05)
        assert eval_rho(SURF, 0.0, -1e6) == pytest.approx(0.6)


def test_rho_matches_naive_formula(rng):
    p, dl = rng.uniform(0, 2, 50), rng.uniform(0, 1, 50)
    assert np.allclose(eval_rho(SURF, p, dl), naive_rho(SURF, p, dl), rtol=1e-13)


def test_rho_derivatives_at_midpoint():
    span = SURF.rho_max - SURF.rho_min
    assert drho_dp(SURF, 0.5, 0.5) == pytest.approx(-SURF.a * span / 4)
    assert drho_ddelta(SURF, 0.5, 0.5) == pytest.approx(-SURF.b * span / 4)


def test_rho_derivatives_nonpositive(rng):
    p, dl = rng.uniform(0, 3, 200), rng.uniform(0, 1, 200)
    assert np.all(drho_dp(SURF, p, dl) <= 0)
    assert np.all(drho_ddelta(SURF, p, dl) <= 0)


def test_rho_derivatives_finite_difference(rng):
    h = 1e-6
    for _ in range(10):
        p, dl = rng.uniform(0.1, 2.0), rng.uniform(0.1, 0.9)
        fd_p = (naive_rho(SURF, p + h, dl) - naive_rho(SURF, p - h, dl)) / (2 * h)
        fd_d = (naive_rho(SURF, p, dl + h) - naive_rho(SURF, p, dl - h)) / (2 * h)
        assert drho_dp(SURF, p, dl) == pytest.approx(fd_p, rel=1e-5)
        assert drho_ddelta(SURF, p, dl) == pytest.approx(fd_d, rel=1e-5)


def test_fit_round_trip_noiseless():
    truth = RhoSurface(a=8.0, b=10.0, d=-2.3, rho_min=0.04, rho_max=0.55)
    powers = default_power_grid(1.0, 5)
    deltas = np.array([0.0625, 0.125, 0.25, 0.375, 0.5, 0.75, 1.0])
    grid = sample_grid(truth, powers, deltas)
    fit = fit_rho(grid)
    err = np.abs(eval_rho(fit, powers[:, None], deltas[None, :]) - grid.samples)
    assert err.max() < 1e-6
    assert not fit.degenerate


def test_fit_round_trip_noisy():
    truth = RhoSurface(a=8.0, b=10.0, d=-2.3, rho_min=0.04, rho_max=0.55)
    powers = default_power_grid(1.0, 5)
    deltas = np.linspace(0.0625, 1.0, 9)
    grid = sample_grid(truth, powers, deltas, noise_amplitude=0.01, rng=3)
    fit = fit_rho(grid)
    err = np.abs(eval_rho(fit, powers[:, None], deltas[None, :]) - eval_rho(truth, powers[:, None], deltas[None, :]))
    assert err.max() < 0.02


def test_fit_constant_samples_degenerate():
    from sfma.profiles import RhoSampleGrid
    grid = RhoSampleGrid(np.array([0.1, 0.2, 0.3]), np.array([0.25, 0.5]), np.full((3, 2), 0.3))
    fit = fit_rho(grid)
    assert fit.degenerate
    assert fit.rho_min == fit.rho_max == 0.3
    assert (fit.a, fit.b, fit.d) == (1.0, 1.0, 0.0)


def test_fit_deterministic():
    truth = RhoSurface(a=5.0, b=6.0, d=-1.5, rho_min=0.1, rho_max=0.4)
    grid = sample_grid(truth, default_power_grid(1.0, 5), np.linspace(0.0625, 1, 7), 0.01, rng=1)
    assert fit_rho(grid) == fit_rho(grid)


def test_envelope_suffix_max():
    env = build_envelope([(0.25, 0.004), (0.5, 0.010), (1.0, 0.003)])
    assert env.breakpoints() == [(0.25, 0.010), (0.5, 0.010), (1.0, 0.003)]


def test_envelope_identity_on_monotone(rng):
    xs = np.sort(rng.uniform(0.05, 1, 8))
    ys = np.sort(rng.uniform(0, 0.02, 8))[::-1]
    env = build_envelope(np.column_stack([xs, ys]))
    assert np.allclose(env(xs), ys)


def test_envelope_bounds_samples(rng):
    pts = np.column_stack([rng.uniform(0.05, 1, 20), rng.uniform(0, 0.02, 20)])
    env = build_envelope(pts)
    assert np.all(env(pts[:, 0]) >= pts[:, 1])
    assert np.all(np.diff(env.values) <= 0)


def test_envelope_needs_two_distinct_deltas():
    with pytest.raises(ValueError):
        build_envelope([(0.5, 0.01), (0.5, 0.02)])
    with pytest.raises(ValueError):
        build_envelope([(0.5, 0.01)])


def test_min_delta_segment_inversion():
    env = build_envelope([(0.25, 0.010), (0.5, 0.004), (1.0, 0.003)])
    expected = 0.25 + 0.25 * (0.010 - 0.005) / (0.010 - 0.004)
    assert min_delta_for_distortion(env, 0.005, 0.25) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.45833, abs=1e-5)


def test_min_delta_threshold_cases():
    env = build_envelope([(0.25, 0.010), (0.5, 0.004), (1.0, 0.003)])
    assert min_delta_for_distortion(env, 0.02, 0.25) == 0.25
    assert min_delta_for_distortion(env, 0.001, 0.25) is None


def test_pair_bound_is_max_of_members():
    prof = synth_profiles(4, seed=0)
    e = prof.edge(1, 3)
    dmax = np.full(4, 0.005)
    lo = pair_delta_lower_bound(prof, (1, 3), dmax, 0.0625)
    own = [min_delta_for_distortion(prof.envelopes[e][k], 0.005, 0.0625) for k in (0, 1)]
    assert lo == pytest.approx(max([0.0625] + own))


def test_synth_profiles_shapes_and_ranges():
    prof = synth_profiles(6, seed=4)
    assert prof.num_pairs == 15
    assert np.all((prof.similarity >= 0) & (prof.similarity <= 1))
    assert np.all(prof.rho_min <= prof.rho_max)
    assert prof.distortion(prof.edge(0, 1), 1, 0.5) == prof.envelopes[0][1](0.5)
    with pytest.raises(ValueError):
        prof.distortion(0, 4, 0.5)


def test_profile_file_round_trip(tmp_path):
    prof = synth_profiles(6, seed=4)
    save_profiles(prof, tmp_path / "p.json")
    back = load_profiles(tmp_path / "p.json")
    for name in ("similarity", "a", "b", "d", "rho_min", "rho_max"):
        assert np.array_equal(getattr(back, name), getattr(prof, name))
    assert back.envelopes[3][1].breakpoints() == prof.envelopes[3][1].breakpoints()


def test_family_inflates_interference():
    prof = synth_profiles(4, seed=2)
    fam = prof.with_family(1.5)
    assert np.all(fam.rho_max >= prof.rho_max)
    assert np.allclose(prof.with_family(1.0).rho_min, prof.rho_min)
