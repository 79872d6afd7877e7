import numpy as np
import pytest

from sfma.link import SystemModel
from sfma.profiles import PairProfileSet, ProfileGenParams, build_envelope, candidate_pairs, synth_profiles
from sfma.scenario import Scenario, generate_scenario, make_budgets

CLUSTER = ProfileGenParams(similarity_mode="cluster")


def flat_profiles(n, rho=0.0, dist=0.001, a=1.0, b=1.0, d=0.0, rho_max=None, similarity=0.5):
    """Profile set with identical surfaces and flat distortion envelopes on every pair."""
    m = len(candidate_pairs(n))
    env = build_envelope([(0.0625, dist), (1.0, dist)])
    hi = rho if rho_max is None else rho_max
    return PairProfileSet(
        num_users=n, similarity=np.full(m, similarity), a=np.full(m, a), b=np.full(m, b), d=np.full(m, d),
        rho_min=np.full(m, rho), rho_max=np.full(m, hi), envelopes=tuple((env, env) for _ in range(m)),
    )


def fixed_scenario(gains, **budget_kw):
    gains = np.asarray(gains, dtype=float)
    n = gains.size
    return Scenario(positions=np.zeros((n, 2)), gain_sq=gains, budgets=make_budgets(n, **budget_kw))


def draw_model(n, seed, gen=CLUSTER, **budget_kw):
    scen = generate_scenario(n, seed, budgets=make_budgets(n, **budget_kw))
    return SystemModel(scen, synth_profiles(n, gen, seed=seed))


@pytest.fixture
def model10():
    return draw_model(10, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
