"""Per-group physical quantities and the sum-rate objective.

All functions broadcast over numpy arrays so a whole pricing table
(every edge on every group) can be evaluated in one call. A rate of zero
maps to an infinite delay, which every latency check treats as infeasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .profiles import PairProfileSet, pair_delta_lower_bound
from .scenario import Scenario

LN2 = np.log(2.0)
FEAS_TOL = 1e-9


def sinr(p, b, gain_sq, rho, n0):
    """Effective SINR of one member of a superposed pair (half power each)."""
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ValueError("bandwidth must be positive")
    sig = 0.5 * np.asarray(p, dtype=float) * gain_sq
    out = sig / (rho * sig + b * n0)
    return float(out) if np.ndim(out) == 0 else out


def rate_from_sinr(b, gamma):
    out = np.asarray(b, dtype=float) * np.log2(1.0 + np.asarray(gamma, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def user_rate(p, b, gain_sq, rho, n0):
    return rate_from_sinr(b, sinr(p, b, gain_sq, rho, n0))


def tx_delay(q_bits, delta, rate):
    """Q * delta / R; zero or negative rate gives ``inf``."""
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rate > 0, q_bits * np.asarray(delta, dtype=float) / np.where(rate > 0, rate, 1.0), np.inf)
    return float(out) if out.ndim == 0 else out


def e2e_latency(t_i, t_j, tau_bs, tau_dec_i, tau_dec_j):
    out = tau_bs + np.maximum(np.asarray(t_i) + tau_dec_i, np.asarray(t_j) + tau_dec_j)
    return float(out) if np.ndim(out) == 0 else out


def group_energy(p, delta, t_i, t_j, zeta):
    """Communication energy p * max(t_i, t_j) plus zeta * ln(1 / delta)."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValueError("compression ratio must be positive")
    t_max = np.maximum(t_i, t_j)
    # an infinite delay means infinite energy, even at p == 0
    with np.errstate(invalid="ignore"):
        comm = np.where(np.isinf(t_max), np.inf, np.asarray(p, dtype=float) * t_max)
    out = comm - zeta * np.log(delta)
    return float(out) if np.ndim(out) == 0 else out


def residual_time_budget(budgets, user: int) -> float:
    return float(budgets.max_latency_s - budgets.tau_bs - budgets.tau_dec[user])


@dataclass(frozen=True, eq=False)
class PairMetrics:
    sinr_i: np.ndarray
    sinr_j: np.ndarray
    rate_i: np.ndarray
    rate_j: np.ndarray
    delay_i: np.ndarray
    delay_j: np.ndarray
    latency: np.ndarray
    energy: np.ndarray

    @property
    def sum_rate(self):
        return self.rate_i + self.rate_j


class SystemModel:
    """Scenario + profiles with the per-user and per-edge constants cached."""

    def __init__(self, scenario: Scenario, profiles: PairProfileSet):
        if profiles.num_users != scenario.num_users:
            raise ValueError("profiles and scenario disagree on the number of users")
        self.scenario = scenario
        self.profiles = profiles
        self.budgets = bud = scenario.budgets
        self.num_users = scenario.num_users
        self.num_groups = scenario.num_groups
        self.gain_sq = scenario.gain_sq
        self.n0 = bud.noise_psd_w_per_hz
        self.tau_bs = bud.tau_bs
        self.tau_dec = bud.tau_dec
        self.time_budget = bud.time_budget
        self.source_bits = bud.source_bits
        pairs = np.array(profiles.pairs, dtype=int)
        self.edge_i = pairs[:, 0]
        self.edge_j = pairs[:, 1]
        lb = [pair_delta_lower_bound(profiles, pr, bud.distortion_max, bud.delta_min) for pr in profiles.pairs]
        self.delta_lb = np.array([np.inf if v is None else v for v in lb])

    def edge(self, i: int, j: int) -> int:
        return self.profiles.edge(i, j)

    def metrics(self, edges, p, b, delta) -> PairMetrics:
        """Evaluate every pair quantity; arguments broadcast together."""
        e = np.asarray(edges)
        i, j = self.edge_i[e], self.edge_j[e]
        rho = self.profiles.rho(e, p, delta)
        g_i = sinr(p, b, self.gain_sq[i], rho, self.n0)
        g_j = sinr(p, b, self.gain_sq[j], rho, self.n0)
        r_i, r_j = rate_from_sinr(b, g_i), rate_from_sinr(b, g_j)
        t_i = tx_delay(self.source_bits[i], delta, r_i)
        t_j = tx_delay(self.source_bits[j], delta, r_j)
        lat = e2e_latency(t_i, t_j, self.tau_bs, self.tau_dec[i], self.tau_dec[j])
        en = group_energy(p, delta, t_i, t_j, self.budgets.comp_energy_coeff_j)
        return PairMetrics(*(np.asarray(x, dtype=float) for x in (g_i, g_j, r_i, r_j, t_i, t_j, lat, en)))

    def pair_rates(self, edges, p, b, delta):
        e = np.asarray(edges)
        rho = self.profiles.rho(e, p, delta)
        sig = 0.5 * np.asarray(p, dtype=float)
        noise = np.asarray(b, dtype=float) * self.n0
        s_i = sig * self.gain_sq[self.edge_i[e]]
        s_j = sig * self.gain_sq[self.edge_j[e]]
        r_i = b * np.log2(1.0 + s_i / (rho * s_i + noise))
        r_j = b * np.log2(1.0 + s_j / (rho * s_j + noise))
        return r_i, r_j

    def sum_rate(self, edges, p, b, delta):
        r_i, r_j = self.pair_rates(edges, p, b, delta)
        return r_i + r_j

    def rate_floors(self, edges, delta):
        """Latency-induced rate floors Q_u delta / T_u for both members."""
        e = np.asarray(edges)
        i, j = self.edge_i[e], self.edge_j[e]
        with np.errstate(divide="ignore"):
            f_i = np.where(self.time_budget[i] > 0, self.source_bits[i] * delta / self.time_budget[i], np.inf)
            f_j = np.where(self.time_budget[j] > 0, self.source_bits[j] * delta / self.time_budget[j], np.inf)
        return f_i, f_j

    def distortions(self, edges, delta):
        """Envelope distortion of both members for each (edge, delta) entry."""
        e = np.atleast_1d(np.asarray(edges))
        dl = np.broadcast_to(np.asarray(delta, dtype=float), e.shape)
        d_i = np.empty(e.shape)
        d_j = np.empty(e.shape)
        for idx in np.ndindex(e.shape):
            env_i, env_j = self.profiles.envelopes[e[idx]]
            d_i[idx] = env_i(dl[idx])
            d_j[idx] = env_j(dl[idx])
        return d_i, d_j


@dataclass(frozen=True, eq=False)
class AllocationState:
    """Pairing (one pair per group) plus per-group power, bandwidth and delta."""

    pairs: tuple
    p: np.ndarray
    b: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((min(i, j), max(i, j)) for i, j in self.pairs))
        for name in ("p", "b", "delta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_groups(self) -> int:
        return len(self.pairs)

    def edges(self, model: SystemModel) -> np.ndarray:
        return np.array([model.edge(i, j) for i, j in self.pairs], dtype=int)

    def replace(self, **kw) -> "AllocationState":
        fields = dict(pairs=self.pairs, p=self.p, b=self.b, delta=self.delta)
        fields.update(kw)
        return AllocationState(**fields)

    @cached_property
    def _cache(self) -> dict:
        return {}

    def metrics(self, model: SystemModel) -> PairMetrics:
        key = ("metrics", id(model))
        if key not in self._cache:
            self._cache[key] = model.metrics(self.edges(model), self.p, self.b, self.delta)
        return self._cache[key]

    def objective(self, model: SystemModel) -> float:
        return float(np.sum(self.metrics(model).sum_rate))


def objective(state: AllocationState, model: SystemModel) -> float:
    """Sum over groups of the hosted pair's sum rate."""
    return state.objective(model)


def is_perfect_matching(pairs, num_users: int) -> bool:
    seen = [u for pr in pairs for u in pr]
    return len(pairs) * 2 == num_users and sorted(seen) == list(range(num_users)) and all(i != j for i, j in pairs)


@dataclass
class FeasibilityReport:
    """Per-constraint pass flags and normalised slacks (positive = satisfied)."""

    slacks: dict
    passed: dict

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list:
        return [k for k, v in self.passed.items() if not v]


def check_feasible(state: AllocationState, model: SystemModel, tol: float = FEAS_TOL,
                   constraints=None) -> FeasibilityReport:
    """Evaluate the constraints of the joint problem at ``state``.

    Each slack is normalised by its budget. ``constraints`` optionally limits
    the check to a subset of names.
    """
    bud = model.budgets
    slacks: dict = {}
    n = model.num_users
    k = len(state.pairs)

    counts = np.zeros(n, dtype=int)
    for i, j in state.pairs:
        if 0 <= i < n and 0 <= j < n:
            counts[i] += 1
            counts[j] += 1
    slacks["each_user_once"] = -float(np.max(np.abs(counts - 1))) if n else 0.0
    slacks["one_pair_per_group"] = 0.0 if (k == model.num_groups and all(i != j for i, j in state.pairs)) else -1.0
    valid_pairs = slacks["each_user_once"] == 0 and slacks["one_pair_per_group"] == 0

    slacks["power"] = (bud.total_power_watts - float(np.sum(state.p))) / bud.total_power_watts
    slacks["bandwidth"] = (bud.total_bandwidth_hz - float(np.sum(state.b))) / bud.total_bandwidth_hz
    slacks["nonnegative"] = min(float(np.min(state.p)) / bud.total_power_watts if k else 0.0,
                                float(np.min(state.b)) / bud.total_bandwidth_hz if k else 0.0)
    slacks["delta_range"] = min(float(np.min(state.delta - bud.delta_min)), float(np.min(1.0 - state.delta))) if k else 0.0

    if valid_pairs and np.all(state.b > 0) and np.all(state.delta > 0):
        m = state.metrics(model)
        edges = state.edges(model)
        lat = (bud.max_latency_s - m.latency) / bud.max_latency_s
        slacks["latency"] = float(np.min(lat)) if k else 0.0
        slacks["energy"] = (bud.energy_budget_j - float(np.sum(m.energy))) / bud.energy_budget_j
        d_i, d_j = model.distortions(edges, state.delta)
        dist = np.concatenate([(bud.distortion_max[model.edge_i[edges]] - d_i) / bud.distortion_max[model.edge_i[edges]],
                               (bud.distortion_max[model.edge_j[edges]] - d_j) / bud.distortion_max[model.edge_j[edges]]])
        slacks["distortion"] = float(np.min(dist)) if k else 0.0
    else:
        for name in ("latency", "energy", "distortion"):
            slacks[name] = -np.inf

    if constraints is not None:
        slacks = {name: slacks[name] for name in constraints}
    passed = {name: bool(v >= -tol) for name, v in slacks.items()}
    return FeasibilityReport(slacks=slacks, passed=passed)
