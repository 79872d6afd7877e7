"""Outer alternating loop and the comparison schemes.

One outer iteration runs the compression-ratio block, the power-bandwidth
block, then the pairing block; a changed pairing is re-optimised over delta
and (p, b) and kept only if it is feasible and does not lower the sum rate.
Every accepted objective is therefore at least the previous one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .compression import DeltaOptions, GroupDelta, optimize_delta
from .feasibility import FeasibleEdgeSet, InfeasibleDraw, static_prune
from .link import AllocationState, SystemModel, check_feasible, rate_from_sinr
from .matching import max_weight_perfect_matching
from .pairing import PairingDuals, PairingOptions, optimize_pairing
from .powerbw import PBOptions, equal_split, optimize_power_bandwidth
from .profiles import PairProfileSet
from .scenario import Scenario

SCHEMES = ("proposed", "equal", "channel", "fdma", "family")


@dataclass(frozen=True)
class AOOptions:
    eps: float = 1e-3                 # relative change of the accepted objective
    max_iter: int = 20
    optimize_pb: bool = True
    optimize_pairing: bool = True
    delta: DeltaOptions = field(default_factory=DeltaOptions)
    pb: PBOptions = field(default_factory=PBOptions)
    pairing: PairingOptions = field(default_factory=PairingOptions)


@dataclass
class IterationRecord:
    n: int
    xi_c: float                       # after the delta and (p, b) blocks
    xi_hat: float | None              # refined candidate, if one was built
    xi: float                         # accepted value
    accepted: bool                    # candidate pairing adopted
    delta_kept: bool = False          # delta block fell back to the previous delta
    reinit: bool = False              # candidate refined from the equal split
    pairing_status: str = ""
    timings: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)


@dataclass
class SolveTrace:
    initial: float
    records: list = field(default_factory=list)
    termination: str = ""
    notes: list = field(default_factory=list)

    @property
    def accepted(self) -> list:
        return [self.initial] + [r.xi for r in self.records]

    def is_monotone(self, rel_tol: float = 1e-9) -> bool:
        seq = self.accepted
        return all(b >= a - rel_tol * max(1.0, abs(a)) for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# initial tuple

def usable_edges(model: SystemModel, edge_set: FeasibleEdgeSet, p_k: float, b_k: float) -> np.ndarray:
    """Static edges with a nonempty feasible delta set at group resources (p_k, b_k)."""
    return np.array([e for e in edge_set.edges if GroupDelta(model, e, p_k, b_k).intervals()], dtype=int)


def _delta_for(model: SystemModel, pairs, p, b, options: DeltaOptions, lam0: float = 0.0):
    state = AllocationState(pairs=pairs, p=p, b=b, delta=np.ones(len(pairs)))
    res = optimize_delta(model, state.edges(model), p, b, options, lam0)
    if not res.feasible:
        return None, res
    cand = state.replace(delta=res.delta)
    return (cand if check_feasible(cand, model).ok else None), res


def initial_feasible_tuple(model: SystemModel, edge_set: FeasibleEdgeSet | None = None,
                           options: DeltaOptions | None = None) -> AllocationState:
    """Equal split plus a similarity-maximising feasible pairing and its deltas.

    Raises ``InfeasibleDraw`` when no such tuple exists.
    """
    edge_set = edge_set or static_prune(model)
    p, b = equal_split(model)
    usable = usable_edges(model, edge_set, p[0], b[0])
    weights = {(int(model.edge_i[e]), int(model.edge_j[e])): float(model.profiles.similarity[e]) for e in usable}
    res = max_weight_perfect_matching(range(model.num_users), weights)
    if res is None:
        raise InfeasibleDraw("no perfect matching over edges usable at the equal split")
    state, _ = _delta_for(model, res[0], p, b, options or DeltaOptions())
    if state is None:
        raise InfeasibleDraw("equal-split tuple violates the energy budget")
    return state


# ---------------------------------------------------------------------------
# block helpers

def _continuous_blocks(model, state: AllocationState, opt: AOOptions, lam0: float, xi_floor: float | None):
    """delta block then (p, b) block. Returns (state, lam, delta_kept) or None if delta fails."""
    res = optimize_delta(model, state.edges(model), state.p, state.b, opt.delta, lam0)
    delta_kept = False
    if res.feasible:
        cand = state.replace(delta=res.delta)
        ok = check_feasible(cand, model).ok
        # keep the previous delta when the Lagrangian step would lower the sum rate
        if ok and (xi_floor is None or cand.objective(model) >= xi_floor):
            state = cand
        elif xi_floor is None:
            return None
        else:
            delta_kept = True
    elif xi_floor is None:
        return None
    else:
        delta_kept = True
    if opt.optimize_pb:
        pb = optimize_power_bandwidth(model, state.pairs, state.delta, state.p, state.b, opt.pb)
        state = state.replace(p=pb.p, b=pb.b)
    return state, res.lam, delta_kept


def run_alternating(model: SystemModel, state: AllocationState, options: AOOptions | None = None,
                    edge_set: FeasibleEdgeSet | None = None, duals: PairingDuals | None = None):
    """Alternating optimisation from a feasible tuple. Returns (state, trace, duals)."""
    opt = options or AOOptions()
    edge_set = edge_set or static_prune(model)
    if not check_feasible(state, model).ok:
        raise ValueError("initial tuple is infeasible")
    duals = duals.copy() if duals is not None else PairingDuals.zeros(model.num_users)
    xi = state.objective(model)
    trace = SolveTrace(initial=xi)
    lam = 0.0
    trace.termination = "cap"
    for n in range(opt.max_iter):
        tm = {}
        t0 = time.perf_counter()
        cont = _continuous_blocks(model, state, opt, lam, xi)
        state_c, lam, delta_kept = cont
        xi_c = state_c.objective(model)
        tm["continuous"] = time.perf_counter() - t0

        rec = IterationRecord(n=n, xi_c=xi_c, xi_hat=None, xi=xi_c, accepted=False, delta_kept=delta_kept)
        new_state = state_c
        if opt.optimize_pairing:
            t1 = time.perf_counter()
            pres = optimize_pairing(model, edge_set, state_c.p, state_c.b, state_c.delta, duals, opt.pairing)
            tm["pairing"] = time.perf_counter() - t1
            rec.pairing_status = pres.status
            duals = pres.duals
            rec.duals = {"theta": duals.theta, "nu_max": float(np.max(duals.nu)), "lam_d_max": float(np.max(duals.lam_d))}
            if pres.pairs is not None and tuple(pres.pairs) != state_c.pairs:
                t2 = time.perf_counter()
                cand, reinit = _refine_candidate(model, state_c, pres.pairs, opt)
                tm["refine"] = time.perf_counter() - t2
                rec.reinit = reinit
                if cand is not None:
                    rec.xi_hat = cand.objective(model)
                    if check_feasible(cand, model).ok and rec.xi_hat >= xi_c:
                        new_state, rec.accepted, rec.xi = cand, True, rec.xi_hat
            elif pres.pairs is not None:
                rec.pairing_status += ":unchanged"
        rec.timings = tm
        trace.records.append(rec)
        prev, xi, state = xi, rec.xi, new_state
        if abs(xi - prev) < opt.eps * max(1.0, abs(prev)):
            trace.termination = "converged"
            break
    return state, trace, duals


def _refine_candidate(model, state_c: AllocationState, pairs, opt: AOOptions):
    """Re-run the continuous blocks under a candidate pairing.

    Starts from the current (p, b); if no delta is feasible there, restarts
    from the equal split. Returns (state or None, restarted flag).
    """
    start = AllocationState(pairs=pairs, p=state_c.p, b=state_c.b, delta=state_c.delta)
    out = _continuous_blocks(model, start, opt, 0.0, None)
    if out is not None:
        return out[0], False
    p, b = equal_split(model)
    out = _continuous_blocks(model, start.replace(p=p, b=b), opt, 0.0, None)
    return (out[0] if out is not None else None), True


# ---------------------------------------------------------------------------
# schemes

@dataclass
class SchemeResult:
    scheme: str
    sum_rate: float
    feasible: bool
    iterations: int = 0
    state: AllocationState | None = None
    trace: SolveTrace | None = None
    wall_ms: float = 0.0
    notes: list = field(default_factory=list)


def _infeasible(scheme, t0, why) -> SchemeResult:
    return SchemeResult(scheme, 0.0, False, 0, None, None, (time.perf_counter() - t0) * 1e3, [str(why)])


def solve_equal_allocation(model: SystemModel, options: AOOptions | None = None,
                           edge_set: FeasibleEdgeSet | None = None) -> SchemeResult:
    """Equal power and bandwidth; pairing and delta optimised."""
    t0 = time.perf_counter()
    opt = replace(options or AOOptions(), optimize_pb=False)
    try:
        edge_set = edge_set or static_prune(model)
        start = initial_feasible_tuple(model, edge_set, opt.delta)
    except InfeasibleDraw as exc:
        return _infeasible("equal", t0, exc)
    state, trace, _ = run_alternating(model, start, opt, edge_set)
    return SchemeResult("equal", state.objective(model), True, len(trace.records), state, trace,
                        (time.perf_counter() - t0) * 1e3)


def solve_proposed(model: SystemModel, options: AOOptions | None = None, edge_set: FeasibleEdgeSet | None = None,
                   start: AllocationState | None = None) -> SchemeResult:
    """Full alternating optimisation, warm-started from the equal-allocation solution."""
    t0 = time.perf_counter()
    opt = options or AOOptions()
    try:
        edge_set = edge_set or static_prune(model)
    except InfeasibleDraw as exc:
        return _infeasible("proposed", t0, exc)
    if start is None:
        base = solve_equal_allocation(model, opt, edge_set)
        if not base.feasible:
            return _infeasible("proposed", t0, base.notes[0])
        start = base.state
    state, trace, _ = run_alternating(model, start, opt, edge_set)
    return SchemeResult("proposed", state.objective(model), True, len(trace.records), state, trace,
                        (time.perf_counter() - t0) * 1e3)


def channel_pairs(gain_sq) -> list:
    """Strongest with weakest, second strongest with second weakest, ..."""
    order = np.argsort(-np.asarray(gain_sq), kind="stable")
    n = order.size
    return sorted(tuple(sorted((int(order[k]), int(order[n - 1 - k])))) for k in range(n // 2))


def solve_channel_pairing(model: SystemModel, options: AOOptions | None = None,
                          edge_set: FeasibleEdgeSet | None = None) -> SchemeResult:
    """Channel-gain pairing held fixed; delta, power and bandwidth optimised."""
    t0 = time.perf_counter()
    opt = replace(options or AOOptions(), optimize_pairing=False)
    notes = []
    try:
        edge_set = edge_set or static_prune(model)
    except InfeasibleDraw as exc:
        return _infeasible("channel", t0, exc)
    p, b = equal_split(model)
    pairs = channel_pairs(model.gain_sq)
    usable = set(int(e) for e in usable_edges(model, edge_set, p[0], b[0]))
    if not all(model.edge(i, j) in usable for i, j in pairs):
        # closest feasible matching: keep as many channel pairs as possible,
        # then prefer large gain-rank separation
        rank = np.empty(model.num_users)
        rank[np.argsort(-model.gain_sq, kind="stable")] = np.arange(model.num_users)
        keep = set(pairs)
        weights = {}
        for e in usable:
            i, j = int(model.edge_i[e]), int(model.edge_j[e])
            weights[(i, j)] = float((i, j) in keep) + 1e-3 * abs(rank[i] - rank[j]) / model.num_users
        res = max_weight_perfect_matching(range(model.num_users), weights)
        if res is None:
            return _infeasible("channel", t0, "no feasible matching near the channel pairing")
        notes.append(f"channel pairing repaired: {pairs} -> {res[0]}")
        pairs = res[0]
    start, _ = _delta_for(model, pairs, p, b, opt.delta)
    if start is None:
        return _infeasible("channel", t0, "channel pairing infeasible at the equal split")
    state, trace, _ = run_alternating(model, start, opt, edge_set)
    trace.notes.extend(notes)
    return SchemeResult("channel", state.objective(model), True, len(trace.records), state, trace,
                        (time.perf_counter() - t0) * 1e3, notes)


def fdma_sum_rate(scenario: Scenario) -> float:
    """Orthogonal sub-bands of B/N with P/N each; no superposition, no interference."""
    bud = scenario.budgets
    n = scenario.num_users
    b_u = bud.total_bandwidth_hz / n
    snr = (bud.total_power_watts / n) * scenario.gain_sq / (b_u * bud.noise_psd_w_per_hz)
    return float(np.sum(rate_from_sinr(b_u, snr)))


def solve_fdma(scenario: Scenario) -> SchemeResult:
    t0 = time.perf_counter()
    return SchemeResult("fdma", fdma_sum_rate(scenario), True, 0, wall_ms=(time.perf_counter() - t0) * 1e3)


def solve_profile_family(scenario: Scenario, profiles: PairProfileSet, multiplier: float,
                         options: AOOptions | None = None) -> SchemeResult:
    """The proposed pipeline on interference profiles scaled by ``multiplier``.

    This emulates a weaker transceiver family; it says nothing about any
    specific trained model.
    """
    res = solve_proposed(SystemModel(scenario, profiles.with_family(multiplier)), options)
    res.scheme = "family"
    res.notes.append(f"model-family emulation, rho multiplier {multiplier}")
    return res


def solve_scheme(scheme: str, scenario: Scenario, profiles: PairProfileSet, options: AOOptions | None = None,
                 family_multiplier: float = 1.5) -> SchemeResult:
    if scheme == "fdma":
        return solve_fdma(scenario)
    if scheme == "family":
        return solve_profile_family(scenario, profiles, family_multiplier, options)
    model = SystemModel(scenario, profiles)
    if scheme == "proposed":
        return solve_proposed(model, options)
    if scheme == "equal":
        return solve_equal_allocation(model, options)
    if scheme == "channel":
        return solve_channel_pairing(model, options)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
