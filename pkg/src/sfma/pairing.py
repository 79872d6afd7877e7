"""Pairing block: Lagrangian pricing, one-hot relaxation and repair.

Everything below ``PricingTable.from_model`` works on a plain table of
per-(edge, group) rates, energies, distortions and feasibility flags, so the
combinatorial machinery can be exercised on synthetic tables as well.

Row order of a table is lexicographic in the user pair; ties in reduced
cost therefore resolve to the lexicographically smaller pair by taking the
first maximum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .feasibility import FeasibleEdgeSet, dynamic_mask
from .link import SystemModel
from .matching import max_value_assignment, max_weight_perfect_matching

FALLBACK_LIMIT = 12


@dataclass(frozen=True)
class PairingOptions:
    max_iter: int = 100
    tol: float = 1e-4            # L-inf multiplier change, in units of the rate scale
    step_frac: float = 0.1       # initial step as a fraction of the median pair rate
    member_swaps: bool = True    # 2-opt member exchange on top of group swaps
    swap_cap: int = 1000
    fallback_limit: int = FALLBACK_LIMIT  # largest residual (users) solved exhaustively


@dataclass
class PairingDuals:
    nu: np.ndarray
    theta: float = 0.0
    lam_d: np.ndarray = None
    # steps of the most recent update (mu, beta_E, beta_D)
    steps: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float).copy()
        self.lam_d = np.zeros_like(self.nu) if self.lam_d is None else np.asarray(self.lam_d, dtype=float).copy()
        if np.any(self.nu < 0) or np.any(self.lam_d < 0) or self.theta < 0:
            raise ValueError("multipliers must be nonnegative")

    @classmethod
    def zeros(cls, num_users: int) -> "PairingDuals":
        return cls(nu=np.zeros(num_users))

    def copy(self) -> "PairingDuals":
        return PairingDuals(self.nu, self.theta, self.lam_d, self.steps)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.nu, [self.theta], self.lam_d])


@dataclass(frozen=True, eq=False)
class PricingTable:
    """Per-(edge, group) constants of the pairing problem.

    ``pairs`` is an ``(M, 2)`` array of user pairs in lexicographic order;
    the other arrays are ``(M, K)``.
    """

    num_users: int
    pairs: np.ndarray
    rate: np.ndarray
    energy: np.ndarray
    dist_i: np.ndarray
    dist_j: np.ndarray
    feasible: np.ndarray
    energy_max: float
    dist_max: np.ndarray
    row_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=int).reshape(-1, 2)
        if np.any(pairs[:, 0] >= pairs[:, 1]):
            raise ValueError("pairs must be stored as (i, j) with i < j")
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        object.__setattr__(self, "pairs", pairs[order])
        for name in ("rate", "energy", "dist_i", "dist_j"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float)[order])
        object.__setattr__(self, "feasible", np.asarray(self.feasible, dtype=bool)[order])
        object.__setattr__(self, "dist_max", np.broadcast_to(np.asarray(self.dist_max, dtype=float), (self.num_users,)))
        object.__setattr__(self, "row_of", {(int(i), int(j)): m for m, (i, j) in enumerate(self.pairs)})

    @property
    def num_groups(self) -> int:
        return self.rate.shape[1]

    @classmethod
    def from_model(cls, model: SystemModel, edge_set: FeasibleEdgeSet, p, b, delta) -> "PricingTable":
        p, b, delta = (np.asarray(x, dtype=float) for x in (p, b, delta))
        e = edge_set.edges
        met = model.metrics(e[:, None], p[None, :], b[None, :], delta[None, :])
        d_i = np.empty((e.size, p.size))
        d_j = np.empty((e.size, p.size))
        for m, edge in enumerate(e):
            env_i, env_j = model.profiles.envelopes[edge]
            d_i[m], d_j[m] = env_i(delta), env_j(delta)
        return cls(
            num_users=model.num_users,
            pairs=np.stack([model.edge_i[e], model.edge_j[e]], axis=1),
            rate=met.sum_rate, energy=met.energy, dist_i=d_i, dist_j=d_j,
            feasible=dynamic_mask(model, edge_set, p, b, delta),
            energy_max=model.budgets.energy_budget_j, dist_max=model.budgets.distortion_max,
        )

    def utility(self, duals: PairingDuals) -> np.ndarray:
        """Phi: the dual price on dynamically feasible entries, -inf elsewhere."""
        i, j = self.pairs[:, 0:1], self.pairs[:, 1:2]
        price = self.rate - duals.theta * self.energy - duals.lam_d[i] * self.dist_i - duals.lam_d[j] * self.dist_j
        return np.where(self.feasible, price, -np.inf)

    def reduced_cost(self, duals: PairingDuals) -> np.ndarray:
        return self.utility(duals) - (duals.nu[self.pairs[:, 0]] + duals.nu[self.pairs[:, 1]])[:, None]

    def rate_scale(self) -> float:
        finite = np.abs(self.rate[self.feasible])
        return float(np.median(finite)) if finite.size and np.median(finite) > 0 else 1.0


def dual_price(table: PricingTable, row: int, group: int, duals: PairingDuals) -> float:
    """pi = R - theta E - lam_i D_i - lam_j D_j for one table entry."""
    i, j = table.pairs[row]
    return float(table.rate[row, group] - duals.theta * table.energy[row, group]
                 - duals.lam_d[i] * table.dist_i[row, group] - duals.lam_d[j] * table.dist_j[row, group])


# ---------------------------------------------------------------------------
# dual loop

def onehot_select(varpi_col) -> int | None:
    """Row with the largest finite reduced cost (first on ties), or None."""
    col = np.asarray(varpi_col, dtype=float)
    if not np.isfinite(col).any():
        return None
    return int(np.argmax(np.where(np.isfinite(col), col, -np.inf)))


def select_all(varpi) -> list:
    return [onehot_select(varpi[:, k]) for k in range(varpi.shape[1])]


def dual_update(duals: PairingDuals, selections, table: PricingTable, steps) -> PairingDuals:
    """Projected subgradient step on (nu, theta, lam_D) given one-hot selections."""
    mu, beta_e, beta_d = steps
    n = table.num_users
    counts = np.zeros(n)
    dist = np.zeros(n)
    energy = 0.0
    for k, row in enumerate(selections):
        if row is None:
            continue
        i, j = table.pairs[row]
        counts[i] += 1
        counts[j] += 1
        dist[i] += table.dist_i[row, k]
        dist[j] += table.dist_j[row, k]
        energy += table.energy[row, k]
    return PairingDuals(
        nu=np.maximum(0.0, duals.nu + mu * (counts - 1.0)),
        theta=max(0.0, duals.theta + beta_e * (energy - table.energy_max)),
        lam_d=np.maximum(0.0, duals.lam_d + beta_d * (dist - table.dist_max)),
        steps=(mu, beta_e, beta_d),
    )


def dual_loop(table: PricingTable, duals: PairingDuals, options: PairingOptions | None = None):
    """Alternate one-hot selection and multiplier updates; returns (duals, selections, iterations)."""
    opt = options or PairingOptions()
    scale = table.rate_scale()
    e_max = max(table.energy_max, 1e-300)
    d_max = np.maximum(table.dist_max, 1e-300)
    # changes of each multiplier measured in rate units
    weight = np.concatenate([np.ones(table.num_users), [e_max], d_max]) / scale
    it = 0
    for it in range(opt.max_iter):
        c_t = opt.step_frac * scale / math.sqrt(it + 1)
        steps = (c_t, c_t / e_max**2, c_t / float(np.mean(d_max)) ** 2)
        sel = select_all(table.reduced_cost(duals))
        new = dual_update(duals, sel, table, steps)
        change = float(np.max(np.abs(new.vector() - duals.vector()) * weight))
        duals = new
        if change < opt.tol:
            break
    return duals, select_all(table.reduced_cost(duals)), it + 1


# ---------------------------------------------------------------------------
# primal recovery

def resolve_conflicts(selections, varpi, pairs, num_users: int):
    """Keep a conflict-free subset of the one-hot selections.

    Assignments are visited by decreasing reduced cost (ties by group index)
    and kept while both users are still unused, so every user keeps its most
    valuable surviving incident assignment. Returns
    ``(kept {group: row}, free users, free groups)``.
    """
    cand = [(k, row) for k, row in enumerate(selections) if row is not None]
    cand.sort(key=lambda kr: (-varpi[kr[1], kr[0]], kr[0]))
    used = np.zeros(num_users, dtype=bool)
    kept = {}
    for k, row in cand:
        i, j = pairs[row]
        if not used[i] and not used[j]:
            kept[k] = row
            used[i] = used[j] = True
    free_users = [u for u in range(num_users) if not used[u]]
    free_groups = [k for k in range(len(selections)) if k not in kept]
    return kept, free_users, free_groups


def residual_matching(table: PricingTable, varpi, free_users, free_groups):
    """Stage 2: max-weight perfect matching on max-over-groups reduced costs,
    then an exact assignment of matched pairs to groups. None if either fails."""
    if not free_groups:
        return {}
    fu = set(free_users)
    sub = varpi[:, free_groups]
    best = np.max(np.where(np.isfinite(sub), sub, -np.inf), axis=1)
    weights = {(int(i), int(j)): float(best[m]) for m, (i, j) in enumerate(table.pairs)
               if i in fu and j in fu and np.isfinite(best[m])}
    res = max_weight_perfect_matching(sorted(fu), weights)
    if res is None:
        return None
    matched, _ = res
    rows = [table.row_of[pr] for pr in matched]
    return residual_assignment(rows, free_groups, varpi)


def residual_assignment(rows, free_groups, varpi):
    """Assign matched pair rows to groups maximising total reduced cost."""
    if len(rows) != len(free_groups):
        raise ValueError(f"{len(rows)} pairs cannot fill {len(free_groups)} groups")
    values = varpi[np.ix_(rows, free_groups)]
    res = max_value_assignment(values)
    if res is None:
        return None
    cols, _ = res
    return {free_groups[c]: rows[m] for m, c in enumerate(cols)}


def fallback_repair(table: PricingTable, varpi, free_users, free_groups, limit: int = FALLBACK_LIMIT):
    """Exact joint pair-and-group selection on the residual sets.

    Groups are filled in index order; the memo key is the set of still-free
    users, so each residual subset is solved once. Returns ``{group: row}``
    or None when no complete selection exists.
    """
    if len(free_users) != 2 * len(free_groups):
        return None
    if len(free_users) > limit:
        raise ValueError(f"residual of {len(free_users)} users exceeds the exhaustive limit {limit}")
    if not free_groups:
        return {}
    pos = {u: n for n, u in enumerate(free_users)}
    options = []
    for k in free_groups:
        opts = []
        for m, (i, j) in enumerate(table.pairs):
            if i in pos and j in pos and np.isfinite(varpi[m, k]):
                opts.append(((1 << pos[i]) | (1 << pos[j]), m, float(varpi[m, k])))
        options.append(opts)
    full = (1 << len(free_users)) - 1
    memo: dict = {}

    def best(mask, g):
        if g == len(free_groups):
            return 0.0, None
        hit = memo.get(mask)
        if hit is not None:
            return hit
        top, choice = -math.inf, None
        for bits, m, val in options[g]:
            if mask & bits == bits:
                sub, _ = best(mask & ~bits, g + 1)
                if sub != -math.inf and val + sub > top:
                    top, choice = val + sub, (bits, m)
        memo[mask] = (top, choice)
        return top, choice

    value, _ = best(full, 0)
    if value == -math.inf:
        return None
    out, mask = {}, full
    for g, k in enumerate(free_groups):
        _, (bits, m) = memo[mask]
        out[k] = m
        mask &= ~bits
    return out


# ---------------------------------------------------------------------------
# local refinement

def _assignment_ok(table: PricingTable, rows) -> bool:
    """Dynamic feasibility, distortion budgets and total energy of a full assignment."""
    ks = np.arange(len(rows))
    rows = np.asarray(rows)
    if not np.all(table.feasible[rows, ks]):
        return False
    if float(np.sum(table.energy[rows, ks])) > table.energy_max:
        return False
    i, j = table.pairs[rows, 0], table.pairs[rows, 1]
    return bool(np.all(table.dist_i[rows, ks] <= table.dist_max[i]) and np.all(table.dist_j[rows, ks] <= table.dist_max[j]))


def pair_swap_refine(table: PricingTable, rows, varpi, member_swaps: bool = True, cap: int = 1000):
    """Best-improvement swaps until no feasible strictly improving move remains.

    Moves are (a) two groups exchanging the pairs they host and, when
    ``member_swaps`` is on, (b) 2-opt exchanges of members between the two
    groups' pairs. Returns the refined list of rows and the number of moves.
    """
    rows = list(rows)
    k_n = len(rows)
    moves = 0

    def total(rs):
        return float(sum(varpi[r, k] for k, r in enumerate(rs)))

    def row(a, b):
        return table.row_of.get((min(a, b), max(a, b)))

    while moves < cap:
        base = total(rows)
        best_gain, best_rows = 0.0, None
        tol = 1e-12 * max(1.0, abs(base))
        for k1 in range(k_n):
            for k2 in range(k1 + 1, k_n):
                r1, r2 = rows[k1], rows[k2]
                cands = [(r2, r1)]
                if member_swaps:
                    (a, b), (c, d) = table.pairs[r1], table.pairs[r2]
                    for x, y in (((a, c), (b, d)), ((a, d), (b, c))):
                        n1, n2 = row(*x), row(*y)
                        if n1 is not None and n2 is not None:
                            cands += [(n1, n2), (n2, n1)]
                for n1, n2 in cands:
                    gain = varpi[n1, k1] + varpi[n2, k2] - varpi[r1, k1] - varpi[r2, k2]
                    if not np.isfinite(gain) or gain <= best_gain + tol:
                        continue
                    trial = list(rows)
                    trial[k1], trial[k2] = n1, n2
                    if _assignment_ok(table, trial):
                        best_gain, best_rows = gain, trial
        if best_rows is None:
            break
        rows = best_rows
        moves += 1
    return rows, moves


# ---------------------------------------------------------------------------
# driver

@dataclass
class PairingResult:
    pairs: list | None           # per group (i, j), or None on failure
    duals: PairingDuals
    status: str                  # "stage1", "stage2", "fallback", "failed"
    dual_iterations: int = 0
    swaps: int = 0
    rows: list | None = None


def validate_pairing(table: PricingTable, rows) -> bool:
    """Structural check: one feasible pair per group, every user exactly once."""
    if rows is None or len(rows) != table.num_groups:
        return False
    users = [int(u) for r in rows for u in table.pairs[r]]
    if sorted(users) != list(range(table.num_users)):
        return False
    return bool(all(table.feasible[r, k] for k, r in enumerate(rows)))


def _escalating_repair(table, varpi, kept, free_users, free_groups, limit):
    """Exact repair, releasing kept groups (weakest first) until it succeeds."""
    kept = dict(kept)
    free_users, free_groups = list(free_users), list(free_groups)
    while len(free_users) <= limit:
        extra = fallback_repair(table, varpi, sorted(free_users), sorted(free_groups), limit)
        if extra is not None or not kept:
            return kept, extra
        k = min(kept, key=lambda g: (varpi[kept[g], g], g))
        row = kept.pop(k)
        free_groups.append(k)
        free_users.extend(int(u) for u in table.pairs[row])
    return kept, None


def run_pairing(table: PricingTable, duals: PairingDuals | None = None,
                options: PairingOptions | None = None) -> PairingResult:
    opt = options or PairingOptions()
    duals = duals.copy() if duals is not None else PairingDuals.zeros(table.num_users)
    duals, sel, iters = dual_loop(table, duals, opt)
    varpi = table.reduced_cost(duals)
    kept, free_users, free_groups = resolve_conflicts(sel, varpi, table.pairs, table.num_users)
    status = "stage1" if not free_groups else "stage2"
    extra = residual_matching(table, varpi, free_users, free_groups) if free_groups else {}
    if extra is None:
        status = "fallback"
        kept, extra = _escalating_repair(table, varpi, kept, free_users, free_groups, opt.fallback_limit)
    if extra is None:
        return PairingResult(None, duals, "failed", iters)
    assign = {**kept, **extra}
    rows = [assign[k] for k in range(table.num_groups)]
    swaps = 0
    if _assignment_ok(table, rows):
        rows, swaps = pair_swap_refine(table, rows, varpi, opt.member_swaps, opt.swap_cap)
    if not validate_pairing(table, rows):
        return PairingResult(None, duals, "failed", iters)
    pairs = [tuple(int(u) for u in table.pairs[r]) for r in rows]
    return PairingResult(pairs, duals, status, iters, swaps, rows)


def optimize_pairing(model: SystemModel, edge_set: FeasibleEdgeSet, p, b, delta,
                     duals: PairingDuals | None = None, options: PairingOptions | None = None) -> PairingResult:
    """Pairing block at fixed per-group (p, b, delta)."""
    table = PricingTable.from_model(model, edge_set, p, b, delta)
    return run_pairing(table, duals, options)
