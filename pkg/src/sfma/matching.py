"""Exact matching and assignment primitives used by the pairing block.

``max_weight_perfect_matching`` is an exact dynamic programme over subsets
(the lowest unmatched node is always matched next), which is exhaustive
enumeration with memoisation. Above ``DP_LIMIT`` nodes it switches to the
blossom implementation in networkx.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

DP_LIMIT = 16
NEG_INF = -math.inf


def _normalise_edges(nodes, weighted_edges):
    index = {u: k for k, u in enumerate(nodes)}
    w = {}
    for (u, v), weight in weighted_edges.items():
        if u == v or u not in index or v not in index or not math.isfinite(weight):
            continue
        a, b = sorted((index[u], index[v]))
        if (a, b) not in w or weight > w[(a, b)]:
            w[(a, b)] = float(weight)
    return w


def max_weight_perfect_matching(nodes, weighted_edges: dict):
    """Maximum-weight perfect matching on a general graph.

    Args:
        nodes: sequence of hashable, sortable node labels (even length).
        weighted_edges: ``{(u, v): weight}``; missing or non-finite entries
            are absent edges.

    Returns:
        ``(pairs, value)`` with pairs sorted lexicographically, or ``None``
        when no perfect matching exists. Ties resolve deterministically.
    """
    nodes = sorted(nodes)
    n = len(nodes)
    if n % 2:
        raise ValueError("perfect matching needs an even number of nodes")
    if n == 0:
        return [], 0.0
    w = _normalise_edges(nodes, weighted_edges)
    if n > DP_LIMIT:
        return _blossom(nodes, w)

    adj = [[] for _ in range(n)]
    for (a, b), weight in sorted(w.items()):
        adj[a].append((b, weight))
    memo: dict[int, tuple] = {}
    full = (1 << n) - 1

    def best(mask):
        # mask = set of still-unmatched nodes
        if mask == 0:
            return 0.0, None
        hit = memo.get(mask)
        if hit is not None:
            return hit
        low = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << low)
        top, choice = NEG_INF, None
        for v, weight in adj[low]:
            if rest >> v & 1:
                sub, _ = best(rest & ~(1 << v))
                if sub != NEG_INF and weight + sub > top:
                    top, choice = weight + sub, v
        memo[mask] = (top, choice)
        return top, choice

    value, _ = best(full)
    if value == NEG_INF:
        return None
    pairs, mask = [], full
    while mask:
        low = (mask & -mask).bit_length() - 1
        _, v = memo[mask]
        pairs.append((nodes[low], nodes[v]))
        mask &= ~((1 << low) | (1 << v))
    return sorted(pairs), value


def _blossom(nodes, w):
    import networkx as nx

    g = nx.Graph()
    g.add_nodes_from(range(len(nodes)))
    for (a, b), weight in w.items():
        g.add_edge(a, b, weight=weight)
    mate = nx.max_weight_matching(g, maxcardinality=True)
    if 2 * len(mate) != len(nodes):
        return None
    pairs = sorted(tuple(sorted((nodes[a], nodes[b]))) for a, b in mate)
    value = sum(w[tuple(sorted((a, b)))] for a, b in mate)
    return pairs, value


def has_perfect_matching(nodes, edges) -> bool:
    """Existence test (unit weights)."""
    return max_weight_perfect_matching(nodes, {e: 1.0 for e in edges}) is not None


def enumerate_perfect_matchings(nodes):
    """Yield every perfect matching of ``nodes`` ((n-1)!! of them)."""
    nodes = sorted(nodes)
    if not nodes:
        yield []
        return
    first, rest = nodes[0], nodes[1:]
    for k, partner in enumerate(rest):
        remaining = rest[:k] + rest[k + 1:]
        for sub in enumerate_perfect_matchings(remaining):
            yield [(first, partner)] + sub


def brute_force_matching(nodes, weighted_edges: dict):
    """Reference oracle: scan all perfect matchings."""
    best, best_val = None, NEG_INF
    for m in enumerate_perfect_matchings(nodes):
        val = 0.0
        for u, v in m:
            weight = weighted_edges.get((u, v), weighted_edges.get((v, u), NEG_INF))
            if not math.isfinite(weight):
                val = NEG_INF
                break
            val += weight
        if val > best_val:
            best, best_val = m, val
    if best is None:
        return None
    return sorted(best), best_val


def max_value_assignment(values):
    """Exact square assignment maximising the total value.

    ``values[m, k]`` is the value of giving row m to column k; ``-inf``
    marks a forbidden pairing. Returns ``(columns_per_row, total)`` or
    ``None`` when every complete assignment uses a forbidden entry.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError(f"assignment needs a square value matrix, got shape {values.shape}")
    if values.size == 0:
        return [], 0.0
    finite = np.isfinite(values)
    if not finite.any():
        return None
    span = np.ptp(values[finite]) + np.max(np.abs(values[finite])) + 1.0
    big = -span * (values.shape[0] + 1)
    work = np.where(finite, values, big)
    rows, cols = linear_sum_assignment(work, maximize=True)
    if not np.all(finite[rows, cols]):
        return None
    return [int(c) for c in cols], float(values[rows, cols].sum())


def brute_force_assignment(values):
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    best, best_val = None, NEG_INF
    for perm in itertools.permutations(range(n)):
        val = sum(values[m, perm[m]] for m in range(n))
        if val > best_val:
            best, best_val = list(perm), val
    if best is None or not math.isfinite(best_val):
        return None
    return best, float(best_val)
