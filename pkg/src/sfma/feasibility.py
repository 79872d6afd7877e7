"""Static (offline) and per-group dynamic feasible edge sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .link import SystemModel
from .matching import has_perfect_matching


class InfeasibleDraw(Exception):
    """Raised when a scenario admits no feasible pairing at all."""


@dataclass(frozen=True, eq=False)
class FeasibleEdgeSet:
    edges: np.ndarray           # edge ids kept by offline pruning
    delta_lb: np.ndarray        # pair distortion lower bound, per kept edge
    budget_i: np.ndarray        # residual time budget of the first member
    budget_j: np.ndarray
    mask: np.ndarray            # boolean over all candidate pairs

    def __len__(self):
        return len(self.edges)

    def __contains__(self, e) -> bool:
        return bool(self.mask[e])

    def pairs(self, model: SystemModel):
        return [(int(model.edge_i[e]), int(model.edge_j[e])) for e in self.edges]


def static_prune(model: SystemModel, check_matching: bool = True) -> FeasibleEdgeSet:
    """Drop pairs that no feasible solution can ever use.

    A pair survives iff its distortion lower bound is at most 1 and both
    members have a positive residual transmission-time budget.
    """
    tb = model.time_budget
    mask = (model.delta_lb <= 1.0) & (tb[model.edge_i] > 0) & (tb[model.edge_j] > 0)
    edges = np.flatnonzero(mask)
    out = FeasibleEdgeSet(edges=edges, delta_lb=model.delta_lb[edges],
                          budget_i=tb[model.edge_i[edges]], budget_j=tb[model.edge_j[edges]], mask=mask)
    if check_matching and not has_perfect_matching(range(model.num_users), out.pairs(model)):
        raise InfeasibleDraw("pruned edge set admits no perfect matching")
    return out


def dynamic_mask(model: SystemModel, edge_set: FeasibleEdgeSet, p, b, delta) -> np.ndarray:
    """Boolean table ``[edge, group]`` of dynamically feasible assignments.

    ``p``, ``b``, ``delta`` are per-group vectors. Rows follow
    ``edge_set.edges``.
    """
    p, b, delta = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (p, b, delta))
    e = edge_set.edges[:, None]
    r_i, r_j = model.pair_rates(e, p[None, :], b[None, :], delta[None, :])
    f_i, f_j = model.rate_floors(e, delta[None, :])
    return (delta[None, :] >= edge_set.delta_lb[:, None]) & (r_i >= f_i) & (r_j >= f_j)


def dynamic_edges(model: SystemModel, edge_set: FeasibleEdgeSet, p_k: float, b_k: float, delta_k: float) -> np.ndarray:
    """Edge ids feasible on a group with resources ``(p_k, b_k, delta_k)``."""
    ok = dynamic_mask(model, edge_set, [p_k], [b_k], [delta_k])[:, 0]
    return edge_set.edges[ok]
