import numpy as np
import pytest

from sfma.matching import has_perfect_matching, max_value_assignment, max_weight_perfect_matching


def enumerate_matchings(nodes):
    """All perfect matchings of ``nodes`` ((n - 1)!! of them)."""
    if not nodes:
        yield []
        return
    first, rest = nodes[0], nodes[1:]
    for k, other in enumerate(rest):
        for tail in enumerate_matchings(rest[:k] + rest[k + 1:]):
            yield [(first, other)] + tail


def brute_force(nodes, w):
    best = None
    for mt in enumerate_matchings(list(nodes)):
        if all(pr in w for pr in mt):
            v = sum(w[pr] for pr in mt)
            if best is None or v > best:
                best = v
    return best


def test_four_node_example():
    w = {(1, 2): 3, (3, 4): 4, (1, 3): 2, (2, 4): 2, (1, 4): 5, (2, 3): 1}
    pairs, value = max_weight_perfect_matching([1, 2, 3, 4], w)
    assert pairs == [(1, 2), (3, 4)] and value == 7
    assert len(list(enumerate_matchings([1, 2, 3, 4]))) == 3


def test_two_nodes_forced():
    assert max_weight_perfect_matching([0, 1], {(0, 1): -2.0}) == ([(0, 1)], -2.0)


def test_no_perfect_matching():
    w = {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0}
    assert max_weight_perfect_matching([0, 1, 2, 3], w) is None
    assert not has_perfect_matching([0, 1, 2, 3], list(w))
    with pytest.raises(ValueError):
        max_weight_perfect_matching([0, 1, 2], w)


@pytest.mark.parametrize("n", [4, 6, 8, 10])
def test_matches_enumeration(n):
    rng = np.random.default_rng(n)
    assert len(list(enumerate_matchings(list(range(n))))) == int(np.prod(np.arange(n - 1, 0, -2)))
    for _ in range(20):
        w = {(i, j): float(rng.normal()) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.8}
        res = max_weight_perfect_matching(range(n), w)
        ref = brute_force(range(n), w)
        if ref is None:
            assert res is None
        else:
            assert res[1] == pytest.approx(ref, abs=1e-12)


def test_large_instance_uses_blossom():
    rng = np.random.default_rng(0)
    n = 20
    w = {(i, j): float(rng.uniform(0, 10)) for i in range(n) for j in range(i + 1, n)}
    pairs, value = max_weight_perfect_matching(range(n), w)
    assert sorted(u for pr in pairs for u in pr) == list(range(n))
    assert value == pytest.approx(sum(w[pr] for pr in pairs))


def test_assignment_two_by_two():
    cols, value = max_value_assignment(np.array([[5.0, 1.0], [2.0, 4.0]]))
    assert list(cols) == [0, 1] and value == 9.0
