from collections import Counter

import numpy as np
import pytest

from hcgr.session_graph import build_graph, neighborhood


def test_single_item_session():
    g = build_graph([4])
    assert g.nodes == (4,)
    assert g.position_of_last == 0
    assert g.edges == {(0, 0): 1}
    assert neighborhood(g, 0) == [(0, 1)]


def test_revisit_session():
    g = build_graph([10, 11, 12, 11])
    assert g.nodes == (10, 11, 12)
    assert g.position_of_last == 1
    assert g.edges == {
        (0, 1): 1,
        (1, 2): 1,
        (2, 1): 1,
        (0, 0): 1,
        (1, 1): 1,
        (2, 2): 1,
    }
    # node 2 sits on both sides of node 1, so its union weight is 2
    assert neighborhood(g, 1) == [(0, 1), (1, 1), (2, 2)]


def test_alternating_session_counts_repeats():
    g = build_graph([0, 1, 0, 1])
    assert g.edges == {(0, 1): 2, (1, 0): 1, (0, 0): 1, (1, 1): 1}


def test_consecutive_repeat_becomes_self_loop_count():
    g = build_graph([5, 5, 5])
    assert g.edges == {(0, 0): 2}


def test_empty_session_rejected():
    with pytest.raises(ValueError):
        build_graph([])


def test_neighborhood_index_validation():
    g = build_graph([1, 2])
    with pytest.raises(ValueError):
        neighborhood(g, 2)
    with pytest.raises(ValueError):
        neighborhood(g, -1)


def test_every_node_contains_itself():
    rng = np.random.default_rng(0)
    for _ in range(100):
        items = rng.integers(0, 8, size=rng.integers(1, 20)).tolist()
        g = build_graph(items)
        for i in range(len(g.nodes)):
            assert i in dict(neighborhood(g, i))


def test_equal_sessions_give_equal_graphs():
    items = [3, 1, 4, 1, 5, 9, 2, 6]
    assert build_graph(items) == build_graph(list(items))


def test_transition_multiset_reconstruction():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        items = rng.integers(0, 12, size=n).tolist()
        g = build_graph(items)
        expected = Counter(zip(items, items[1:]))
        for (i, j), w in g.edges.items():
            pair = (g.nodes[i], g.nodes[j])
            if i == j and pair not in expected:
                assert w == 1  # injected self-loop
            else:
                assert expected[pair] == w
        for pair, count in expected.items():
            i, j = g.nodes.index(pair[0]), g.nodes.index(pair[1])
            assert g.edges[(i, j)] == count


def test_weight_accounting_identity():
    # non-self-loop weight plus consecutive-identical pairs covers n-1 transitions
    rng = np.random.default_rng(3)
    for _ in range(300):
        n = int(rng.integers(1, 40))
        items = rng.integers(0, 6, size=n).tolist()
        g = build_graph(items)
        non_self = sum(w for (i, j), w in g.edges.items() if i != j)
        identical_pairs = sum(a == b for a, b in zip(items, items[1:]))
        assert non_self + identical_pairs == n - 1


def test_neighborhood_union_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        items = rng.integers(0, 10, size=rng.integers(1, 30)).tolist()
        g = build_graph(items)
        hoods = {i: dict(neighborhood(g, i)) for i in range(len(g.nodes))}
        for i, hood in hoods.items():
            for j, w in hood.items():
                assert hoods[j][i] == w
