"""Convert click sessions into weighted directed graphs.

A session is an ordered list of item ids. Each consecutive pair (v_t, v_t+1)
adds one count to the directed edge v_t -> v_t+1; immediate repeats land on
the node's self-loop. Afterwards every node without a self-loop receives one
of weight 1, so attention over a neighborhood always includes the node itself.
Nodes are kept in first-occurrence order, which keeps "the last clicked item"
a well-defined node index.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class SessionGraph:
    nodes: tuple[int, ...]
    position_of_last: int
    edges: dict[tuple[int, int], int] = field(default_factory=dict)


def build_graph(items) -> SessionGraph:
    """Weighted directed graph of one session's transitions plus self-loops."""
    items = list(items)
    if not items:
        raise ValueError("build_graph: empty session")
    nodes: list[int] = []
    index: dict[int, int] = {}
    for item in items:
        if item not in index:
            index[item] = len(nodes)
            nodes.append(item)
    edges: dict[tuple[int, int], int] = {}
    for a, b in zip(items, items[1:]):
        key = (index[a], index[b])
        edges[key] = edges.get(key, 0) + 1
    for i in range(len(nodes)):
        edges.setdefault((i, i), 1)
    return SessionGraph(tuple(nodes), index[items[-1]], edges)


def neighborhood(g: SessionGraph, i: int) -> list[tuple[int, int]]:
    """Undirected neighborhood of node i with union weights.

    The weight of neighbor j is count(i->j) + count(j->i); the self-loop is
    counted once at its stored weight. Sorted ascending by node index so the
    order is deterministic.
    """
    if not 0 <= i < len(g.nodes):
        raise ValueError(f"neighborhood: node index {i} out of range")
    weights: dict[int, int] = {}
    for (a, b), w in g.edges.items():
        if a == i and b == i:
            weights[i] = weights.get(i, 0) + w
        elif a == i:
            weights[b] = weights.get(b, 0) + w
        elif b == i:
            weights[a] = weights.get(a, 0) + w
    return sorted(weights.items())
