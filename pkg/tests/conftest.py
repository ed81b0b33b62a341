from __future__ import annotations

import itertools
import math
import random

import pytest

from coglo.network import RoadGraph, build_graph


def demo_graph_doc(two_way: bool = False) -> dict:
    """Three-node line with a direct shortcut: A-B 10 s, B-C 15 s, A-C 30 s.

    Edge times come out of length/speed: 36 km/h is 10 m/s, so lengths are
    100/150/300 m.
    """
    nodes = [
        {"id": "A", "lat": 46.00, "lon": 15.00, "kind": "depot", "country": "XA"},
        {"id": "B", "lat": 46.01, "lon": 15.01, "kind": "junction", "country": "XA"},
        {"id": "C", "lat": 46.02, "lon": 15.02, "kind": "customer", "country": "XA"},
    ]
    edges = [
        {"id": "ab", "from": "A", "to": "B", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
        {"id": "bc", "from": "B", "to": "C", "length_m": 150.0, "free_flow_speed_kmh": 36.0},
        {"id": "ac", "from": "A", "to": "C", "length_m": 300.0, "free_flow_speed_kmh": 36.0},
    ]
    if two_way:
        edges += [
            {"id": "ba", "from": "B", "to": "A", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
            {"id": "cb", "from": "C", "to": "B", "length_m": 150.0, "free_flow_speed_kmh": 36.0},
            {"id": "ca", "from": "C", "to": "A", "length_m": 300.0, "free_flow_speed_kmh": 36.0},
        ]
    return {"nodes": nodes, "edges": edges}


@pytest.fixture
def demo_graph() -> RoadGraph:
    return build_graph(demo_graph_doc())


@pytest.fixture
def demo_graph_two_way() -> RoadGraph:
    return build_graph(demo_graph_doc(two_way=True))


def random_graph_doc(rng: random.Random, n_nodes: int, edge_prob: float = 0.45) -> dict:
    """Small random directed graph with varied lengths and speeds."""
    nodes = [
        {
            "id": f"n{i}",
            "lat": 46.0 + rng.uniform(-0.2, 0.2),
            "lon": 15.0 + rng.uniform(-0.2, 0.2),
            "kind": "junction",
            "country": "XA",
        }
        for i in range(n_nodes)
    ]
    edges = []
    k = 0
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and rng.random() < edge_prob:
                edges.append({
                    "id": f"e{k}",
                    "from": f"n{i}",
                    "to": f"n{j}",
                    "length_m": rng.uniform(50.0, 3000.0),
                    "free_flow_speed_kmh": rng.choice([30.0, 50.0, 70.0, 90.0]),
                })
                k += 1
    return {"nodes": nodes, "edges": edges}


def enumerate_simple_paths(graph: RoadGraph, src: str, dst: str, ctx=None, t: float = 0.0):
    """Yield (edge-id tuple, total time, total distance) for every simple path.

    Independent of the search implementation: plain DFS over adjacency.
    """
    def speed(edge):
        if ctx is None:
            return edge.free_flow_speed_kmh
        return ctx.effective_speed_kmh(edge, t)

    def walk(node, visited, edges_so_far, time_so_far, dist_so_far):
        if node == dst:
            yield tuple(edges_so_far), time_so_far, dist_so_far
            return
        for eid in graph.adjacency.get(node, ()):
            edge = graph.edges[eid]
            if edge.to_node in visited:
                continue
            s = speed(edge)
            if s is None:
                continue
            visited.add(edge.to_node)
            edges_so_far.append(eid)
            yield from walk(edge.to_node, visited, edges_so_far,
                            time_so_far + edge.length_m * 3.6 / s,
                            dist_so_far + edge.length_m)
            edges_so_far.pop()
            visited.remove(edge.to_node)

    if src == dst:
        yield (), 0.0, 0.0
        return
    yield from walk(src, {src}, [], 0.0, 0.0)


def brute_force_min_path(graph: RoadGraph, src: str, dst: str, ctx=None, t: float = 0.0):
    best = None
    for edges, total_t, total_d in enumerate_simple_paths(graph, src, dst, ctx, t):
        key = (total_t, edges)
        if best is None or key < best[0]:
            best = (key, total_t, total_d, edges)
    return best  # None when unreachable


class ClosureCtx:
    """Minimal speed source for tests: closed edge ids plus a multiplier map."""

    def __init__(self, closed=(), multipliers=None):
        self.closed = set(closed)
        self.multipliers = multipliers or {}

    def effective_speed_kmh(self, edge, t):
        if edge.id in self.closed:
            return None
        return edge.free_flow_speed_kmh * self.multipliers.get(edge.id, 1.0)

    def signature(self, t):
        return tuple(sorted(self.closed)) + tuple(sorted(self.multipliers))
