import math
import random

import numpy as np
import pytest

from coglo.network import (
    GraphError,
    Path,
    build_graph,
    haversine_m,
    leg_path,
    paths_to_geojson,
    shortest_path,
    travel_time_matrix,
)

from conftest import ClosureCtx, brute_force_min_path, demo_graph_doc, random_graph_doc


class TestBuildGraph:
    def test_empty_document(self):
        graph = build_graph({"nodes": [], "edges": []})
        assert len(graph.nodes) == 0
        assert len(graph.edges) == 0

    def test_base_travel_time_derivation(self):
        doc = {
            "nodes": [
                {"id": "u", "lat": 0.0, "lon": 0.0},
                {"id": "v", "lat": 0.0, "lon": 0.01},
            ],
            "edges": [{"id": "uv", "from": "u", "to": "v", "length_m": 1000.0,
                       "free_flow_speed_kmh": 36.0}],
        }
        graph = build_graph(doc)
        edge = graph.edges["uv"]
        expected = edge.length_m / (edge.free_flow_speed_kmh * 1000.0 / 3600.0)
        assert edge.base_travel_time_s == pytest.approx(100.0, rel=1e-9)
        assert edge.base_travel_time_s == pytest.approx(expected, rel=1e-9)

    def test_dangling_endpoint_names_edge(self):
        doc = {
            "nodes": [{"id": "u", "lat": 0.0, "lon": 0.0}],
            "edges": [{"id": "ux", "from": "u", "to": "X", "length_m": 10.0,
                       "free_flow_speed_kmh": 50.0}],
        }
        with pytest.raises(GraphError, match="ux.*X"):
            build_graph(doc)

    @pytest.mark.parametrize("field,value,message", [
        ("length_m", -5.0, "non-positive length"),
        ("free_flow_speed_kmh", 0.0, "non-positive free-flow speed"),
    ])
    def test_bad_edge_values(self, field, value, message):
        doc = demo_graph_doc()
        doc["edges"][0][field] = value
        with pytest.raises(GraphError, match=message):
            build_graph(doc)

    def test_duplicate_ids(self):
        doc = demo_graph_doc()
        doc["nodes"].append(dict(doc["nodes"][0]))
        with pytest.raises(GraphError, match="duplicate node"):
            build_graph(doc)
        doc = demo_graph_doc()
        doc["edges"].append(dict(doc["edges"][0]))
        with pytest.raises(GraphError, match="duplicate edge"):
            build_graph(doc)

    def test_adjacency_covers_edges(self, demo_graph):
        listed = {eid for eids in demo_graph.adjacency.values() for eid in eids}
        assert listed == set(demo_graph.edges)


class TestShortestPath:
    def test_identity(self, demo_graph):
        path = shortest_path(demo_graph, "A", "A")
        assert path == Path((), 0.0, 0.0)

    def test_two_hop_beats_direct(self, demo_graph):
        path = shortest_path(demo_graph, "A", "C")
        assert path.edge_ids == ("ab", "bc")
        assert path.total_time_s == pytest.approx(25.0)
        assert path.total_distance_m == pytest.approx(250.0)

    def test_closure_forces_direct(self, demo_graph):
        path = shortest_path(demo_graph, "A", "C", ctx=ClosureCtx(closed={"bc"}))
        assert path.edge_ids == ("ac",)
        assert path.total_time_s == pytest.approx(30.0)

    def test_unreachable_is_value(self, demo_graph):
        assert shortest_path(demo_graph, "C", "A") is None

    def test_unknown_node(self, demo_graph):
        with pytest.raises(GraphError):
            shortest_path(demo_graph, "A", "Z")

    def test_matches_enumeration_on_random_graphs(self):
        hits = 0
        for seed in range(50):
            rng = random.Random(7000 + seed)
            graph = build_graph(random_graph_doc(rng, rng.randint(4, 12)))
            closed = {eid for eid in graph.edges if rng.random() < 0.15}
            ctx = ClosureCtx(closed=closed)
            names = sorted(graph.nodes)
            src, dst = rng.sample(names, 2)
            expected = brute_force_min_path(graph, src, dst, ctx)
            actual = shortest_path(graph, src, dst, ctx=ctx)
            if expected is None:
                assert actual is None
            else:
                hits += 1
                assert actual.total_time_s == pytest.approx(expected[1], rel=1e-9)
                assert actual.edge_ids == expected[3]
        assert hits > 10  # the sample must actually exercise reachable pairs

    def test_deterministic_tie_break_prefers_smaller_edge_ids(self):
        doc = {
            "nodes": [{"id": n, "lat": 0.0, "lon": 0.0} for n in ("s", "m1", "m2", "t")],
            "edges": [
                {"id": "a1", "from": "s", "to": "m1", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
                {"id": "a2", "from": "m1", "to": "t", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
                {"id": "b1", "from": "s", "to": "m2", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
                {"id": "b2", "from": "m2", "to": "t", "length_m": 100.0, "free_flow_speed_kmh": 36.0},
            ],
        }
        graph = build_graph(doc)
        assert shortest_path(graph, "s", "t").edge_ids == ("a1", "a2")


class TestLegPath:
    def test_via_waypoints_concatenate(self, demo_graph):
        direct = leg_path(demo_graph, "A", "C")
        assert direct.total_time_s == pytest.approx(25.0)
        forced = leg_path(demo_graph, "A", "C", via=("B",))
        assert forced.edge_ids == ("ab", "bc")
        broken = leg_path(demo_graph, "A", "C", via=("B",), ctx=ClosureCtx(closed={"bc"}))
        assert broken is None


class TestTravelTimeMatrix:
    def test_diagonal_zero(self, demo_graph):
        m = travel_time_matrix(demo_graph, ["A", "B", "C"])
        assert np.all(np.diag(m) == 0.0)

    def test_symmetric_two_way_graph(self, demo_graph_two_way):
        m = travel_time_matrix(demo_graph_two_way, ["A", "B", "C"])
        assert np.allclose(m, m.T)

    def test_entry_matches_shortest_path(self, demo_graph):
        m = travel_time_matrix(demo_graph, ["A", "B", "C"])
        assert m[0, 2] == pytest.approx(25.0)
        for i, a in enumerate("ABC"):
            for j, b in enumerate("ABC"):
                path = shortest_path(demo_graph, a, b)
                expected = math.inf if path is None else path.total_time_s
                assert m[i, j] == pytest.approx(expected) or (math.isinf(m[i, j]) and path is None)

    def test_triangle_inequality(self):
        for seed in range(10):
            rng = random.Random(8100 + seed)
            graph = build_graph(random_graph_doc(rng, 8, 0.5))
            names = sorted(graph.nodes)
            m = travel_time_matrix(graph, names)
            n = len(names)
            for i in range(n):
                for j in range(n):
                    for k in range(n):
                        assert m[i, j] <= m[i, k] + m[k, j] + 1e-6

    def test_closure_never_decreases_entries(self):
        for seed in range(10):
            rng = random.Random(8200 + seed)
            graph = build_graph(random_graph_doc(rng, 8, 0.5))
            names = sorted(graph.nodes)
            base = travel_time_matrix(graph, names)
            closed = {eid for eid in graph.edges if rng.random() < 0.3}
            after = travel_time_matrix(graph, names, ctx=ClosureCtx(closed=closed))
            finite = np.isfinite(base)
            assert np.all(after[finite] >= base[finite] - 1e-9)


class TestGeoJson:
    def test_linestring_per_path(self, demo_graph):
        path = shortest_path(demo_graph, "A", "C")
        doc = paths_to_geojson(demo_graph, [path])
        assert doc["type"] == "FeatureCollection"
        feature = doc["features"][0]
        assert feature["geometry"]["type"] == "LineString"
        assert len(feature["geometry"]["coordinates"]) == 3
        assert feature["properties"]["total_time_s"] == pytest.approx(25.0)
        assert feature["properties"]["total_distance_m"] == pytest.approx(250.0)


def test_haversine_known_distance():
    # One degree of latitude is ~111.2 km.
    assert haversine_m(46.0, 15.0, 47.0, 15.0) == pytest.approx(111_195, rel=0.01)
