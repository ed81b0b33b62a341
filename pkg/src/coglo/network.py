"""Directed road network with static topology and snapshot travel costs.

Travel costs are evaluated under a snapshot of effective edge speeds frozen
at a departure time ``t``; the speed source is any object exposing
``effective_speed_kmh(edge, t)`` (``None`` meaning impassable).  Passing
``ctx=None`` queries free-flow speeds.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

NODE_KINDS = (
    "junction",
    "depot",
    "post_office",
    "exchange_office",
    "border_crossing",
    "customer",
)


class GraphError(ValueError):
    """Raised when a graph document fails validation."""


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two WGS84 points."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(max(0.0, a))))


@dataclass(frozen=True)
class Node:
    id: str
    lat: float
    lon: float
    kind: str = "junction"
    country: str = "XX"


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    length_m: float
    free_flow_speed_kmh: float
    base_travel_time_s: float

    @property
    def base_speed_ms(self) -> float:
        return self.free_flow_speed_kmh / 3.6


@dataclass(frozen=True)
class Path:
    """An edge chain plus its totals under the query's speed snapshot."""

    edge_ids: tuple[str, ...]
    total_time_s: float
    total_distance_m: float

    @property
    def empty(self) -> bool:
        return not self.edge_ids


@dataclass(frozen=True)
class RoadGraph:
    nodes: dict[str, Node]
    edges: dict[str, Edge]
    adjacency: dict[str, tuple[str, ...]]

    def out_edges(self, node_id: str) -> tuple[str, ...]:
        return self.adjacency.get(node_id, ())

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise GraphError(f"unknown node id {node_id!r}") from None


def travel_time_s(length_m: float, speed_kmh: float) -> float:
    return length_m * 3.6 / speed_kmh


def build_graph(document: Mapping) -> RoadGraph:
    """Validate a graph description and derive per-edge base travel times.

    The document carries top-level ``nodes`` and ``edges`` arrays; see the
    scenario file format.  Errors name the offending element.
    """
    nodes: dict[str, Node] = {}
    for raw in document.get("nodes", []):
        nid = str(raw["id"])
        if nid in nodes:
            raise GraphError(f"duplicate node id {nid!r}")
        lat = float(raw["lat"])
        lon = float(raw["lon"])
        if not -90.0 <= lat <= 90.0:
            raise GraphError(f"node {nid!r}: lat {lat} out of range [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise GraphError(f"node {nid!r}: lon {lon} out of range [-180, 180]")
        kind = str(raw.get("kind", "junction"))
        if kind not in NODE_KINDS:
            raise GraphError(f"node {nid!r}: unknown kind {kind!r}")
        nodes[nid] = Node(id=nid, lat=lat, lon=lon, kind=kind, country=str(raw.get("country", "XX")))

    edges: dict[str, Edge] = {}
    adjacency: dict[str, list[str]] = {nid: [] for nid in nodes}
    for raw in document.get("edges", []):
        eid = str(raw["id"])
        if eid in edges:
            raise GraphError(f"duplicate edge id {eid!r}")
        frm = str(raw["from"])
        to = str(raw["to"])
        for endpoint in (frm, to):
            if endpoint not in nodes:
                raise GraphError(f"edge {eid!r}: dangling endpoint {endpoint!r}")
        length_m = float(raw["length_m"])
        speed = float(raw["free_flow_speed_kmh"])
        if length_m <= 0:
            raise GraphError(f"edge {eid!r}: non-positive length {length_m}")
        if speed <= 0:
            raise GraphError(f"edge {eid!r}: non-positive free-flow speed {speed}")
        edges[eid] = Edge(
            id=eid,
            from_node=frm,
            to_node=to,
            length_m=length_m,
            free_flow_speed_kmh=speed,
            base_travel_time_s=travel_time_s(length_m, speed),
        )
        adjacency[frm].append(eid)

    # Sorted adjacency gives deterministic relaxation order in path search.
    return RoadGraph(
        nodes=nodes,
        edges=edges,
        adjacency={nid: tuple(sorted(eids)) for nid, eids in adjacency.items()},
    )


def _edge_speed(edge: Edge, t: float, ctx) -> float | None:
    if ctx is None:
        return edge.free_flow_speed_kmh
    return ctx.effective_speed_kmh(edge, t)


def shortest_path(graph: RoadGraph, src: str, dst: str, t: float = 0.0, ctx=None) -> Path | None:
    """Minimum-travel-time path from ``src`` to ``dst`` under the ``t`` snapshot.

    Returns ``None`` when ``dst`` is unreachable (closures may legitimately
    disconnect the graph).  Among equal-cost paths the lexicographically
    smallest edge-id sequence wins, so results are reproducible.
    """
    if src not in graph.nodes:
        raise GraphError(f"unknown node id {src!r}")
    if dst not in graph.nodes:
        raise GraphError(f"unknown node id {dst!r}")
    if src == dst:
        return Path((), 0.0, 0.0)

    # Heap keys are (cost, edge-id sequence): with strictly positive edge
    # times, the first pop of a node is both time-minimal and lexicographically
    # minimal among ties.
    heap: list[tuple[float, tuple[str, ...], str]] = [(0.0, (), src)]
    settled: set[str] = set()
    while heap:
        cost, edge_seq, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            dist = sum(graph.edges[eid].length_m for eid in edge_seq)
            return Path(edge_seq, cost, dist)
        for eid in graph.adjacency.get(node, ()):
            edge = graph.edges[eid]
            if edge.to_node in settled:
                continue
            speed = _edge_speed(edge, t, ctx)
            if speed is None:
                continue
            heapq.heappush(heap, (cost + travel_time_s(edge.length_m, speed), edge_seq + (eid,), edge.to_node))
    return None


def leg_path(graph: RoadGraph, src: str, dst: str, t: float = 0.0, ctx=None,
             via: Sequence[str] = ()) -> Path | None:
    """Shortest path constrained through ``via`` waypoints, in order.

    All segments are priced under the same departure-time snapshot.  Returns
    ``None`` if any segment is unreachable.
    """
    waypoints = [src, *via, dst]
    edge_ids: tuple[str, ...] = ()
    total_t = 0.0
    total_d = 0.0
    for a, b in zip(waypoints, waypoints[1:]):
        seg = shortest_path(graph, a, b, t, ctx)
        if seg is None:
            return None
        edge_ids += seg.edge_ids
        total_t += seg.total_time_s
        total_d += seg.total_distance_m
    return Path(edge_ids, total_t, total_d)


def travel_time_matrix(graph: RoadGraph, node_ids: Sequence[str], t: float = 0.0, ctx=None) -> np.ndarray:
    """Pairwise minimum travel times in seconds; unreachable pairs are ``inf``."""
    for nid in node_ids:
        if nid not in graph.nodes:
            raise GraphError(f"unknown node id {nid!r}")
    n = len(node_ids)
    index = {nid: i for i, nid in enumerate(node_ids)}
    matrix = np.full((n, n), np.inf)
    for i, src in enumerate(node_ids):
        matrix[i, i] = 0.0
        heap: list[tuple[float, tuple[str, ...], str]] = [(0.0, (), src)]
        settled: set[str] = set()
        while heap:
            cost, edge_seq, node = heapq.heappop(heap)
            if node in settled:
                continue
            settled.add(node)
            if node in index:
                matrix[i, index[node]] = cost
            for eid in graph.adjacency.get(node, ()):
                edge = graph.edges[eid]
                if edge.to_node in settled:
                    continue
                speed = _edge_speed(edge, t, ctx)
                if speed is None:
                    continue
                heapq.heappush(heap, (cost + travel_time_s(edge.length_m, speed), edge_seq + (eid,), edge.to_node))
    return matrix


def path_coordinates(graph: RoadGraph, path: Path) -> list[list[float]]:
    """Lon/lat coordinate chain of a path, suitable for GeoJSON."""
    if path.empty:
        return []
    coords: list[list[float]] = []
    first = graph.edges[path.edge_ids[0]]
    start = graph.nodes[first.from_node]
    coords.append([start.lon, start.lat])
    for eid in path.edge_ids:
        node = graph.nodes[graph.edges[eid].to_node]
        coords.append([node.lon, node.lat])
    return coords


def paths_to_geojson(graph: RoadGraph, paths: Iterable[Path]) -> dict:
    """GeoJSON FeatureCollection with one LineString per path."""
    features = []
    for path in paths:
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": path_coordinates(graph, path)},
            "properties": {
                "total_time_s": path.total_time_s,
                "total_distance_m": path.total_distance_m,
            },
        })
    return {"type": "FeatureCollection", "features": features}
