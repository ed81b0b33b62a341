"""Road network basics: build a graph, disturb it, read travel times and LoS.

Run:  python demos/01_network_and_traffic.py
"""
import json

from coglo.network import build_graph, shortest_path, travel_time_matrix, paths_to_geojson
from coglo.traffic import (
    EdgeScope, Effect, EventContext, MeasurementWindow, MonitoredRoute, TrafficEvent,
    classify_los, detect_events, ingest_external_event, publish_rtti,
)

# A three-node demo network: two-hop line A-B-C plus a direct (slower) edge.
graph = build_graph({
    "nodes": [
        {"id": "A", "lat": 46.00, "lon": 15.00, "kind": "depot", "country": "XA"},
        {"id": "B", "lat": 46.01, "lon": 15.01, "kind": "junction", "country": "XA"},
        {"id": "C", "lat": 46.02, "lon": 15.02, "kind": "customer", "country": "XA"},
    ],
    "edges": [
        {"id": "ab", "from": "A", "to": "B", "length_m": 100, "free_flow_speed_kmh": 36},
        {"id": "bc", "from": "B", "to": "C", "length_m": 150, "free_flow_speed_kmh": 36},
        {"id": "ac", "from": "A", "to": "C", "length_m": 300, "free_flow_speed_kmh": 36},
    ],
})

quiet = shortest_path(graph, "A", "C")
print(f"free flow A->C: {quiet.edge_ids} in {quiet.total_time_s:.0f} s")

# An accident closes the B->C link; the router falls back to the direct edge.
accident = TrafficEvent(id="acc-1", kind="accident", scope=EdgeScope(("bc",)),
                        severity=0.9, effect=Effect(closed=True),
                        valid_from=0.0, valid_to=3600.0)
ctx = EventContext(graph, [accident])
detour = shortest_path(graph, "A", "C", t=100.0, ctx=ctx)
print(f"during closure:  {detour.edge_ids} in {detour.total_time_s:.0f} s")

# Pairwise matrix under the same snapshot (inf would mark unreachable pairs).
matrix = travel_time_matrix(graph, ["A", "B", "C"], t=100.0, ctx=ctx)
print("travel-time matrix (s):")
print(matrix.round(1))

# Level of service is the free-flow/effective speed ratio, A (free) to F (blocked).
for effective in (36.0, 30.0, 20.0, 10.0, None):
    print(f"effective {str(effective):>5} km/h on a 36 km/h edge ->",
          classify_los(effective, 36.0))

# A sensor window on one edge: persistent slow speeds trigger detection.
window = MeasurementWindow("ab", tuple((i * 60.0, 10.0) for i in range(7)))
detected = detect_events(window, graph)
print(f"detected: {detected.kind} severity {detected.severity:.2f} "
      f"multiplier {detected.effect.speed_multiplier:.2f}")

# External feeds use a simplified JSON format; unknown kinds degrade gracefully.
external = ingest_external_event({
    "id": "ext-7", "kind": "roadworks",
    "scope": {"center": {"lat": 46.01, "lon": 15.01}, "radius_m": 2000},
    "severity": 0.4, "effect": {"speed_cap_kmh": 20},
    "valid_from": 0.0, "valid_to": 7200.0,
})
print(f"ingested external event -> kind {external.kind}, warnings {external.warnings}")

# Published RTTI is internally consistent: route times equal fresh path queries.
snapshot = publish_rtti(graph, [accident, external], [MonitoredRoute("m1", "A", "C")], t=100.0)
print("rtti monitored routes:", snapshot.monitored_routes)
print("rtti per-edge LoS:", {k: v["los"] for k, v in snapshot.per_edge.items()})

# Paths export as GeoJSON LineStrings for any map client.
print(json.dumps(paths_to_geojson(graph, [detour])["features"][0]["properties"]))
