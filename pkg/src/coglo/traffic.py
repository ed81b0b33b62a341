"""Traffic events, effective speeds, Level-of-Service, detection, external
feeds, response plans, and real-time traffic information snapshots."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .network import Edge, GraphError, Path, RoadGraph, haversine_m, leg_path, shortest_path

EVENT_KINDS = ("accident", "congestion", "closure", "weather", "speed_limit")
EVENT_SOURCES = ("automatic", "external", "manual")

LOS_BANDS = ("A", "B", "C", "D", "E", "F")
# Upper bound on free-flow/effective speed ratio per band; beyond the last -> F.
LOS_THRESHOLDS = ((1.1, "A"), (1.25, "B"), (1.5, "C"), (2.0, "D"), (3.0, "E"))

DETECTION_WINDOW_S = 300.0
DETECTION_SPEED_FRACTION = 0.5


class EventError(ValueError):
    """Raised for malformed traffic events or event documents."""


@dataclass(frozen=True)
class EdgeScope:
    edge_ids: tuple[str, ...]


@dataclass(frozen=True)
class RadiusScope:
    lat: float
    lon: float
    radius_m: float


@dataclass(frozen=True)
class Effect:
    """Exactly one of a relative slowdown, an absolute cap, or a closure."""

    speed_multiplier: float | None = None
    speed_cap_kmh: float | None = None
    closed: bool = False

    def __post_init__(self):
        set_count = (self.speed_multiplier is not None) + (self.speed_cap_kmh is not None) + (1 if self.closed else 0)
        if set_count != 1:
            raise EventError("effect must set exactly one of speed_multiplier, speed_cap_kmh, closed")
        if self.speed_multiplier is not None and not 0.0 < self.speed_multiplier <= 1.0:
            raise EventError(f"speed_multiplier {self.speed_multiplier} outside (0, 1]")
        if self.speed_cap_kmh is not None and self.speed_cap_kmh <= 0:
            raise EventError(f"speed_cap_kmh {self.speed_cap_kmh} must be positive")


@dataclass(frozen=True)
class TrafficEvent:
    id: str
    kind: str
    scope: EdgeScope | RadiusScope
    severity: float
    effect: Effect
    valid_from: float
    valid_to: float
    source: str = "manual"
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise EventError(f"event {self.id!r}: unknown kind {self.kind!r}")
        if self.source not in EVENT_SOURCES:
            raise EventError(f"event {self.id!r}: unknown source {self.source!r}")
        if not 0.0 <= self.severity <= 1.0:
            raise EventError(f"event {self.id!r}: severity {self.severity} outside [0, 1]")
        if not self.valid_from < self.valid_to:
            raise EventError(f"event {self.id!r}: valid_from must precede valid_to")
        if isinstance(self.scope, EdgeScope) and not self.scope.edge_ids:
            raise EventError(f"event {self.id!r}: empty edge scope")

    def active_at(self, t: float) -> bool:
        return self.valid_from <= t < self.valid_to


def resolve_scope(graph: RoadGraph, event: TrafficEvent) -> set[str]:
    """Edge ids affected by an event.

    An explicit scope is returned as-is (unknown ids are an error); a radius
    scope catches every edge with at least one endpoint within ``radius_m``
    of the center, by haversine distance.
    """
    if isinstance(event.scope, EdgeScope):
        for eid in event.scope.edge_ids:
            if eid not in graph.edges:
                raise EventError(f"event {event.id!r}: scope edge {eid!r} not in graph")
        return set(event.scope.edge_ids)
    center = event.scope
    hit: set[str] = set()
    for eid, edge in graph.edges.items():
        for node_id in (edge.from_node, edge.to_node):
            node = graph.nodes[node_id]
            if haversine_m(center.lat, center.lon, node.lat, node.lon) <= center.radius_m:
                hit.add(eid)
                break
    return hit


def effective_speed(edge: Edge, events: Iterable[TrafficEvent]) -> float | None:
    """Combine event effects on one edge; ``None`` means impassable.

    Callers pre-filter ``events`` to those active and in scope.  Overlapping
    effects combine by minimum resulting speed; closure dominates.
    """
    speed = edge.free_flow_speed_kmh
    for ev in events:
        if ev.effect.closed:
            return None
        if ev.effect.speed_multiplier is not None:
            speed = min(speed, edge.free_flow_speed_kmh * ev.effect.speed_multiplier)
        if ev.effect.speed_cap_kmh is not None:
            speed = min(speed, ev.effect.speed_cap_kmh)
    return speed


def classify_los(effective_speed_kmh: float | None, free_flow_speed_kmh: float) -> str:
    """Level-of-Service band from the free-flow/effective speed ratio.

    Boundary ratios fall into the lower (better) band; impassable is F.
    """
    if effective_speed_kmh is None or effective_speed_kmh <= 0:
        return "F"
    ratio = free_flow_speed_kmh / effective_speed_kmh
    for bound, band in LOS_THRESHOLDS:
        if ratio <= bound:
            return band
    return "F"


class EventContext:
    """Active-event view of a graph, usable as a speed source for routing.

    Scope resolution happens once per event at construction; activity is
    filtered per query time.  Instances are immutable; registering a new
    event means building a new context.
    """

    def __init__(self, graph: RoadGraph, events: Iterable[TrafficEvent] = ()):
        self.graph = graph
        self.events = tuple(sorted(events, key=lambda e: e.id))
        self._per_edge: dict[str, list[TrafficEvent]] = {}
        for ev in self.events:
            for eid in resolve_scope(graph, ev):
                self._per_edge.setdefault(eid, []).append(ev)

    def with_events(self, extra: Iterable[TrafficEvent]) -> "EventContext":
        return EventContext(self.graph, self.events + tuple(extra))

    def active_events(self, t: float) -> list[TrafficEvent]:
        return [ev for ev in self.events if ev.active_at(t)]

    def events_on_edge(self, edge_id: str, t: float) -> list[TrafficEvent]:
        return [ev for ev in self._per_edge.get(edge_id, ()) if ev.active_at(t)]

    def effective_speed_kmh(self, edge: Edge, t: float) -> float | None:
        hits = self._per_edge.get(edge.id)
        if not hits:
            return edge.free_flow_speed_kmh
        return effective_speed(edge, (ev for ev in hits if ev.active_at(t)))

    def signature(self, t: float) -> tuple[str, ...]:
        """Identifier of the active-event set; equal signatures imply equal speeds."""
        return tuple(ev.id for ev in self.events if ev.active_at(t))


@dataclass(frozen=True)
class MeasurementWindow:
    """Ordered speed observations on a single edge."""

    edge_id: str
    samples: tuple[tuple[float, float], ...]  # (timestamp, observed_speed_kmh)

    def __post_init__(self):
        ts = [s[0] for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise EventError(f"window on {self.edge_id!r}: timestamps must strictly increase")

    @property
    def span_s(self) -> float:
        if len(self.samples) < 2:
            return 0.0
        return self.samples[-1][0] - self.samples[0][0]


def detect_events(window: MeasurementWindow, graph: RoadGraph,
                  window_s: float = DETECTION_WINDOW_S,
                  threshold: float = DETECTION_SPEED_FRACTION) -> TrafficEvent | None:
    """Congestion detection on one edge from a trailing measurement window.

    Fires only when every sample in the trailing ``window_s`` seconds sits
    below ``threshold`` of free flow; the emitted event carries the mean as a
    speed multiplier and expires after ``window_s`` (persisting congestion is
    re-detected and re-emitted).
    """
    if window.edge_id not in graph.edges:
        raise GraphError(f"unknown edge id {window.edge_id!r}")
    if window.span_s < window_s:
        raise EventError(f"window on {window.edge_id!r} spans {window.span_s:.0f} s < {window_s:.0f} s")
    edge = graph.edges[window.edge_id]
    end = window.samples[-1][0]
    trailing = [s for s in window.samples if s[0] >= end - window_s]
    free = edge.free_flow_speed_kmh
    if any(speed >= threshold * free for _, speed in trailing):
        return None
    mean = sum(speed for _, speed in trailing) / len(trailing)
    fraction = mean / free
    return TrafficEvent(
        id=f"auto-{window.edge_id}-{int(end)}",
        kind="congestion",
        scope=EdgeScope((window.edge_id,)),
        severity=1.0 - fraction,
        effect=Effect(speed_multiplier=fraction),
        valid_from=end,
        valid_to=end + window_s,
        source="automatic",
    )


_MANDATORY_EVENT_FIELDS = ("id", "kind", "scope", "severity", "effect", "valid_from", "valid_to")


def parse_scope(raw: Mapping) -> EdgeScope | RadiusScope:
    if "edges" in raw:
        return EdgeScope(tuple(str(e) for e in raw["edges"]))
    if "center" in raw and "radius_m" in raw:
        return RadiusScope(float(raw["center"]["lat"]), float(raw["center"]["lon"]), float(raw["radius_m"]))
    raise EventError("scope must carry either 'edges' or 'center'+'radius_m'")


def parse_effect(raw: Mapping) -> Effect:
    if "speed_multiplier" in raw:
        return Effect(speed_multiplier=float(raw["speed_multiplier"]))
    if "speed_cap_kmh" in raw:
        return Effect(speed_cap_kmh=float(raw["speed_cap_kmh"]))
    if raw.get("closed"):
        return Effect(closed=True)
    raise EventError("effect must carry one of speed_multiplier, speed_cap_kmh, closed")


def ingest_external_event(document: Mapping) -> TrafficEvent:
    """Build a TrafficEvent from the simplified external-feed JSON format.

    Unknown kind strings degrade to ``congestion`` with a warning recorded on
    the event rather than rejecting the feed entry.
    """
    missing = [f for f in _MANDATORY_EVENT_FIELDS if f not in document]
    if missing:
        raise EventError(f"external event missing mandatory field(s): {', '.join(missing)}")
    kind = str(document["kind"])
    warnings: tuple[str, ...] = ()
    if kind not in EVENT_KINDS:
        warnings = (f"unknown kind {kind!r} mapped to congestion",)
        kind = "congestion"
    return TrafficEvent(
        id=str(document["id"]),
        kind=kind,
        scope=parse_scope(document["scope"]),
        severity=float(document["severity"]),
        effect=parse_effect(document["effect"]),
        valid_from=float(document["valid_from"]),
        valid_to=float(document["valid_to"]),
        source="external",
        warnings=warnings,
    )


def event_to_dict(event: TrafficEvent) -> dict:
    if isinstance(event.scope, EdgeScope):
        scope: dict = {"edges": list(event.scope.edge_ids)}
    else:
        scope = {"center": {"lat": event.scope.lat, "lon": event.scope.lon}, "radius_m": event.scope.radius_m}
    if event.effect.closed:
        effect: dict = {"closed": True}
    elif event.effect.speed_multiplier is not None:
        effect = {"speed_multiplier": event.effect.speed_multiplier}
    else:
        effect = {"speed_cap_kmh": event.effect.speed_cap_kmh}
    return {
        "id": event.id,
        "kind": event.kind,
        "scope": scope,
        "severity": event.severity,
        "effect": effect,
        "valid_from": event.valid_from,
        "valid_to": event.valid_to,
        "source": event.source,
    }


def event_from_dict(raw: Mapping) -> TrafficEvent:
    return TrafficEvent(
        id=str(raw["id"]),
        kind=str(raw["kind"]),
        scope=parse_scope(raw["scope"]),
        severity=float(raw["severity"]),
        effect=parse_effect(raw["effect"]),
        valid_from=float(raw["valid_from"]),
        valid_to=float(raw["valid_to"]),
        source=str(raw.get("source", "manual")),
    )


@dataclass(frozen=True)
class ResponseAdvisory:
    """Suggested handling of one affected route leg."""

    vehicle_id: str
    leg_index: int
    from_node: str
    to_node: str
    affected_stop: str
    detour: Path | None
    delay_delta_s: float


def response_plan(graph: RoadGraph, event: TrafficEvent, routes, t: float | None = None,
                  base_events: Iterable[TrafficEvent] = ()) -> list[ResponseAdvisory]:
    """Detours and delay deltas for every planned leg the event touches.

    ``routes`` is any iterable of objects with ``vehicle_id`` and ``stops``
    (each stop exposing ``node_id`` and ``via``); legs join consecutive
    stops.  Planned leg paths are priced without the event, detours with it.
    A disconnected detour is reported with an infinite delay.
    """
    when = event.valid_from if t is None else t
    scope = resolve_scope(graph, event)
    before = EventContext(graph, base_events)
    after = before.with_events([event])
    advisories: list[ResponseAdvisory] = []
    for route in routes:
        stops = list(route.stops)
        for i in range(1, len(stops)):
            a, b = stops[i - 1], stops[i]
            via = tuple(getattr(b, "via", ()))
            planned = leg_path(graph, a.node_id, b.node_id, when, before, via)
            if planned is None or not scope.intersection(planned.edge_ids):
                continue
            detour = leg_path(graph, a.node_id, b.node_id, when, after, via)
            delay = math.inf if detour is None else detour.total_time_s - planned.total_time_s
            advisories.append(ResponseAdvisory(
                vehicle_id=route.vehicle_id,
                leg_index=i,
                from_node=a.node_id,
                to_node=b.node_id,
                affected_stop=b.node_id,
                detour=detour,
                delay_delta_s=delay,
            ))
    return advisories


@dataclass(frozen=True)
class EffectSize:
    """How much infrastructure and planned work an event touches."""

    affected_edges: int
    affected_routes: int
    edge_ids: tuple[str, ...]
    vehicle_ids: tuple[str, ...]


def effect_size(graph: RoadGraph, event: TrafficEvent, routes=(),
                t: float | None = None,
                base_events: Iterable[TrafficEvent] = ()) -> EffectSize:
    """Estimate an event's blast radius: edges in scope plus routes whose
    planned legs traverse them."""
    edges = tuple(sorted(resolve_scope(graph, event)))
    advisories = response_plan(graph, event, routes, t=t, base_events=base_events)
    vehicles = tuple(sorted({a.vehicle_id for a in advisories}))
    return EffectSize(
        affected_edges=len(edges),
        affected_routes=len(vehicles),
        edge_ids=edges,
        vehicle_ids=vehicles,
    )


@dataclass(frozen=True)
class MonitoredRoute:
    id: str
    from_node: str
    to_node: str


@dataclass(frozen=True)
class RttiSnapshot:
    timestamp: float
    per_edge: dict[str, dict]
    monitored_routes: dict[str, float | None]
    active_events: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "per_edge": self.per_edge,
            "monitored_routes": self.monitored_routes,
            "active_events": list(self.active_events),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def publish_rtti(graph: RoadGraph, events: Iterable[TrafficEvent],
                 monitored_routes: Sequence[MonitoredRoute], t: float) -> RttiSnapshot:
    """Consistent snapshot of per-edge speeds/LoS and monitored route times at ``t``.

    Route travel times are whole shortest-path queries under the same
    context, so the snapshot never disagrees with an independent recomputation.
    """
    ctx = EventContext(graph, events)
    per_edge: dict[str, dict] = {}
    for eid in sorted(graph.edges):
        edge = graph.edges[eid]
        speed = ctx.effective_speed_kmh(edge, t)
        per_edge[eid] = {
            "effective_speed_kmh": speed,
            "los": classify_los(speed, edge.free_flow_speed_kmh),
        }
    routes: dict[str, float | None] = {}
    for mr in monitored_routes:
        for endpoint in (mr.from_node, mr.to_node):
            if endpoint not in graph.nodes:
                raise GraphError(f"monitored route {mr.id!r}: unknown node {endpoint!r}")
        path = shortest_path(graph, mr.from_node, mr.to_node, t, ctx)
        routes[mr.id] = None if path is None else path.total_time_s
    return RttiSnapshot(
        timestamp=t,
        per_edge=per_edge,
        monitored_routes=routes,
        active_events=ctx.signature(t),
    )
