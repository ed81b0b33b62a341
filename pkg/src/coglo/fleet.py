"""Vehicles, orders, stops, routes and plans, with validation and ETAs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

from .network import RoadGraph

DEFAULT_SERVICE_TIME_S = 120.0

VEHICLE_STATUSES = ("available", "en_route", "broken")

ORDER_STATES = ("announced", "assigned", "picked_up", "at_exchange", "in_transit", "delivered", "failed")

# Legal lifecycle edges; assigned -> announced is the un-assignment path used
# when a planned order is pushed back to the pool (breakdown, rejection).
LEGAL_TRANSITIONS: dict[str, frozenset[str]] = {
    "announced": frozenset({"assigned", "failed"}),
    "assigned": frozenset({"picked_up", "announced"}),
    "picked_up": frozenset({"in_transit", "at_exchange"}),
    "at_exchange": frozenset({"in_transit"}),
    "in_transit": frozenset({"delivered", "failed", "at_exchange"}),
    "delivered": frozenset(),
    "failed": frozenset(),
}

STOP_ACTIONS = ("depot_start", "pickup", "delivery", "exchange_handover", "depot_end")

UNREACHABLE = math.inf


class PlanError(ValueError):
    """Raised for structurally unusable plan inputs."""


class IllegalTransition(ValueError):
    def __init__(self, order_id: str, source: str, target: str):
        super().__init__(f"order {order_id!r}: illegal transition {source} -> {target}")
        self.source = source
        self.target = target


@dataclass(frozen=True)
class Vehicle:
    id: str
    capacity_units: int
    home_depot: str
    shift_start: float
    shift_end: float
    cost_per_km: float = 1.0
    fixed_cost: float = 0.0
    fuel_base_l_per_km: float = 0.1
    fuel_load_coeff_l_per_km: float = 0.05
    status: str = "available"

    def __post_init__(self):
        if self.capacity_units <= 0:
            raise PlanError(f"vehicle {self.id!r}: capacity must be positive")
        if not self.shift_start < self.shift_end:
            raise PlanError(f"vehicle {self.id!r}: shift start must precede end")
        if self.fuel_base_l_per_km < 0 or self.fuel_load_coeff_l_per_km < 0:
            raise PlanError(f"vehicle {self.id!r}: fuel coefficients must be >= 0")


@dataclass(frozen=True)
class Order:
    id: str
    size_units: int
    pickup: str
    delivery: str
    announce_time: float
    sla_deadline: float
    tw_delivery: tuple[float, float] | None = None
    priority: int = 0
    state: str = "announced"
    via_waypoints: tuple[str, ...] = ()

    def __post_init__(self):
        if self.size_units <= 0:
            raise PlanError(f"order {self.id!r}: size must be positive")
        if self.pickup == self.delivery:
            raise PlanError(f"order {self.id!r}: pickup equals delivery")
        if self.tw_delivery is not None and not self.tw_delivery[0] < self.tw_delivery[1]:
            raise PlanError(f"order {self.id!r}: time window must be ordered")
        if self.state not in ORDER_STATES:
            raise PlanError(f"order {self.id!r}: unknown state {self.state!r}")


def transition(order: Order, target: str) -> Order:
    """Move an order along its lifecycle; illegal edges raise."""
    if target not in ORDER_STATES:
        raise IllegalTransition(order.id, order.state, target)
    if target not in LEGAL_TRANSITIONS[order.state]:
        raise IllegalTransition(order.id, order.state, target)
    return replace(order, state=target)


@dataclass(frozen=True)
class Stop:
    node_id: str
    action: str
    order_ids: tuple[str, ...] = ()
    eta: float | None = None
    service_time_s: float = 0.0
    slack_s: float = 0.0
    leg_time_s: float = 0.0
    leg_distance_m: float = 0.0
    via: tuple[str, ...] = ()

    def __post_init__(self):
        if self.action not in STOP_ACTIONS:
            raise PlanError(f"stop at {self.node_id!r}: unknown action {self.action!r}")

    @property
    def departure(self) -> float | None:
        if self.eta is None:
            return None
        return self.eta + self.service_time_s + self.slack_s


@dataclass(frozen=True)
class Route:
    """Ordered stop sequence for one vehicle, depot to depot.

    ``locked`` counts leading stops that are committed (visited or imminent)
    and must not be reordered or removed by any optimizer.
    """

    vehicle_id: str
    stops: tuple[Stop, ...]
    locked: int = 1

    def __post_init__(self):
        if len(self.stops) < 2:
            raise PlanError(f"route {self.vehicle_id!r}: needs depot_start and depot_end")
        if self.stops[0].action != "depot_start" or self.stops[-1].action != "depot_end":
            raise PlanError(f"route {self.vehicle_id!r}: must start depot_start and end depot_end")

    @property
    def is_empty(self) -> bool:
        return len(self.stops) == 2

    def order_ids(self) -> list[str]:
        seen: list[str] = []
        for stop in self.stops:
            if stop.action == "pickup":
                seen.extend(stop.order_ids)
        return seen


@dataclass(frozen=True)
class Plan:
    routes: dict[str, Route]
    unassigned: tuple[str, ...] = ()
    objective: float | None = None

    def route_list(self) -> list[Route]:
        return [self.routes[vid] for vid in sorted(self.routes)]


def empty_route(vehicle: Vehicle, t0: float) -> Route:
    start_eta = max(t0, vehicle.shift_start)
    return Route(
        vehicle_id=vehicle.id,
        stops=(
            Stop(node_id=vehicle.home_depot, action="depot_start", eta=start_eta),
            Stop(node_id=vehicle.home_depot, action="depot_end", eta=start_eta),
        ),
    )


# A leg function prices one stop-to-stop move: (from, to, depart_t, via) ->
# (time_s, distance_m) or None when unreachable.
LegFn = Callable[[str, str, float, tuple[str, ...]], "tuple[float, float] | None"]


def compute_etas(route: Route, vehicle: Vehicle, leg_fn: LegFn, t0: float) -> Route:
    """Propagate ETAs along a route from its locked anchor.

    Stops before ``route.locked`` keep their recorded times (they are
    history); from the anchor on, each ETA adds the predecessor's service
    time, slack, and the leg travel time priced at the departure snapshot.
    An unreachable leg poisons all downstream ETAs.
    """
    stops = list(route.stops)
    anchor = max(route.locked, 1)
    if stops[0].eta is None:
        stops[0] = replace(stops[0], eta=max(t0, vehicle.shift_start))
    for i in range(anchor, len(stops)):
        prev = stops[i - 1]
        if prev.eta is None or prev.eta == UNREACHABLE:
            stops[i] = replace(stops[i], eta=UNREACHABLE, leg_time_s=0.0, leg_distance_m=0.0)
            continue
        depart = prev.eta + prev.service_time_s + prev.slack_s
        leg = leg_fn(prev.node_id, stops[i].node_id, depart, stops[i].via)
        if leg is None:
            stops[i] = replace(stops[i], eta=UNREACHABLE, leg_time_s=0.0, leg_distance_m=0.0)
            continue
        leg_time, leg_dist = leg
        stops[i] = replace(stops[i], eta=depart + leg_time, leg_time_s=leg_time, leg_distance_m=leg_dist)
    return replace(route, stops=tuple(stops))


@dataclass(frozen=True)
class Violation:
    kind: str  # capacity | precedence | shift | unknown_node | duplicate_order
    vehicle_id: str | None
    stop_index: int | None
    order_id: str | None
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    lateness_total_min: float

    @property
    def ok(self) -> bool:
        return not self.violations


def _load_delta(stop: Stop, orders: Mapping[str, Order]) -> int:
    sizes = sum(orders[oid].size_units for oid in stop.order_ids if oid in orders)
    if stop.action == "pickup":
        return sizes
    if stop.action in ("delivery", "exchange_handover"):
        return -sizes
    return 0


def validate_plan(plan: Plan, graph: RoadGraph, vehicles: Mapping[str, Vehicle],
                  orders: Mapping[str, Order]) -> ValidationReport:
    """Report every hard violation; lateness is soft and informational only.

    Hard checks: capacity along the running load, pickup-before-delivery on
    the same route, shift windows (an unreachable ETA counts as a shift
    breach), unknown nodes, and duplicated order placement.
    """
    violations: list[Violation] = []
    lateness_s = 0.0
    placements: dict[str, int] = {}

    for vid in sorted(plan.routes):
        route = plan.routes[vid]
        vehicle = vehicles.get(vid)
        if vehicle is None:
            violations.append(Violation("unknown_node", vid, None, None, f"route references unknown vehicle {vid!r}"))
            continue
        load = 0
        picked: set[str] = set()
        for i, stop in enumerate(route.stops):
            if stop.node_id not in graph.nodes:
                violations.append(Violation("unknown_node", vid, i, None, f"stop node {stop.node_id!r} not in graph"))
            for oid in stop.order_ids:
                if oid not in orders:
                    violations.append(Violation("unknown_node", vid, i, oid, f"stop references unknown order {oid!r}"))
            if stop.action == "pickup":
                for oid in stop.order_ids:
                    placements[oid] = placements.get(oid, 0) + 1
                    picked.add(oid)
            elif stop.action in ("delivery", "exchange_handover"):
                for oid in stop.order_ids:
                    if oid not in picked:
                        violations.append(Violation("precedence", vid, i, oid,
                                                    f"delivery of {oid!r} precedes its pickup on route {vid!r}"))
            load += _load_delta(stop, orders)
            if load > vehicle.capacity_units:
                violations.append(Violation("capacity", vid, i, None,
                                            f"load {load} exceeds capacity {vehicle.capacity_units} at stop {i}"))
            if stop.eta is not None and not route.is_empty:
                if stop.eta == UNREACHABLE or stop.eta > vehicle.shift_end:
                    violations.append(Violation("shift", vid, i, None,
                                                f"stop {i} ETA outside shift of {vid!r}"))
            if stop.action == "delivery" and stop.eta not in (None, UNREACHABLE):
                for oid in stop.order_ids:
                    order = orders.get(oid)
                    if order is None:
                        continue
                    lateness_s += max(0.0, stop.eta - order.sla_deadline)
                    if order.tw_delivery is not None:
                        lateness_s += max(0.0, stop.eta - order.tw_delivery[1])

    for oid in plan.unassigned:
        placements[oid] = placements.get(oid, 0) + 1
    for oid, count in sorted(placements.items()):
        if count > 1:
            violations.append(Violation("duplicate_order", None, None, oid,
                                        f"order {oid!r} placed {count} times"))

    return ValidationReport(tuple(violations), lateness_s / 60.0)


def vehicle_to_dict(vehicle: Vehicle) -> dict:
    return {
        "id": vehicle.id,
        "capacity_units": vehicle.capacity_units,
        "home_depot": vehicle.home_depot,
        "shift": [vehicle.shift_start, vehicle.shift_end],
        "cost_per_km": vehicle.cost_per_km,
        "fixed_cost": vehicle.fixed_cost,
        "fuel_base_l_per_km": vehicle.fuel_base_l_per_km,
        "fuel_load_coeff_l_per_km": vehicle.fuel_load_coeff_l_per_km,
        "status": vehicle.status,
    }


def vehicle_from_dict(raw: Mapping) -> Vehicle:
    return Vehicle(
        id=str(raw["id"]),
        capacity_units=int(raw["capacity_units"]),
        home_depot=str(raw["home_depot"]),
        shift_start=float(raw["shift"][0]),
        shift_end=float(raw["shift"][1]),
        cost_per_km=float(raw.get("cost_per_km", 1.0)),
        fixed_cost=float(raw.get("fixed_cost", 0.0)),
        fuel_base_l_per_km=float(raw.get("fuel_base_l_per_km", 0.1)),
        fuel_load_coeff_l_per_km=float(raw.get("fuel_load_coeff_l_per_km", 0.05)),
        status=str(raw.get("status", "available")),
    )


def order_to_dict(order: Order) -> dict:
    return {
        "id": order.id,
        "size_units": order.size_units,
        "pickup": order.pickup,
        "delivery": order.delivery,
        "announce_time": order.announce_time,
        "sla_deadline": order.sla_deadline,
        "tw_delivery": list(order.tw_delivery) if order.tw_delivery else None,
        "priority": order.priority,
        "state": order.state,
        "via_waypoints": list(order.via_waypoints),
    }


def order_from_dict(raw: Mapping) -> Order:
    tw = raw.get("tw_delivery")
    return Order(
        id=str(raw["id"]),
        size_units=int(raw["size_units"]),
        pickup=str(raw["pickup"]),
        delivery=str(raw["delivery"]),
        announce_time=float(raw["announce_time"]),
        sla_deadline=float(raw["sla_deadline"]),
        tw_delivery=(float(tw[0]), float(tw[1])) if tw else None,
        priority=int(raw.get("priority", 0)),
        state=str(raw.get("state", "announced")),
        via_waypoints=tuple(raw.get("via_waypoints", ())),
    )


def force_state(order: Order, target: str) -> Order:
    """Walk the shortest legal transition chain to ``target``.

    Helper for plan deltas that imply multi-hop lifecycle moves (a stranded
    picked-up parcel failing passes through in_transit on the way).
    """
    if order.state == target:
        return order
    frontier = [(order.state, [])]
    seen = {order.state}
    while frontier:
        state, chain = frontier.pop(0)
        for nxt in sorted(LEGAL_TRANSITIONS[state]):
            if nxt in seen:
                continue
            if nxt == target:
                for step in chain + [nxt]:
                    order = transition(order, step)
                return order
            seen.add(nxt)
            frontier.append((nxt, chain + [nxt]))
    raise IllegalTransition(order.id, order.state, target)


def plan_to_dict(plan: Plan) -> dict:
    routes = {}
    for vid in sorted(plan.routes):
        route = plan.routes[vid]
        routes[vid] = {
            "vehicle_id": route.vehicle_id,
            "locked": route.locked,
            "stops": [
                {
                    "node_id": s.node_id,
                    "action": s.action,
                    "order_ids": list(s.order_ids),
                    "eta": None if s.eta == UNREACHABLE else s.eta,
                    "service_time_s": s.service_time_s,
                    "slack_s": s.slack_s,
                    "leg_time_s": s.leg_time_s,
                    "leg_distance_m": s.leg_distance_m,
                    "via": list(s.via),
                }
                for s in route.stops
            ],
        }
    return {
        "routes": routes,
        "unassigned": sorted(plan.unassigned),
        "objective": plan.objective,
    }


def plan_to_json(plan: Plan) -> str:
    return json.dumps(plan_to_dict(plan), sort_keys=True)


def plan_to_geojson(plan: Plan, graph: RoadGraph, orders: Mapping[str, Order] | None = None) -> dict:
    """One LineString per route leg with vehicle, load and ETA properties.

    Legs are drawn node-to-node (straight segments); path shapes live in the
    network layer's exports.  Load is in size units when ``orders`` is given,
    otherwise a parcel count.
    """
    features = []
    for vid in sorted(plan.routes):
        route = plan.routes[vid]
        load = 0
        for i in range(1, len(route.stops)):
            a, b = route.stops[i - 1], route.stops[i]
            if a.node_id not in graph.nodes or b.node_id not in graph.nodes:
                continue
            if orders is not None:
                load += _load_delta(a, orders)
            else:
                load += _count_load(a)
            na, nb = graph.nodes[a.node_id], graph.nodes[b.node_id]
            features.append({
                "type": "Feature",
                "geometry": {"type": "LineString",
                             "coordinates": [[na.lon, na.lat], [nb.lon, nb.lat]]},
                "properties": {
                    "vehicle": vid,
                    "load": load,
                    "eta": None if b.eta == UNREACHABLE else b.eta,
                    "leg_index": i,
                },
            })
    return {"type": "FeatureCollection", "features": features}


def _count_load(stop: Stop) -> int:
    if stop.action == "pickup":
        return len(stop.order_ids)
    if stop.action in ("delivery", "exchange_handover"):
        return -len(stop.order_ids)
    return 0
