"""Solvers for routing, packing and assignment, plus the multi-modal
pipeline and anticipation buffers.

The CVRP family works on pickup-and-delivery order pairs: an exhaustive
branch-and-bound oracle for tiny instances, regret-2 insertion for
construction, and a fixed four-neighborhood best-improvement local search.
All solvers are pure functions of their inputs plus a seed.
"""
from __future__ import annotations

import math
import random
import time as _time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .fleet import (
    DEFAULT_SERVICE_TIME_S,
    Order,
    Plan,
    Route,
    Stop,
    UNREACHABLE,
    Vehicle,
    compute_etas,
    empty_route,
)
from .network import RoadGraph


class SolverError(ValueError):
    pass


class SizeGuardError(SolverError):
    """Exact solver asked for an instance above its enumeration guard."""


class MissingEtasError(SolverError):
    pass


# ---------------------------------------------------------------------------
# Travel providers
# ---------------------------------------------------------------------------

class MatrixProvider:
    """Leg costs from fixed time/distance matrices (time-independent)."""

    def __init__(self, node_ids: Sequence[str], time_matrix: np.ndarray,
                 distance_matrix: np.ndarray | None = None):
        self.node_ids = list(node_ids)
        self.index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.time_matrix = np.asarray(time_matrix, dtype=float)
        if distance_matrix is None:
            distance_matrix = self.time_matrix
        self.distance_matrix = np.asarray(distance_matrix, dtype=float)

    def leg(self, a: str, b: str, depart_t: float, via: tuple[str, ...] = ()):
        total_t = 0.0
        total_d = 0.0
        chain = [a, *via, b]
        for u, v in zip(chain, chain[1:]):
            i, j = self.index[u], self.index[v]
            t = float(self.time_matrix[i, j])
            if not math.isfinite(t):
                return None
            total_t += t
            total_d += float(self.distance_matrix[i, j])
        return total_t, total_d


class GraphProvider:
    """Leg costs from shortest paths on a road graph under an event context.

    Single-source results are cached per (source, active-event signature), so
    repeated queries inside a solve cost one dictionary lookup.
    """

    def __init__(self, graph: RoadGraph, ctx=None):
        self.graph = graph
        self.ctx = ctx
        self._cache: dict[tuple[str, tuple[str, ...]], dict[str, tuple[float, float]]] = {}

    def _signature(self, t: float) -> tuple[str, ...]:
        if self.ctx is None:
            return ()
        return self.ctx.signature(t)

    def _single_source(self, src: str, t: float) -> dict[str, tuple[float, float]]:
        key = (src, self._signature(t))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        import heapq

        table: dict[str, tuple[float, float]] = {}
        heap: list[tuple[float, tuple[str, ...], str, float]] = [(0.0, (), src, 0.0)]
        settled: set[str] = set()
        while heap:
            cost, edge_seq, node, dist = heapq.heappop(heap)
            if node in settled:
                continue
            settled.add(node)
            table[node] = (cost, dist)
            for eid in self.graph.adjacency.get(node, ()):
                edge = self.graph.edges[eid]
                if edge.to_node in settled:
                    continue
                if self.ctx is None:
                    speed = edge.free_flow_speed_kmh
                else:
                    speed = self.ctx.effective_speed_kmh(edge, t)
                if speed is None:
                    continue
                step = edge.length_m * 3.6 / speed
                heapq.heappush(heap, (cost + step, edge_seq + (eid,), edge.to_node, dist + edge.length_m))
        self._cache[key] = table
        return table

    def leg(self, a: str, b: str, depart_t: float, via: tuple[str, ...] = ()):
        total_t = 0.0
        total_d = 0.0
        chain = [a, *via, b]
        for u, v in zip(chain, chain[1:]):
            entry = self._single_source(u, depart_t).get(v)
            if entry is None:
                return None
            total_t += entry[0]
            total_d += entry[1]
        return total_t, total_d


# ---------------------------------------------------------------------------
# Instances, weights, objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CvrpInstance:
    vehicles: tuple[Vehicle, ...]
    orders: tuple[Order, ...]
    provider: object
    t0: float
    service_time_s: float = DEFAULT_SERVICE_TIME_S

    def active_vehicles(self) -> list[Vehicle]:
        return sorted((v for v in self.vehicles if v.status != "broken"), key=lambda v: v.id)

    def orders_by_id(self) -> dict[str, Order]:
        return {o.id: o for o in self.orders}


@dataclass(frozen=True)
class ObjectiveWeights:
    w_dist: float = 1.0       # cost per km driven
    w_time: float = 0.0       # cost per hour of route duration
    w_late: float = 0.0       # cost per minute past an order's deadline
    w_vehicle: float = 0.0    # fixed cost per used vehicle
    w_unassigned: float = 1e6  # cost per order left unserved

    def __post_init__(self):
        for name in ("w_dist", "w_time", "w_late", "w_vehicle", "w_unassigned"):
            if getattr(self, name) < 0:
                raise SolverError(f"{name} must be >= 0")

    def check_for(self, instance: CvrpInstance) -> None:
        """Reject an unassigned penalty a single order could plausibly beat."""
        nodes = sorted({v.home_depot for v in instance.vehicles}
                       | {o.pickup for o in instance.orders}
                       | {o.delivery for o in instance.orders})
        diam_t = 0.0
        diam_d = 0.0
        for a in nodes:
            for b in nodes:
                leg = instance.provider.leg(a, b, instance.t0, ())
                if leg is None:
                    continue
                diam_t = max(diam_t, leg[0])
                diam_d = max(diam_d, leg[1])
        bound = (self.w_dist * 3.0 * diam_d / 1000.0
                 + self.w_time * (3.0 * diam_t + 2.0 * instance.service_time_s) / 3600.0
                 + self.w_vehicle)
        if self.w_unassigned <= bound:
            raise SolverError(
                f"w_unassigned {self.w_unassigned} does not dominate plausible "
                f"single-order routing cost {bound:.1f}")


def route_cost(route: Route, weights: ObjectiveWeights, orders: Mapping[str, Order]) -> float:
    """Cost of one route from its recorded ETAs and leg stats."""
    first = route.stops[0]
    last = route.stops[-1]
    if first.eta is None or last.eta is None:
        raise MissingEtasError(f"route {route.vehicle_id!r} lacks ETAs")
    dist_m = 0.0
    late_s = 0.0
    for stop in route.stops:
        if stop.eta is None:
            raise MissingEtasError(f"route {route.vehicle_id!r} lacks ETAs")
        if stop.eta == UNREACHABLE:
            return math.inf
        dist_m += stop.leg_distance_m
        if stop.action == "delivery":
            for oid in stop.order_ids:
                order = orders.get(oid)
                if order is not None:
                    late_s += max(0.0, stop.eta - order.sla_deadline)
    duration_h = (last.eta - first.eta) / 3600.0
    cost = (weights.w_dist * dist_m / 1000.0
            + weights.w_time * duration_h
            + weights.w_late * late_s / 60.0)
    if not route.is_empty:
        cost += weights.w_vehicle
    return cost


def objective(plan: Plan, weights: ObjectiveWeights, orders: Mapping[str, Order]) -> float:
    """Weighted-sum plan cost; requires ETAs on every stop."""
    total = 0.0
    for vid in sorted(plan.routes):
        total += route_cost(plan.routes[vid], weights, orders)
    total += weights.w_unassigned * len(plan.unassigned)
    return total


# ---------------------------------------------------------------------------
# Route feasibility and insertion primitives
# ---------------------------------------------------------------------------

def route_hard_feasible(route: Route, vehicle: Vehicle, orders: Mapping[str, Order]) -> bool:
    if route.is_empty:
        return True  # parked vehicle; its depot anchor is bookkeeping
    load = 0
    picked: set[str] = set()
    for stop in route.stops:
        if stop.eta is None or stop.eta == UNREACHABLE or stop.eta > vehicle.shift_end:
            return False
        if stop.action == "pickup":
            for oid in stop.order_ids:
                load += orders[oid].size_units
                picked.add(oid)
        elif stop.action in ("delivery", "exchange_handover"):
            for oid in stop.order_ids:
                if oid not in picked:
                    return False
                load -= orders[oid].size_units
        if load > vehicle.capacity_units:
            return False
    return True


def order_stops(order: Order, service_time_s: float) -> tuple[Stop, Stop]:
    pickup = Stop(node_id=order.pickup, action="pickup", order_ids=(order.id,),
                  service_time_s=service_time_s)
    delivery = Stop(node_id=order.delivery, action="delivery", order_ids=(order.id,),
                    service_time_s=service_time_s, via=order.via_waypoints)
    return pickup, delivery


def try_insertion(route: Route, vehicle: Vehicle, order: Order, pickup_pos: int,
                  delivery_pos: int, instance: CvrpInstance, weights: ObjectiveWeights,
                  orders: Mapping[str, Order]) -> tuple[Route, float] | None:
    """Insert an order's stop pair at fixed positions; None when infeasible.

    ``pickup_pos``/``delivery_pos`` are indices into the existing stop list;
    the pickup lands before the stop currently at ``pickup_pos`` and the
    delivery before the one at ``delivery_pos`` (``pickup_pos <=
    delivery_pos``).  Returns the re-timed route and its cost.
    """
    stops = route.stops
    pickup, delivery = order_stops(order, instance.service_time_s)
    new_stops = (stops[:pickup_pos] + (pickup,) + stops[pickup_pos:delivery_pos]
                 + (delivery,) + stops[delivery_pos:])
    candidate = replace(route, stops=new_stops)
    candidate = compute_etas(candidate, vehicle, instance.provider.leg, instance.t0)
    if not route_hard_feasible(candidate, vehicle, orders):
        return None
    return candidate, route_cost(candidate, weights, orders)


def best_insertion(route: Route, vehicle: Vehicle, order: Order, instance: CvrpInstance,
                   weights: ObjectiveWeights, orders: Mapping[str, Order],
                   base_cost: float | None = None) -> tuple[Route, float, int, int] | None:
    """Cheapest feasible position pair in one route's unlocked suffix."""
    if vehicle.status == "broken":
        return None
    if base_cost is None:
        base_cost = route_cost(route, weights, orders)
    floor = max(route.locked, 1)
    n = len(route.stops)
    best: tuple[float, int, int, Route] | None = None
    for ip in range(floor, n):
        for idl in range(ip, n):
            result = try_insertion(route, vehicle, order, ip, idl, instance, weights, orders)
            if result is None:
                continue
            candidate, cost = result
            delta = cost - base_cost
            if best is None or delta < best[0]:
                best = (delta, ip, idl, candidate)
    if best is None:
        return None
    delta, ip, idl, candidate = best
    return candidate, delta, ip, idl


@dataclass(frozen=True)
class InsertionResult:
    plan: Plan
    delta: float
    vehicle_id: str
    pickup_pos: int
    delivery_pos: int
    objective_after: float


def insert_order(plan: Plan, order: Order, instance: CvrpInstance,
                 weights: ObjectiveWeights) -> InsertionResult | None:
    """Cheapest feasible single-order insertion over every vehicle and position.

    Existing stop order is preserved and locked prefixes are never touched;
    candidates are ranked by full plan objective, ties resolved by
    (vehicle id, pickup position, delivery position).  Returns ``None`` when
    no feasible slot exists anywhere.
    """
    orders = dict(instance.orders_by_id())
    orders[order.id] = order
    vehicles = {v.id: v for v in instance.vehicles}
    base_unassigned = tuple(o for o in plan.unassigned if o != order.id)
    base = objective(plan, weights, orders)

    best: tuple[float, str, int, int, Route] | None = None
    for vid in sorted(plan.routes):
        vehicle = vehicles.get(vid)
        if vehicle is None or vehicle.status == "broken":
            continue
        route = plan.routes[vid]
        found = best_insertion(route, vehicle, order, instance, weights, orders)
        if found is None:
            continue
        candidate, _, ip, idl = found
        trial = Plan(routes={**plan.routes, vid: candidate}, unassigned=base_unassigned)
        obj = objective(trial, weights, orders)
        if best is None or obj < best[0]:
            best = (obj, vid, ip, idl, candidate)
    if best is None:
        return None
    obj, vid, ip, idl, candidate = best
    new_plan = Plan(routes={**plan.routes, vid: candidate}, unassigned=base_unassigned,
                    objective=obj)
    return InsertionResult(plan=new_plan, delta=obj - base, vehicle_id=vid,
                           pickup_pos=ip, delivery_pos=idl, objective_after=obj)


def insert_delivery_only(plan: Plan, order: Order, vehicle_id: str, instance: CvrpInstance,
                         weights: ObjectiveWeights) -> Plan | None:
    """Re-insert a pending delivery into its own route's unlocked suffix.

    Used for retrying a missed delivery: the parcel is already on board, so
    only the delivery stop moves and only within the same vehicle.
    """
    orders = instance.orders_by_id()
    vehicles = {v.id: v for v in instance.vehicles}
    route = plan.routes.get(vehicle_id)
    vehicle = vehicles.get(vehicle_id)
    if route is None or vehicle is None or vehicle.status == "broken":
        return None
    _, delivery = order_stops(order, instance.service_time_s)
    floor = max(route.locked, 1)
    best: tuple[float, Route] | None = None
    for pos in range(floor, len(route.stops)):
        new_stops = route.stops[:pos] + (delivery,) + route.stops[pos:]
        candidate = compute_etas(replace(route, stops=new_stops), vehicle,
                                 instance.provider.leg, instance.t0)
        if not _delivery_retry_feasible(candidate, vehicle, orders):
            continue
        cost = route_cost(candidate, weights, orders)
        if best is None or cost < best[0]:
            best = (cost, candidate)
    if best is None:
        return None
    return Plan(routes={**plan.routes, vehicle_id: best[1]}, unassigned=plan.unassigned)


def _delivery_retry_feasible(route: Route, vehicle: Vehicle, orders: Mapping[str, Order]) -> bool:
    # The onboard parcel was picked up in the locked prefix, so the plain
    # precedence check would reject it; only timing and capacity matter here.
    for stop in route.stops:
        if stop.eta is None or stop.eta == UNREACHABLE or stop.eta > vehicle.shift_end:
            return False
    return True


# ---------------------------------------------------------------------------
# Construction: regret-2 insertion
# ---------------------------------------------------------------------------

def cvrp_construct(instance: CvrpInstance, weights: ObjectiveWeights, seed: int = 0) -> Plan:
    """Feasible plan via regret-2 insertion.

    Repeatedly inserts the unrouted order whose best insertion is most at
    risk (largest second-best minus best delta) at its best position; orders
    with a single feasible slot take absolute priority, and orders with no
    feasible slot end up unassigned.  Deterministic for a given seed.
    """
    weights.check_for(instance)
    rng = random.Random(seed)
    orders = instance.orders_by_id()
    vehicles = instance.active_vehicles()
    routes: dict[str, Route] = {v.id: empty_route(v, instance.t0) for v in vehicles}
    vehicle_map = {v.id: v for v in vehicles}
    costs = {vid: route_cost(routes[vid], weights, orders) for vid in routes}
    pending = sorted(orders.values(), key=lambda o: o.id)
    priority = {o.id: rng.random() for o in pending}
    unassigned: list[str] = []

    while pending:
        scored: list[tuple[float, float, float, str, tuple]] = []
        infeasible: list[Order] = []
        for order in pending:
            found: list[tuple[float, str, int, int, Route]] = []
            for vid in sorted(routes):
                res = best_insertion(routes[vid], vehicle_map[vid], order, instance,
                                     weights, orders, base_cost=costs[vid])
                if res is not None:
                    candidate, delta, ip, idl = res
                    found.append((delta, vid, ip, idl, candidate))
            if not found:
                infeasible.append(order)
                continue
            found.sort(key=lambda item: (item[0], item[1]))
            best = found[0]
            regret = math.inf if len(found) == 1 else found[1][0] - best[0]
            scored.append((-regret, best[0], priority[order.id], order.id, best))
        if not scored:
            unassigned.extend(o.id for o in infeasible)
            break
        scored.sort(key=lambda item: (item[0], item[1], item[2], item[3]))
        _, _, _, oid, best = scored[0]
        delta, vid, ip, idl, candidate = best
        routes[vid] = candidate
        costs[vid] = route_cost(candidate, weights, orders)
        pending = [o for o in pending if o.id != oid]
        # Orders that just lost their last slot surface on the next pass.

    plan = Plan(routes=routes, unassigned=tuple(sorted(unassigned)))
    return replace(plan, objective=objective(plan, weights, orders))


# ---------------------------------------------------------------------------
# Improvement: best-improvement local search over four neighborhoods
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveBudget:
    max_iterations: int = 50
    max_seconds: float | None = None  # wall budget breaks determinism; off by default


def _order_positions(route: Route) -> dict[str, tuple[int, int]]:
    """oid -> (pickup index, delivery index) for singleton-stop orders."""
    pickups: dict[str, int] = {}
    pairs: dict[str, tuple[int, int]] = {}
    for i, stop in enumerate(route.stops):
        if len(stop.order_ids) != 1:
            continue
        oid = stop.order_ids[0]
        if stop.action == "pickup":
            pickups[oid] = i
        elif stop.action == "delivery" and oid in pickups:
            pairs[oid] = (pickups[oid], i)
    return pairs


def _remove_order(route: Route, oid: str) -> Route | None:
    pairs = _order_positions(route)
    if oid not in pairs:
        return None
    ip, idl = pairs[oid]
    if ip < route.locked or idl < route.locked:
        return None
    stops = tuple(s for j, s in enumerate(route.stops) if j not in (ip, idl))
    return replace(route, stops=stops)


def _movable_orders(route: Route, orders: Mapping[str, Order]) -> list[str]:
    out = []
    for oid, (ip, idl) in sorted(_order_positions(route).items()):
        if ip >= route.locked and idl >= route.locked:
            state = orders[oid].state if oid in orders else "announced"
            if state in ("announced", "assigned"):
                out.append(oid)
    return out


def cvrp_improve(plan: Plan, instance: CvrpInstance, weights: ObjectiveWeights,
                 budget: SolveBudget = SolveBudget(),
                 mutable_vids: set[str] | None = None) -> Plan:
    """Best-improvement local search; never worsens the objective.

    Neighborhoods: relocate one order pair, swap two order pairs across
    routes, intra-route 2-opt, and re-insertion of one unassigned order.
    Sweeps apply the single best improving move until a local optimum or the
    budget runs out.  ``mutable_vids`` restricts moves to a subset of routes.
    """
    weights.check_for(instance)
    orders = instance.orders_by_id()
    vehicle_map = {v.id: v for v in instance.vehicles}
    routes = dict(plan.routes)
    unassigned = list(plan.unassigned)
    vids = sorted(routes if mutable_vids is None else
                  (set(routes) & mutable_vids))
    for vid in vids:
        vehicle = vehicle_map.get(vid)
        if vehicle is None:
            raise SolverError(f"plan references unknown vehicle {vid!r}")
        if not route_hard_feasible(routes[vid], vehicle, orders):
            raise SolverError(f"input plan infeasible on route {vid!r}")
    if budget.max_iterations <= 0:
        return plan

    def recost(vid: str, route: Route) -> float:
        return route_cost(route, weights, orders)

    costs = {vid: recost(vid, routes[vid]) for vid in routes}
    started = _time.monotonic()

    iteration = 0
    while iteration < budget.max_iterations:
        if budget.max_seconds is not None and _time.monotonic() - started > budget.max_seconds:
            break
        iteration += 1
        best_move: tuple[float, int, dict] | None = None  # (delta, ordinal, payload)
        ordinal = 0

        def consider(delta: float, payload: dict):
            nonlocal best_move, ordinal
            ordinal += 1
            if delta < -1e-9 and (best_move is None or delta < best_move[0]):
                best_move = (delta, ordinal, payload)

        active = [vid for vid in vids if vehicle_map[vid].status != "broken"]

        # relocate one order pair
        for vid_a in active:
            route_a = routes[vid_a]
            for oid in _movable_orders(route_a, orders):
                removed = _remove_order(route_a, oid)
                if removed is None:
                    continue
                removed = compute_etas(removed, vehicle_map[vid_a], instance.provider.leg, instance.t0)
                removed_cost = recost(vid_a, removed)
                for vid_b in active:
                    base_route = removed if vid_b == vid_a else routes[vid_b]
                    base_cost = removed_cost if vid_b == vid_a else costs[vid_b]
                    res = best_insertion(base_route, vehicle_map[vid_b], orders[oid],
                                         instance, weights, orders, base_cost=base_cost)
                    if res is None:
                        continue
                    candidate, ins_delta, _, _ = res
                    if vid_b == vid_a:
                        delta = (removed_cost + ins_delta) - costs[vid_a]
                        consider(delta, {"kind": "relocate", "a": vid_a, "b": vid_b,
                                         "route_a": candidate})
                    else:
                        delta = (removed_cost - costs[vid_a]) + ins_delta
                        consider(delta, {"kind": "relocate", "a": vid_a, "b": vid_b,
                                         "route_a": removed, "route_b": candidate})

        # swap two order pairs across routes
        for i, vid_a in enumerate(active):
            for vid_b in active[i + 1:]:
                for oid_a in _movable_orders(routes[vid_a], orders):
                    for oid_b in _movable_orders(routes[vid_b], orders):
                        stripped_a = _remove_order(routes[vid_a], oid_a)
                        stripped_b = _remove_order(routes[vid_b], oid_b)
                        if stripped_a is None or stripped_b is None:
                            continue
                        stripped_a = compute_etas(stripped_a, vehicle_map[vid_a],
                                                  instance.provider.leg, instance.t0)
                        stripped_b = compute_etas(stripped_b, vehicle_map[vid_b],
                                                  instance.provider.leg, instance.t0)
                        res_a = best_insertion(stripped_a, vehicle_map[vid_a], orders[oid_b],
                                               instance, weights, orders,
                                               base_cost=recost(vid_a, stripped_a))
                        if res_a is None:
                            continue
                        res_b = best_insertion(stripped_b, vehicle_map[vid_b], orders[oid_a],
                                               instance, weights, orders,
                                               base_cost=recost(vid_b, stripped_b))
                        if res_b is None:
                            continue
                        new_a, new_b = res_a[0], res_b[0]
                        delta = (recost(vid_a, new_a) - costs[vid_a]
                                 + recost(vid_b, new_b) - costs[vid_b])
                        consider(delta, {"kind": "swap", "a": vid_a, "b": vid_b,
                                         "route_a": new_a, "route_b": new_b})

        # intra-route 2-opt (segment reversal in the unlocked suffix)
        for vid in active:
            route = routes[vid]
            n = len(route.stops)
            for i in range(max(route.locked, 1), n - 2):
                for j in range(i + 1, n - 1):
                    stops = (route.stops[:i] + tuple(reversed(route.stops[i:j + 1]))
                             + route.stops[j + 1:])
                    candidate = compute_etas(replace(route, stops=stops),
                                             vehicle_map[vid], instance.provider.leg,
                                             instance.t0)
                    if not route_hard_feasible(candidate, vehicle_map[vid], orders):
                        continue
                    delta = recost(vid, candidate) - costs[vid]
                    consider(delta, {"kind": "2opt", "a": vid, "route_a": candidate})

        # re-insert one unassigned order
        for oid in sorted(unassigned):
            order = orders.get(oid)
            if order is None or order.state == "failed":
                continue
            for vid in active:
                res = best_insertion(routes[vid], vehicle_map[vid], order, instance,
                                     weights, orders, base_cost=costs[vid])
                if res is None:
                    continue
                candidate, ins_delta, _, _ = res
                consider(ins_delta - weights.w_unassigned,
                         {"kind": "reinsert", "a": vid, "route_a": candidate, "oid": oid})

        if best_move is None:
            break
        payload = best_move[2]
        routes[payload["a"]] = payload["route_a"]
        costs[payload["a"]] = recost(payload["a"], payload["route_a"])
        if "route_b" in payload:
            routes[payload["b"]] = payload["route_b"]
            costs[payload["b"]] = recost(payload["b"], payload["route_b"])
        if payload["kind"] == "reinsert":
            unassigned.remove(payload["oid"])

    improved = Plan(routes=routes, unassigned=tuple(sorted(unassigned)))
    improved = replace(improved, objective=objective(improved, weights, orders))
    if plan.objective is not None and improved.objective > plan.objective + 1e-6:
        # Local search may never worsen a plan; fall back to the input.
        return plan
    return improved


# ---------------------------------------------------------------------------
# Exact oracle: branch-and-bound over exhaustive assignments and orderings
# ---------------------------------------------------------------------------

EXACT_MAX_ORDERS = 8
EXACT_MAX_VEHICLES = 3


def cvrp_exact(instance: CvrpInstance, weights: ObjectiveWeights,
               warm_start: bool = True) -> Plan:
    """Optimal plan by exhaustive branch-and-bound; the test oracle.

    Enumerates every assignment of orders to vehicles (or to unassigned) and
    every precedence-feasible stop ordering, pruning branches whose partial
    cost plus a distance lower bound cannot beat the incumbent.  The search
    is complete: pruning only discards branches provably no better than the
    incumbent, so the returned objective is the true optimum.  Guarded to
    tiny instances.
    """
    weights.check_for(instance)
    orders = sorted(instance.orders, key=lambda o: o.id)
    vehicles = instance.active_vehicles()
    if len(orders) > EXACT_MAX_ORDERS or len(vehicles) > EXACT_MAX_VEHICLES:
        raise SizeGuardError(
            f"exact solver guard: {len(orders)} orders / {len(vehicles)} vehicles "
            f"exceeds {EXACT_MAX_ORDERS}/{EXACT_MAX_VEHICLES}")
    order_map = {o.id: o for o in orders}
    provider = instance.provider
    service = instance.service_time_s

    serve_lb: dict[str, float] = {}
    for o in orders:
        leg = provider.leg(o.pickup, o.delivery, instance.t0, o.via_waypoints)
        direct = math.inf if leg is None else weights.w_dist * leg[1] / 1000.0
        serve_lb[o.id] = min(weights.w_unassigned, direct)

    if orders and vehicles and _clock_invariant(instance, weights):
        return _exact_dp(instance, weights, orders, vehicles, order_map)

    base_routes = {v.id: empty_route(v, instance.t0) for v in vehicles}
    incumbent = Plan(routes=dict(base_routes),
                     unassigned=tuple(sorted(o.id for o in orders)))
    incumbent = replace(incumbent, objective=objective(incumbent, weights, order_map))
    best: dict = {"obj": incumbent.objective, "plan": incumbent}

    if warm_start and orders:
        # Standard incumbent seeding: a feasible plan tightens pruning and
        # can only be returned if no strictly better leaf exists.
        try:
            seeded = cvrp_construct(instance, weights, seed=0)
            seeded = cvrp_improve(seeded, instance, weights, SolveBudget(max_iterations=30))
            if seeded.objective < best["obj"]:
                best = {"obj": seeded.objective, "plan": seeded}
        except SolverError:
            pass

    # identical vehicles are interchangeable; enforce a canonical usage order
    def signature(v: Vehicle):
        return (v.capacity_units, v.home_depot, v.shift_start, v.shift_end)

    # DFS over light tuples; Stop objects are materialized only for the best
    # leaf at the end.  Route state: sequence of (kind, oid) moves.
    def extend(vi: int, seqs: list[list[tuple[str, str]]], cost_acc: float,
               node: str, ready: float, start: float, dist_m: float, late_s: float,
               used: bool, onboard: set[str], load: int, remaining: set[str],
               first_order: str | None, prev_first: str | None):
        vehicle = vehicles[vi]
        partial = (weights.w_dist * dist_m / 1000.0
                   + weights.w_time * max(0.0, ready - start) / 3600.0
                   + weights.w_late * late_s / 60.0
                   + (weights.w_vehicle if used else 0.0))
        bound = cost_acc + partial + sum(serve_lb[oid] for oid in remaining)
        if onboard:
            far = 0.0
            for oid in onboard:
                leg = provider.leg(node, order_map[oid].delivery, ready,
                                   order_map[oid].via_waypoints)
                if leg is not None:
                    far = max(far, leg[1])
            bound += weights.w_dist * far / 1000.0
        if bound >= best["obj"] - 1e-12:
            return

        # close this route (nothing may stay on board)
        if not onboard:
            leg = provider.leg(node, vehicle.home_depot, ready, ())
            if leg is not None and ready + leg[0] <= vehicle.shift_end:
                eta_end = ready + leg[0]
                closed = (weights.w_dist * (dist_m + leg[1]) / 1000.0
                          + weights.w_time * (eta_end - start) / 3600.0
                          + weights.w_late * late_s / 60.0
                          + (weights.w_vehicle if used else 0.0))
                if vi + 1 == len(vehicles):
                    total = cost_acc + closed + weights.w_unassigned * len(remaining)
                    if total < best["obj"] - 1e-12:
                        best["obj"] = total
                        best["plan"] = _materialize(instance, weights, order_map,
                                                    vehicles, seqs, remaining)
                        best["obj"] = best["plan"].objective
                else:
                    nxt = vehicles[vi + 1]
                    prev = first_order if signature(nxt) == signature(vehicle) else None
                    seqs.append([])
                    extend(vi + 1, seqs, cost_acc + closed, nxt.home_depot,
                           max(instance.t0, nxt.shift_start),
                           max(instance.t0, nxt.shift_start), 0.0, 0.0, False,
                           set(), 0, remaining, None, prev)
                    seqs.pop()

        moves: list[tuple[float, float, str, str, tuple]] = []
        for oid in sorted(onboard):
            order = order_map[oid]
            leg = provider.leg(node, order.delivery, ready, order.via_waypoints)
            if leg is not None:
                moves.append((leg[0], leg[1], "delivery", oid, order.via_waypoints))
        for oid in sorted(remaining):
            order = order_map[oid]
            if load + order.size_units > vehicle.capacity_units:
                continue
            # canonical order usage between interchangeable vehicles
            if first_order is None and prev_first is not None and oid <= prev_first:
                continue
            leg = provider.leg(node, order.pickup, ready, ())
            if leg is not None:
                moves.append((leg[0], leg[1], "pickup", oid, ()))
        moves.sort(key=lambda m: (m[0], m[2], m[3]))

        for leg_t, leg_d, kind, oid, _via in moves:
            eta = ready + leg_t
            if eta > vehicle.shift_end:
                continue
            order = order_map[oid]
            seqs[-1].append((kind, oid))
            if kind == "pickup":
                remaining.discard(oid)
                onboard.add(oid)
                extend(vi, seqs, cost_acc, order.pickup, eta + service, start,
                       dist_m + leg_d, late_s, True, onboard, load + order.size_units,
                       remaining, first_order or oid, prev_first)
                onboard.discard(oid)
                remaining.add(oid)
            else:
                onboard.discard(oid)
                extend(vi, seqs, cost_acc, order.delivery, eta + service, start,
                       dist_m + leg_d,
                       late_s + max(0.0, eta - order.sla_deadline), True, onboard,
                       load - order.size_units, remaining, first_order, prev_first)
                onboard.add(oid)
            seqs[-1].pop()

    if vehicles and orders:
        v0 = vehicles[0]
        start0 = max(instance.t0, v0.shift_start)
        extend(0, [[]], 0.0, v0.home_depot, start0, start0, 0.0, 0.0, False,
               set(), 0, {o.id for o in orders}, None, None)
    return best["plan"]


def _clock_invariant(instance: CvrpInstance, weights: ObjectiveWeights) -> bool:
    """True when completion cost from a search state is independent of the clock.

    Requires a time-independent provider, no lateness pressure and shifts
    long enough that no reachable route can hit its end.  Under these
    conditions the exact search reduces to dynamic programming over states.
    """
    if not isinstance(instance.provider, MatrixProvider):
        return False
    if weights.w_late != 0.0:
        return False
    finite = instance.provider.time_matrix[np.isfinite(instance.provider.time_matrix)]
    if finite.size == 0:
        return False
    worst_leg = float(finite.max())
    worst_route_s = (2 * len(instance.orders) + 1) * (worst_leg + instance.service_time_s)
    for vehicle in instance.active_vehicles():
        window = vehicle.shift_end - max(instance.t0, vehicle.shift_start)
        if window < worst_route_s:
            return False
    return True


def _exact_dp(instance: CvrpInstance, weights: ObjectiveWeights,
              orders: Sequence[Order], vehicles: Sequence[Vehicle],
              order_map: Mapping[str, Order]) -> Plan:
    """Bitmask DP over (vehicle, node, remaining, onboard, used).

    Exact for clock-invariant instances: every precedence-feasible ordering
    is represented, and each state's value is its true optimal completion
    cost.
    """
    provider: MatrixProvider = instance.provider
    n = len(orders)
    node_index = provider.index
    service = instance.service_time_s
    w_dist, w_time = weights.w_dist, weights.w_time

    def leg_cost(a: str, b: str, via=()) -> tuple[float, float] | None:
        return provider.leg(a, b, instance.t0, via)

    sizes = [o.size_units for o in orders]
    memo: dict[tuple, tuple[float, tuple]] = {}

    def solve(vi: int, node: str, remaining: int, onboard: int, used: bool,
              load: int) -> tuple[float, tuple]:
        key = (vi, node, remaining, onboard, used)
        hit = memo.get(key)
        if hit is not None:
            return hit
        vehicle = vehicles[vi]
        best_cost = math.inf
        best_move: tuple = ()

        if onboard == 0:
            home = leg_cost(node, vehicle.home_depot)
            if home is not None:
                close = (w_dist * home[1] / 1000.0 + w_time * home[0] / 3600.0
                         + (weights.w_vehicle if used else 0.0))
                if vi + 1 == len(vehicles):
                    tail = weights.w_unassigned * bin(remaining).count("1")
                    best_cost, best_move = close + tail, ("close",)
                else:
                    nxt = vehicles[vi + 1]
                    sub, _ = solve(vi + 1, nxt.home_depot, remaining, 0, False, 0)
                    best_cost, best_move = close + sub, ("close",)

        for i in range(n):
            bit = 1 << i
            order = orders[i]
            if onboard & bit:
                leg = leg_cost(node, order.delivery, order.via_waypoints)
                if leg is None:
                    continue
                step = (w_dist * leg[1] / 1000.0
                        + w_time * (leg[0] + service) / 3600.0)
                sub, _ = solve(vi, order.delivery, remaining, onboard & ~bit, True,
                               load - sizes[i])
                cost = step + sub
                if cost < best_cost - 1e-12:
                    best_cost, best_move = cost, ("delivery", i)
            elif remaining & bit and load + sizes[i] <= vehicle.capacity_units:
                leg = leg_cost(node, order.pickup)
                if leg is None:
                    continue
                step = (w_dist * leg[1] / 1000.0
                        + w_time * (leg[0] + service) / 3600.0)
                sub, _ = solve(vi, order.pickup, remaining & ~bit, onboard | bit, True,
                               load + sizes[i])
                cost = step + sub
                if cost < best_cost - 1e-12:
                    best_cost, best_move = cost, ("pickup", i)

        memo[key] = (best_cost, best_move)
        return memo[key]

    full = (1 << n) - 1
    v0 = vehicles[0]
    total, _ = solve(0, v0.home_depot, full, 0, False, 0)

    # replay the winning moves into per-vehicle sequences
    seqs: list[list[tuple[str, str]]] = [[]]
    vi, node, remaining, onboard, used, load = 0, v0.home_depot, full, 0, False, 0
    while True:
        _, move = memo[(vi, node, remaining, onboard, used)]
        if not move:
            break
        if move[0] == "close":
            if vi + 1 == len(vehicles):
                break
            vi += 1
            node, onboard, used, load = vehicles[vi].home_depot, 0, False, 0
            seqs.append([])
            continue
        kind, i = move
        order = orders[i]
        bit = 1 << i
        seqs[-1].append((kind, order.id))
        if kind == "pickup":
            remaining &= ~bit
            onboard |= bit
            load += sizes[i]
            node = order.pickup
        else:
            onboard &= ~bit
            load -= sizes[i]
            node = order.delivery
        used = True

    left = {orders[i].id for i in range(n) if remaining & (1 << i)}
    while len(seqs) < len(vehicles):
        seqs.append([])
    return _materialize(instance, weights, order_map, vehicles, seqs, left)


def _materialize(instance: CvrpInstance, weights: ObjectiveWeights,
                 order_map: Mapping[str, Order], vehicles: Sequence[Vehicle],
                 seqs: list[list[tuple[str, str]]], remaining: set[str]) -> Plan:
    """Turn DFS move sequences into a fully priced plan."""
    routes = {v.id: empty_route(v, instance.t0) for v in vehicles}
    for vehicle, seq in zip(vehicles, seqs):
        if not seq:
            continue
        stops = [Stop(node_id=vehicle.home_depot, action="depot_start",
                      eta=max(instance.t0, vehicle.shift_start))]
        for kind, oid in seq:
            order = order_map[oid]
            if kind == "pickup":
                stops.append(Stop(node_id=order.pickup, action="pickup",
                                  order_ids=(oid,), service_time_s=instance.service_time_s))
            else:
                stops.append(Stop(node_id=order.delivery, action="delivery",
                                  order_ids=(oid,), service_time_s=instance.service_time_s,
                                  via=order.via_waypoints))
        stops.append(Stop(node_id=vehicle.home_depot, action="depot_end"))
        route = Route(vehicle_id=vehicle.id, stops=tuple(stops))
        routes[vehicle.id] = compute_etas(route, vehicle, instance.provider.leg,
                                          instance.t0)
    plan = Plan(routes=routes, unassigned=tuple(sorted(remaining)))
    return replace(plan, objective=objective(plan, weights, order_map))


# ---------------------------------------------------------------------------
# Packing and assignment
# ---------------------------------------------------------------------------

def pack_ffd(sizes: Sequence[int], capacity: int) -> list[list[int]]:
    """First-fit-decreasing bin packing; returns item-index lists per bin."""
    if capacity <= 0:
        raise SolverError("capacity must be positive")
    for i, size in enumerate(sizes):
        if size <= 0:
            raise SolverError(f"item {i} has non-positive size {size}")
        if size > capacity:
            raise SolverError(f"item {i} of size {size} exceeds capacity {capacity}")
    order = sorted(range(len(sizes)), key=lambda i: (-sizes[i], i))
    bins: list[list[int]] = []
    sums: list[int] = []
    for i in order:
        for b, total in enumerate(sums):
            if total + sizes[i] <= capacity:
                bins[b].append(i)
                sums[b] += sizes[i]
                break
        else:
            bins.append([i])
            sums.append(sizes[i])
    return bins


@dataclass(frozen=True)
class AssignmentResult:
    assignment: dict[int, int]
    total_cost: float
    unmatched_rows: tuple[int, ...]
    unmatched_cols: tuple[int, ...]


def assign_min_cost(matrix: Sequence[Sequence[float]]) -> AssignmentResult:
    """Minimum-cost assignment; rectangular inputs are padded to square.

    Padding uses a sentinel exceeding the total of all finite entries so
    padded matches never displace real ones; sentinel pairings come back as
    unmatched rows/columns.
    """
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        raise SolverError("empty cost matrix")
    if not np.all(np.isfinite(m)):
        raise SolverError("cost matrix entries must be finite")
    rows, cols = m.shape
    n = max(rows, cols)
    sentinel = 1.0 + float(np.abs(m).sum())
    padded = np.full((n, n), sentinel)
    padded[:rows, :cols] = m
    row_ind, col_ind = linear_sum_assignment(padded)
    assignment: dict[int, int] = {}
    total = 0.0
    for r, c in zip(row_ind, col_ind):
        if r < rows and c < cols:
            assignment[int(r)] = int(c)
            total += float(m[r, c])
    unmatched_rows = tuple(r for r in range(rows) if r not in assignment)
    matched_cols = set(assignment.values())
    unmatched_cols = tuple(c for c in range(cols) if c not in matched_cols)
    return AssignmentResult(assignment=assignment, total_cost=total,
                            unmatched_rows=unmatched_rows, unmatched_cols=unmatched_cols)


# ---------------------------------------------------------------------------
# Multi-modal pipeline: collect, consolidate, line-haul
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinehaulLeg:
    id: str
    from_office: str
    to_office: str
    cost: float
    mode: str = "road"


@dataclass(frozen=True)
class TransportUnit:
    id: str
    dest_office: str
    order_ids: tuple[str, ...]
    total_size: int


@dataclass(frozen=True)
class MultimodalResult:
    disposition: Plan
    units: tuple[TransportUnit, ...]
    unit_to_leg: dict[str, str]
    unassigned_units: tuple[str, ...]
    positioning_routes: tuple[dict, ...]


def multimodal_plan(orders: Sequence[Order], vehicles: Sequence[Vehicle],
                    origin_office: str, dest_office_of: Mapping[str, str],
                    linehaul_legs: Sequence[LinehaulLeg], unit_capacity: int,
                    weights: ObjectiveWeights, provider, t0: float,
                    seed: int = 0) -> MultimodalResult:
    """Three-stage flow: collect parcels, consolidate into units, assign legs.

    Stage 1 routes pickups into the origin office (construct + improve);
    stage 2 packs parcels per destination office into transport units of
    ``unit_capacity``; stage 3 maps units onto line-haul legs serving their
    destination at minimum total leg cost.  Units beyond leg supply are
    reported unassigned.
    """
    for order in orders:
        if order.id not in dest_office_of:
            raise SolverError(f"order {order.id!r} has no destination office mapping")

    collect = tuple(replace(o, delivery=origin_office, via_waypoints=()) for o in orders)
    instance = CvrpInstance(vehicles=tuple(vehicles), orders=collect, provider=provider, t0=t0)
    plan = cvrp_construct(instance, weights, seed)
    plan = cvrp_improve(plan, instance, weights)
    plan = _handover_at(plan, origin_office)

    units: list[TransportUnit] = []
    by_office: dict[str, list[Order]] = {}
    for order in sorted(orders, key=lambda o: o.id):
        by_office.setdefault(dest_office_of[order.id], []).append(order)
    for office in sorted(by_office):
        group = by_office[office]
        bins = pack_ffd([o.size_units for o in group], unit_capacity)
        for b, indices in enumerate(bins):
            members = tuple(group[i].id for i in sorted(indices))
            units.append(TransportUnit(
                id=f"unit-{office}-{b}",
                dest_office=office,
                order_ids=members,
                total_size=sum(group[i].size_units for i in indices),
            ))

    unit_to_leg: dict[str, str] = {}
    unassigned_units: list[str] = []
    legs_by_office: dict[str, list[LinehaulLeg]] = {}
    for leg in sorted(linehaul_legs, key=lambda l: l.id):
        legs_by_office.setdefault(leg.to_office, []).append(leg)
    for office in sorted(by_office):
        office_units = [u for u in units if u.dest_office == office]
        legs = legs_by_office.get(office, [])
        if not office_units:
            continue
        if not legs:
            unassigned_units.extend(u.id for u in office_units)
            continue
        cost_matrix = [[leg.cost for leg in legs] for _ in office_units]
        result = assign_min_cost(cost_matrix)
        for r, unit in enumerate(office_units):
            if r in result.assignment:
                unit_to_leg[unit.id] = legs[result.assignment[r]].id
            else:
                unassigned_units.append(unit.id)

    leg_map = {leg.id: leg for leg in linehaul_legs}
    positioning = []
    for leg_id in sorted(set(unit_to_leg.values())):
        leg = leg_map[leg_id]
        positioning.append({
            "leg_id": leg_id,
            "from_office": leg.from_office,
            "to_office": leg.to_office,
            "mode": leg.mode,
            "unit_ids": sorted(u for u, l in unit_to_leg.items() if l == leg_id),
        })
    return MultimodalResult(
        disposition=plan,
        units=tuple(units),
        unit_to_leg=unit_to_leg,
        unassigned_units=tuple(sorted(unassigned_units)),
        positioning_routes=tuple(positioning),
    )


def _handover_at(plan: Plan, office: str) -> Plan:
    routes = {}
    for vid, route in plan.routes.items():
        stops = tuple(
            replace(s, action="exchange_handover") if s.action == "delivery" and s.node_id == office else s
            for s in route.stops
        )
        routes[vid] = replace(route, stops=stops)
    return replace(plan, routes=routes)


# ---------------------------------------------------------------------------
# Anticipation buffers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnticipationStats:
    """Historical operational noise: per-node-kind miss rates and an hourly
    demand profile."""

    miss_probability: dict[str, float] = field(default_factory=dict)
    hourly_demand_factor: tuple[float, ...] = tuple([1.0] * 24)

    def __post_init__(self):
        for kind, p in self.miss_probability.items():
            if not 0.0 <= p <= 1.0:
                raise SolverError(f"miss probability for {kind!r} outside [0, 1]")
        if len(self.hourly_demand_factor) != 24:
            raise SolverError("hourly_demand_factor needs 24 entries")


def apply_buffers(plan: Plan, stats: AnticipationStats, alpha: float,
                  instance: CvrpInstance, graph: RoadGraph,
                  weights: ObjectiveWeights | None = None) -> Plan:
    """Pad pickup/delivery service with noise-derived slack and re-time.

    Slack per stop is ``alpha * miss_probability(node kind) * service time``;
    ``alpha = 0`` returns the plan untouched.
    """
    if alpha < 0:
        raise SolverError("alpha must be >= 0")
    if alpha == 0:
        return plan
    orders = instance.orders_by_id()
    vehicle_map = {v.id: v for v in instance.vehicles}
    routes = {}
    for vid, route in plan.routes.items():
        stops = []
        for stop in route.stops:
            if stop.action in ("pickup", "delivery"):
                kind = graph.nodes[stop.node_id].kind if stop.node_id in graph.nodes else "junction"
                slack = alpha * stats.miss_probability.get(kind, 0.0) * stop.service_time_s
                stops.append(replace(stop, slack_s=slack))
            else:
                stops.append(stop)
        padded = replace(route, stops=tuple(stops))
        routes[vid] = compute_etas(padded, vehicle_map[vid], instance.provider.leg, instance.t0)
    out = Plan(routes=routes, unassigned=plan.unassigned)
    if weights is not None:
        out = replace(out, objective=objective(out, weights, orders))
    return out
