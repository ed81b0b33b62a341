"""Event-driven re-planning: world state, ad-hoc event handling, route
recommendations with an accept/reject lifecycle, and what-if dry runs.

All mutations funnel through one advisor instance per scenario; callers are
expected to serialize access (the HTTP service holds a per-scenario lock,
the simulator is single-threaded by contract).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .fleet import (
    Order,
    Plan,
    Route,
    Stop,
    UNREACHABLE,
    ValidationReport,
    Vehicle,
    compute_etas,
    empty_route,
    force_state,
    order_from_dict,
    order_to_dict,
    plan_to_dict,
    validate_plan,
)
from .network import Path, RoadGraph, leg_path
from .optimize import (
    AnticipationStats,
    CvrpInstance,
    GraphProvider,
    ObjectiveWeights,
    SolveBudget,
    apply_buffers,
    cvrp_construct,
    cvrp_improve,
    insert_delivery_only,
    insert_order,
    objective,
)
from .traffic import EventContext, TrafficEvent, event_from_dict, event_to_dict, response_plan


class AdvisorError(ValueError):
    pass


class DecisionError(AdvisorError):
    pass


@dataclass(frozen=True)
class AdvisorKnobs:
    """Tunable policy constants; defaults are configuration, not physics."""

    theta: float = 0.2            # insertion-delta fraction that escalates to global
    k_routes: int = 2             # affected-route count that escalates to global
    horizon_s: float = 1800.0     # commitment horizon: imminent stops stay fixed
    alpha: float = 0.0            # anticipation buffer scaling
    ttl_s: float = 300.0          # recommendation time-to-live
    service_time_s: float = 120.0
    improve_iterations: int = 25
    reopt_period_s: float = 1800.0
    xb_enabled: bool = True


# --- ad-hoc event variants -------------------------------------------------

@dataclass(frozen=True)
class NewOrder:
    order: Order
    sequence: int = -1


@dataclass(frozen=True)
class VehicleBreakdown:
    vehicle_id: str
    at: float
    sequence: int = -1


@dataclass(frozen=True)
class TrafficDisturbance:
    event: TrafficEvent
    sequence: int = -1


@dataclass(frozen=True)
class ManualDisturbance:
    event: TrafficEvent
    sequence: int = -1


@dataclass(frozen=True)
class MissedDelivery:
    order_id: str
    sequence: int = -1


AdhocEvent = NewOrder | VehicleBreakdown | TrafficDisturbance | ManualDisturbance | MissedDelivery


def adhoc_event_to_dict(event: AdhocEvent) -> dict:
    if isinstance(event, NewOrder):
        return {"type": "new_order", "sequence": event.sequence,
                "order": order_to_dict(event.order)}
    if isinstance(event, VehicleBreakdown):
        return {"type": "vehicle_breakdown", "sequence": event.sequence,
                "vehicle_id": event.vehicle_id, "at": event.at}
    if isinstance(event, TrafficDisturbance):
        return {"type": "traffic", "sequence": event.sequence,
                "event": event_to_dict(event.event)}
    if isinstance(event, ManualDisturbance):
        return {"type": "manual", "sequence": event.sequence,
                "event": event_to_dict(event.event)}
    if isinstance(event, MissedDelivery):
        return {"type": "missed_delivery", "sequence": event.sequence,
                "order_id": event.order_id}
    raise AdvisorError(f"unknown ad-hoc event {event!r}")


def adhoc_event_from_dict(raw: Mapping) -> AdhocEvent:
    kind = raw.get("type")
    if kind == "new_order":
        return NewOrder(order=order_from_dict(raw["order"]))
    if kind == "vehicle_breakdown":
        return VehicleBreakdown(vehicle_id=str(raw["vehicle_id"]), at=float(raw["at"]))
    if kind == "traffic":
        ev = event_from_dict(raw["event"])
        return TrafficDisturbance(event=ev)
    if kind == "manual":
        ev = event_from_dict(raw["event"])
        return ManualDisturbance(event=replace(ev, source="manual"))
    if kind == "missed_delivery":
        return MissedDelivery(order_id=str(raw["order_id"]))
    raise AdvisorError(f"unknown ad-hoc event type {kind!r}")


@dataclass(frozen=True)
class PlanDelta:
    routes_before: dict[str, dict]
    routes_after: dict[str, dict]
    unassigned_added: tuple[str, ...]
    unassigned_removed: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "routes_before": self.routes_before,
            "routes_after": self.routes_after,
            "unassigned_added": list(self.unassigned_added),
            "unassigned_removed": list(self.unassigned_removed),
        }

    @property
    def is_noop(self) -> bool:
        return (not self.routes_after and not self.unassigned_added
                and not self.unassigned_removed)


@dataclass
class Recommendation:
    id: str
    trigger: dict
    scope: str                     # local | global
    delta: PlanDelta
    objective_before: float
    objective_after: float
    status: str                    # proposed | accepted | rejected | expired
    created_at: float
    ttl_s: float
    sequence: int
    base_version: int
    proposed_plan: Plan
    order_states: dict[str, str] = field(default_factory=dict)
    ephemeral: bool = False
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "trigger": self.trigger,
            "scope": self.scope,
            "delta": self.delta.to_dict(),
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "status": self.status,
            "created_at": self.created_at,
            "ttl_s": self.ttl_s,
            "sequence": self.sequence,
            "ephemeral": self.ephemeral,
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class XbChoice:
    mode: str                      # direct_border | via_exchange
    path: Path
    via: tuple[str, ...]
    cost_direct: float | None
    cost_chain: float | None


def _route_dict(route: Route) -> dict:
    return plan_to_dict(Plan(routes={route.vehicle_id: route}))["routes"][route.vehicle_id]


def _detach_order_from_stops(route: Route, oid: str) -> Route:
    """Remove an order from a route's bookkeeping, keeping stops as history."""
    stops = tuple(
        replace(s, order_ids=tuple(o for o in s.order_ids if o != oid))
        if oid in s.order_ids else s
        for s in route.stops
    )
    return replace(route, stops=stops)


class Advisor:
    """Holds one scenario's world state and turns events into recommendations."""

    def __init__(self, graph: RoadGraph, vehicles: Iterable[Vehicle], orders: Iterable[Order],
                 weights: ObjectiveWeights, knobs: AdvisorKnobs = AdvisorKnobs(),
                 seed: int = 0, t0: float = 0.0):
        self.graph = graph
        self.vehicles: dict[str, Vehicle] = {v.id: v for v in vehicles}
        self.orders: dict[str, Order] = {o.id: o for o in orders}
        self.events: list[TrafficEvent] = []
        self.weights = weights
        self.knobs = knobs
        self.seed = seed
        self.t0 = t0
        self.clock = t0
        self.version = 0
        self.plan: Plan | None = None
        self.recommendations: dict[str, Recommendation] = {}
        self.progress: dict[str, int] = {}   # committed: visited + in-flight target
        self.arrived: dict[str, int] = {}    # physically visited stops only
        self.stream: list[dict] = []
        self._event_seq = 0
        self._rec_seq = 0
        self._stream_seq = 0
        self._solver_calls = 0

    # --- plumbing ----------------------------------------------------------

    def context(self) -> EventContext:
        return EventContext(self.graph, self.events)

    def provider(self) -> GraphProvider:
        return GraphProvider(self.graph, self.context())

    def instance(self) -> CvrpInstance:
        return CvrpInstance(
            vehicles=tuple(sorted(self.vehicles.values(), key=lambda v: v.id)),
            orders=tuple(sorted(self.orders.values(), key=lambda o: o.id)),
            provider=self.provider(),
            t0=self.t0,
            service_time_s=self.knobs.service_time_s,
        )

    def _next_seed(self) -> int:
        self._solver_calls += 1
        return self.seed * 1_000_003 + self._solver_calls

    def _push_stream(self, kind: str, payload: dict) -> None:
        self._stream_seq += 1
        self.stream.append({"seq": self._stream_seq, "kind": kind, "payload": payload})

    def advance_clock(self, t: float) -> None:
        if t < self.clock:
            raise AdvisorError("clock may not move backwards")
        self.clock = t

    def set_progress(self, vehicle_id: str, next_stop_index: int) -> None:
        """Execution feedback: stops before this index may no longer change."""
        self.progress[vehicle_id] = max(next_stop_index, self.progress.get(vehicle_id, 1))

    def set_arrived(self, vehicle_id: str, arrived_count: int) -> None:
        """Execution feedback: this many leading stops were physically visited."""
        self.arrived[vehicle_id] = max(arrived_count, self.arrived.get(vehicle_id, 1))
        self.set_progress(vehicle_id, arrived_count)

    def record_arrival(self, vehicle_id: str, stop_index: int, t: float) -> None:
        """Pin a committed stop's ETA to the actually observed arrival time.

        Downstream re-pricing then anchors on reality instead of the original
        projection, so feasibility checks see true times.
        """
        route = self.plan.routes.get(vehicle_id) if self.plan else None
        if route is None or not 0 <= stop_index < len(route.stops):
            return
        stops = list(route.stops)
        stops[stop_index] = replace(stops[stop_index], eta=t)
        self.plan = replace(self.plan,
                            routes={**self.plan.routes,
                                    vehicle_id: replace(route, stops=tuple(stops))})

    def reset_route(self, vehicle_id: str, at: float) -> None:
        """Re-open a vehicle that completed its loop: fresh empty route at home.

        Delivered history lives in the caller's trace; the plan only carries
        work still to do, so the vehicle becomes insertable again.
        """
        vehicle = self.vehicles.get(vehicle_id)
        if vehicle is None:
            raise AdvisorError(f"unknown vehicle {vehicle_id!r}")
        if self.plan is None:
            return
        fresh = empty_route(vehicle, at)
        self.plan = replace(self.plan, routes={**self.plan.routes, vehicle_id: fresh})
        self.progress[vehicle_id] = 1
        self.arrived[vehicle_id] = 1
        self.version += 1

    def _locked_index(self, route: Route) -> int:
        locked = max(1, self.progress.get(route.vehicle_id, 1))
        horizon = self.clock + self.knobs.horizon_s
        i = locked
        # The trailing depot_end never auto-commits: a vehicle that has not
        # finished its route can still be re-tasked before heading home.
        while i < len(route.stops) - 1:
            eta = route.stops[i].eta
            if eta is None or eta == UNREACHABLE or not eta < horizon:
                break
            i += 1
        return min(max(locked, i), len(route.stops))

    def _with_locks(self, plan: Plan) -> Plan:
        routes = {}
        for vid, route in plan.routes.items():
            if route.is_empty and self.arrived.get(vid, 1) <= 1:
                # An idle vehicle dispatches from "now", not from whenever its
                # route was last anchored.
                vehicle = self.vehicles[vid]
                anchor = max(route.stops[0].eta or self.clock, self.clock,
                             vehicle.shift_start)
                route = replace(route, stops=(
                    replace(route.stops[0], eta=anchor),
                    replace(route.stops[1], eta=anchor),
                ))
            routes[vid] = replace(route, locked=self._locked_index(route))
        return replace(plan, routes=routes)

    def _reprice(self, plan: Plan, provider=None) -> Plan:
        provider = provider or self.provider()
        routes = {}
        for vid, route in plan.routes.items():
            vehicle = self.vehicles[vid]
            routes[vid] = compute_etas(route, vehicle, provider.leg, self.t0)
        out = Plan(routes=routes, unassigned=plan.unassigned)
        return replace(out, objective=objective(out, self.weights, self.orders))

    def _plan_lateness_min(self, plan: Plan) -> float:
        total = 0.0
        for route in plan.routes.values():
            for stop in route.stops:
                if stop.action == "delivery" and stop.eta not in (None, UNREACHABLE):
                    for oid in stop.order_ids:
                        order = self.orders.get(oid)
                        if order is not None:
                            total += max(0.0, stop.eta - order.sla_deadline)
        return total / 60.0

    def _repair(self, plan: Plan, provider=None) -> tuple[Plan, list[str], list[str]]:
        """Strip orders from infeasible suffixes until routes fit again.

        Closures and surges can make a committed plan undrivable; removal
        order is deterministic (last removable pickup first).  Orders whose
        pickup is already committed cannot be relocated, so an undeliverable
        onboard parcel loses its delivery stop and fails instead.  Returns
        the repaired plan, re-insertable stripped ids, and failed ids.
        """
        provider = provider or self.provider()
        routes = dict(plan.routes)
        stripped: list[str] = []
        failed: list[str] = []
        for vid in sorted(routes):
            vehicle = self.vehicles[vid]
            route = routes[vid]
            while True:
                route = compute_etas(route, vehicle, provider.leg, self.t0)
                bad = [i for i in range(route.locked, len(route.stops))
                       if route.stops[i].eta == UNREACHABLE
                       or (route.stops[i].eta or 0.0) > vehicle.shift_end]
                if not bad:
                    break
                removable: list[tuple[int, str]] = []
                onboard: list[tuple[int, str]] = []
                pickups: dict[str, int] = {}
                for i, stop in enumerate(route.stops):
                    if stop.action == "pickup" and len(stop.order_ids) == 1:
                        pickups[stop.order_ids[0]] = i
                    elif stop.action == "delivery" and len(stop.order_ids) == 1:
                        oid = stop.order_ids[0]
                        if oid in pickups and pickups[oid] >= route.locked:
                            removable.append((pickups[oid], oid))
                        elif i >= route.locked:
                            onboard.append((i, oid))
                if removable:
                    _, oid = max(removable)
                    keep = tuple(s for s in route.stops
                                 if not (len(s.order_ids) == 1 and s.order_ids[0] == oid
                                         and s.action in ("pickup", "delivery")))
                    route = replace(route, stops=keep)
                    stripped.append(oid)
                elif onboard:
                    idx, oid = max(onboard)
                    keep = tuple(s for j, s in enumerate(route.stops) if j != idx)
                    route = _detach_order_from_stops(replace(route, stops=keep), oid)
                    failed.append(oid)
                else:
                    break  # nothing strippable; validation will surface this
            routes[vid] = route
        unassigned = tuple(sorted(set(plan.unassigned) | set(stripped) | set(failed)))
        out = Plan(routes=routes, unassigned=unassigned)
        out = replace(out, objective=objective(out, self.weights, self.orders))
        return out, stripped, failed

    # --- initial planning ----------------------------------------------------

    def assign_xb_routing(self, order: Order, force_exchange: bool = False) -> Order:
        """Set cross-border via-waypoints on an order (no-op domestically)."""
        pickup = self.graph.nodes.get(order.pickup)
        delivery = self.graph.nodes.get(order.delivery)
        if pickup is None or delivery is None or pickup.country == delivery.country:
            return order
        choice = self.xb_route_choice(order, force_exchange=force_exchange)
        return replace(order, via_waypoints=choice.via)

    def daily_orchestration(self, alpha: float | None = None) -> Plan:
        """Construct, improve and buffer the day plan, then install it."""
        if self.plan is not None and any(not r.is_empty for r in self.plan.routes.values()):
            raise AdvisorError("daily orchestration requires an uncommitted day")
        if self.knobs.xb_enabled:
            for oid in sorted(self.orders):
                self.orders[oid] = self.assign_xb_routing(self.orders[oid])
        instance = self.instance()
        plan = cvrp_construct(instance, self.weights, self._next_seed())
        plan = cvrp_improve(plan, instance, self.weights,
                            SolveBudget(max_iterations=self.knobs.improve_iterations))
        alpha = self.knobs.alpha if alpha is None else alpha
        if alpha > 0:
            stats = AnticipationStats(miss_probability=self._miss_stats())
            plan = apply_buffers(plan, stats, alpha, instance, self.graph, self.weights)
        plan = replace(plan, objective=objective(plan, self.weights, self.orders))
        self._install(plan, transitions={oid: "assigned" for oid in self._routed_orders(plan)
                                         if self.orders[oid].state == "announced"})
        return self.plan

    def _miss_stats(self) -> dict[str, float]:
        return dict(getattr(self, "miss_probability_by_kind", {"customer": 0.0}))

    def _routed_orders(self, plan: Plan) -> list[str]:
        out = []
        for route in plan.routes.values():
            out.extend(route.order_ids())
        return sorted(set(out) & set(self.orders))

    def _install(self, plan: Plan, transitions: Mapping[str, str] = ()) -> None:
        for oid, target in dict(transitions).items():
            if oid in self.orders:
                self.orders[oid] = force_state(self.orders[oid], target)
        report = validate_plan(plan, self.graph, self.vehicles, self.orders)
        if not report.ok:
            raise AdvisorError(f"refusing to install hard-infeasible plan: "
                               f"{[v.detail for v in report.violations][:3]}")
        self.plan = plan
        self.version += 1
        self._push_stream("plan-version", {"version": self.version,
                                           "objective": plan.objective})

    # --- recommendations -----------------------------------------------------

    def _emit(self, trigger: dict, scope: str, proposed: Plan, objective_before: float,
              order_states: Mapping[str, str], notes: Sequence[str] = (),
              ephemeral: bool = False) -> Recommendation:
        current = self.plan
        routes_before: dict[str, dict] = {}
        routes_after: dict[str, dict] = {}
        for vid in sorted(proposed.routes):
            new_route = proposed.routes[vid]
            old_route = current.routes.get(vid) if current else None
            if old_route is None or old_route.stops != new_route.stops:
                if old_route is not None:
                    routes_before[vid] = _route_dict(old_route)
                routes_after[vid] = _route_dict(new_route)
        old_unassigned = set(current.unassigned) if current else set()
        delta = PlanDelta(
            routes_before=routes_before,
            routes_after=routes_after,
            unassigned_added=tuple(sorted(set(proposed.unassigned) - old_unassigned)),
            unassigned_removed=tuple(sorted(old_unassigned - set(proposed.unassigned))),
        )
        self._rec_seq += 1
        rec = Recommendation(
            id=f"r{self._rec_seq}",
            trigger=trigger,
            scope=scope,
            delta=delta,
            objective_before=objective_before,
            objective_after=proposed.objective,
            status="proposed",
            created_at=self.clock,
            ttl_s=self.knobs.ttl_s,
            sequence=self._rec_seq,
            base_version=self.version,
            proposed_plan=proposed,
            order_states=dict(order_states),
            ephemeral=ephemeral,
        )
        if not ephemeral:
            self.recommendations[rec.id] = rec
            self._push_stream("recommendation", rec.to_dict())
        return rec

    def handle_event(self, event: AdhocEvent) -> Recommendation:
        """Register an ad-hoc event's facts and propose the best response.

        The unmodified (minimal lawful) plan is always in the candidate set,
        so ``objective_after`` never exceeds the cost of doing nothing.
        """
        if self.plan is None:
            raise AdvisorError("no current plan; run daily_orchestration first")
        self._event_seq += 1
        event = replace(event, sequence=self._event_seq)
        self._push_stream("event", adhoc_event_to_dict(event))

        if isinstance(event, NewOrder):
            return self._handle_new_order(event)
        if isinstance(event, VehicleBreakdown):
            return self._handle_breakdown(event)
        if isinstance(event, (TrafficDisturbance, ManualDisturbance)):
            return self._handle_traffic(event)
        if isinstance(event, MissedDelivery):
            return self._handle_missed(event)
        raise AdvisorError(f"unknown ad-hoc event {event!r}")

    def _pick(self, candidates: list[tuple[str, Plan, dict]]) -> tuple[str, Plan, dict]:
        best = None
        for scope, plan, states in candidates:
            if plan is None:
                continue
            if best is None or plan.objective < best[1].objective - 1e-9:
                best = (scope, plan, states)
        return best

    def _handle_new_order(self, event: NewOrder) -> Recommendation:
        order = event.order
        if order.id in self.orders:
            raise AdvisorError(f"order {order.id!r} already known")
        if self.knobs.xb_enabled:
            order = self.assign_xb_routing(order)
        self.orders[order.id] = order
        self.version += 1

        base = self._reprice(self._with_locks(self.plan))
        instance = self.instance()
        no_change = self._reprice(replace(base, unassigned=tuple(sorted(set(base.unassigned) | {order.id}))))
        # Reported baseline excludes the just-announced order; rejecting it
        # outright therefore shows up as exactly one unassigned penalty.
        objective_before = no_change.objective - self.weights.w_unassigned

        candidates: list[tuple[str, Plan, dict]] = [("local", no_change, {})]
        insertion = insert_order(base, order, instance, self.weights)
        if insertion is not None:
            candidates.append(("local", insertion.plan,
                               {order.id: "assigned"}))
        escalate = insertion is None or (
            objective_before > 0 and insertion.delta > self.knobs.theta * objective_before)
        if escalate:
            improved = cvrp_improve(no_change, instance, self.weights,
                                    SolveBudget(max_iterations=self.knobs.improve_iterations))
            states = {order.id: "assigned"} if order.id not in improved.unassigned else {}
            candidates.append(("global", improved, states))
        scope, plan, states = self._pick(candidates)
        return self._emit(adhoc_event_to_dict(event), scope, plan, objective_before, states)

    def _handle_breakdown(self, event: VehicleBreakdown) -> Recommendation:
        vid = event.vehicle_id
        vehicle = self.vehicles.get(vid)
        if vehicle is None:
            raise AdvisorError(f"unknown vehicle {vid!r}")
        self.vehicles[vid] = replace(vehicle, status="broken")
        self.version += 1

        base = self._reprice(self._with_locks(self.plan))
        route = base.routes.get(vid)
        stranded: list[str] = []
        failed: list[str] = []
        if route is not None:
            cut = max(1, min(self.arrived.get(vid, 1), len(route.stops)))
            kept = route.stops[:cut]
            removed = route.stops[cut:]
            kept_pickups = {oid for s in kept if s.action == "pickup" for oid in s.order_ids}
            kept_deliveries = {oid for s in kept
                               if s.action in ("delivery", "exchange_handover")
                               for oid in s.order_ids}
            for stop in removed:
                for oid in stop.order_ids:
                    if oid in kept_pickups and oid not in kept_deliveries:
                        if oid not in failed:
                            failed.append(oid)  # cargo stuck on the broken truck
                    elif stop.action == "pickup" and oid not in stranded:
                        stranded.append(oid)
            last_node = kept[-1].node_id
            last_eta = kept[-1].eta if kept[-1].eta is not None else event.at
            truncated = replace(route, stops=kept + (
                Stop(node_id=last_node, action="depot_end", eta=last_eta),),
                locked=len(kept) + 1)
            for oid in failed:
                truncated = _detach_order_from_stops(truncated, oid)
            base = replace(base, routes={**base.routes, vid: truncated})

        pool = tuple(sorted(set(base.unassigned) | set(stranded) | set(failed)))
        no_change = self._reprice(replace(base, unassigned=pool))
        objective_before = no_change.objective
        states_base = {oid: "failed" for oid in failed}
        states_base.update({oid: "announced" for oid in stranded})
        candidates: list[tuple[str, Plan, dict]] = [("local", no_change, dict(states_base))]

        instance = self.instance()
        local_plan = no_change
        local_states = dict(states_base)
        any_failed_insert = False
        for oid in sorted(stranded):
            result = insert_order(local_plan, self.orders[oid], instance, self.weights)
            if result is None:
                any_failed_insert = True
                continue
            local_plan = result.plan
            local_states[oid] = "assigned"
        local_plan = replace(local_plan, objective=objective(local_plan, self.weights, self.orders))
        candidates.append(("local", local_plan, local_states))
        if any_failed_insert:
            improved = cvrp_improve(local_plan, instance, self.weights,
                                    SolveBudget(max_iterations=self.knobs.improve_iterations))
            states = dict(local_states)
            for oid in sorted(stranded):
                states[oid] = "announced" if oid in improved.unassigned else "assigned"
            candidates.append(("global", improved, states))
        scope, plan, states = self._pick(candidates)
        return self._emit(adhoc_event_to_dict(event), scope, plan, objective_before, states)

    def _handle_traffic(self, event: TrafficDisturbance | ManualDisturbance) -> Recommendation:
        pre_lateness = self._plan_lateness_min(self.plan)
        advisories = response_plan(self.graph, event.event, self.plan.routes.values(),
                                   t=max(self.clock, event.event.valid_from),
                                   base_events=self.events)
        self.events.append(event.event)
        self.version += 1

        base = self._with_locks(self.plan)
        no_change, stripped, failed = self._repair(base)
        objective_before = no_change.objective
        states = {oid: "announced" for oid in stripped
                  if self.orders[oid].state == "assigned"}
        states.update({oid: "failed" for oid in failed})
        affected = sorted({a.vehicle_id for a in advisories})
        candidates: list[tuple[str, Plan, dict]] = [("local", no_change, dict(states))]
        if affected:
            post_lateness = self._plan_lateness_min(no_change)
            if stripped or failed or post_lateness > pre_lateness + 1e-9:
                scope = "local" if len(affected) < self.knobs.k_routes else "global"
                mutable = set(affected) if scope == "local" else None
                instance = self.instance()
                improved = cvrp_improve(no_change, instance, self.weights,
                                        SolveBudget(max_iterations=self.knobs.improve_iterations),
                                        mutable_vids=mutable)
                st = dict(states)
                for oid in stripped:
                    if oid not in improved.unassigned:
                        st[oid] = "assigned"
                candidates.append((scope, improved, st))
        pick_scope, plan, states = self._pick(candidates)
        rec = self._emit(adhoc_event_to_dict(event), pick_scope, plan, objective_before, states,
                         notes=tuple(f"advisory:{a.vehicle_id}:leg{a.leg_index}" for a in advisories))
        return rec

    def _handle_missed(self, event: MissedDelivery) -> Recommendation:
        oid = event.order_id
        order = self.orders.get(oid)
        if order is None:
            raise AdvisorError(f"unknown order {oid!r}")
        vid, route, idx = self._find_delivery(oid)
        if vid is None:
            raise AdvisorError(f"order {oid!r} has no delivery stop on any route")

        # Fact: that attempt happened; the stop stays as driven history when
        # already visited, otherwise it is dropped outright.
        stops = list(route.stops)
        if idx < max(self.arrived.get(vid, 1), min(route.locked, len(stops))):
            stops[idx] = replace(stops[idx], order_ids=())
        else:
            del stops[idx]
        new_route = replace(route, stops=tuple(stops))
        self.plan = replace(self.plan, routes={**self.plan.routes, vid: new_route})
        self.version += 1

        base = self._reprice(self._with_locks(self.plan))
        fail_routes = {fvid: _detach_order_from_stops(r, oid) if fvid == vid else r
                       for fvid, r in base.routes.items()}
        fail_plan = self._reprice(Plan(routes=fail_routes,
                                       unassigned=tuple(sorted(set(base.unassigned) | {oid}))))
        objective_before = fail_plan.objective
        candidates: list[tuple[str, Plan, dict]] = [("local", fail_plan, {oid: "failed"})]
        instance = self.instance()
        retry = insert_delivery_only(base, order, vid, instance, self.weights)
        if retry is not None:
            retry = replace(retry, objective=objective(retry, self.weights, self.orders))
            candidates.append(("local", retry, {}))
        scope, plan, states = self._pick(candidates)
        return self._emit(adhoc_event_to_dict(event), scope, plan, objective_before, states)

    def _find_delivery(self, oid: str) -> tuple[str | None, Route | None, int]:
        for vid in sorted(self.plan.routes):
            route = self.plan.routes[vid]
            for i, stop in enumerate(route.stops):
                if stop.action == "delivery" and oid in stop.order_ids:
                    return vid, route, i
        return None, None, -1

    def periodic_reoptimize(self) -> Recommendation:
        """Rolling-horizon pass: improve everything outside the commitment window."""
        if self.plan is None:
            raise AdvisorError("no current plan")
        base = self._with_locks(self.plan)
        no_change = self._reprice(base)
        objective_before = no_change.objective
        instance = self.instance()
        improved = cvrp_improve(no_change, instance, self.weights,
                                SolveBudget(max_iterations=self.knobs.improve_iterations))
        states = {oid: "assigned" for oid in set(no_change.unassigned) - set(improved.unassigned)
                  if self.orders[oid].state == "announced"}
        scope, plan, states = self._pick([("global", no_change, {}),
                                          ("global", improved, states)])
        return self._emit({"type": "reopt_tick"}, "global", plan, objective_before, states)

    # --- XB routing ----------------------------------------------------------

    def _weighted_path_cost(self, path: Path | None) -> float | None:
        if path is None:
            return None
        return (self.weights.w_dist * path.total_distance_m / 1000.0
                + self.weights.w_time * path.total_time_s / 3600.0)

    def xb_route_choice(self, order: Order, force_exchange: bool = False) -> XbChoice:
        """Direct border crossing versus the exchange-office chain, by cost.

        Ties (and forced mode) go to the exchange chain, the established
        conservative route.
        """
        pickup = self.graph.node(order.pickup)
        delivery = self.graph.node(order.delivery)
        if pickup.country == delivery.country:
            raise AdvisorError(f"order {order.id!r} is not cross-border")
        ctx = self.context()
        t = self.clock

        crossings = sorted(n.id for n in self.graph.nodes.values() if n.kind == "border_crossing")
        best_direct: tuple[float, Path, tuple[str, ...]] | None = None
        for crossing in crossings:
            path = leg_path(self.graph, order.pickup, order.delivery, t, ctx, (crossing,))
            cost = self._weighted_path_cost(path)
            if cost is not None and (best_direct is None or cost < best_direct[0]):
                best_direct = (cost, path, (crossing,))

        offices_a = sorted(n.id for n in self.graph.nodes.values()
                           if n.kind == "exchange_office" and n.country == pickup.country)
        offices_b = sorted(n.id for n in self.graph.nodes.values()
                           if n.kind == "exchange_office" and n.country == delivery.country)
        best_chain: tuple[float, Path, tuple[str, ...]] | None = None
        for oa in offices_a:
            for ob in offices_b:
                path = leg_path(self.graph, order.pickup, order.delivery, t, ctx, (oa, ob))
                cost = self._weighted_path_cost(path)
                if cost is not None and (best_chain is None or cost < best_chain[0]):
                    best_chain = (cost, path, (oa, ob))

        if best_direct is None and best_chain is None:
            raise AdvisorError(f"order {order.id!r}: no feasible cross-border mode")
        direct_cost = best_direct[0] if best_direct else None
        chain_cost = best_chain[0] if best_chain else None
        use_direct = (not force_exchange and best_direct is not None
                      and (best_chain is None or direct_cost < chain_cost))
        if use_direct:
            return XbChoice("direct_border", best_direct[1], best_direct[2],
                            direct_cost, chain_cost)
        if best_chain is None:
            # forced exchange but only the direct mode is drivable
            return XbChoice("direct_border", best_direct[1], best_direct[2],
                            direct_cost, chain_cost)
        return XbChoice("via_exchange", best_chain[1], best_chain[2],
                        direct_cost, chain_cost)

    # --- decisions -----------------------------------------------------------

    def decide(self, rec_id: str, verdict: str) -> Recommendation:
        """Apply or discard a proposed recommendation.

        Stale proposals (the state version moved on) are re-validated against
        the live committed prefixes and current context; anything no longer
        feasible expires instead of installing.
        """
        rec = self.recommendations.get(rec_id)
        if rec is None:
            raise DecisionError(f"unknown recommendation {rec_id!r}")
        if rec.status != "proposed":
            raise DecisionError(f"recommendation {rec_id!r} already {rec.status}")
        if self.clock - rec.created_at > rec.ttl_s:
            rec.status = "expired"
            self._push_stream("recommendation", rec.to_dict())
            raise DecisionError(f"recommendation {rec_id!r} expired")
        if verdict not in ("accept", "reject"):
            raise DecisionError(f"verdict must be accept or reject, got {verdict!r}")

        if verdict == "reject":
            rec.status = "rejected"
            self._push_stream("recommendation", rec.to_dict())
            return rec

        proposed = rec.proposed_plan
        if not self._committed_prefixes_intact(proposed):
            rec.status = "expired"
            self._push_stream("recommendation", rec.to_dict())
            raise DecisionError(f"recommendation {rec_id!r} conflicts with committed stops")
        if self.version != rec.base_version:
            proposed = self._reprice(self._with_locks(proposed))
            trial_orders = dict(self.orders)
            for oid, target in rec.order_states.items():
                if oid in trial_orders:
                    trial_orders[oid] = force_state(trial_orders[oid], target)
            report = validate_plan(proposed, self.graph, self.vehicles, trial_orders)
            stale_ok = report.ok and _covered_orders(self.plan) <= _covered_orders(proposed)
            if not stale_ok:
                rec.status = "expired"
                self._push_stream("recommendation", rec.to_dict())
                raise DecisionError(f"recommendation {rec_id!r} stale and no longer feasible")
        self._install(proposed, transitions=rec.order_states)
        rec.status = "accepted"
        self._push_stream("recommendation", rec.to_dict())
        return rec

    def _committed_prefixes_intact(self, proposed: Plan) -> bool:
        if self.plan is None:
            return True
        for vid, current in self.plan.routes.items():
            vehicle = self.vehicles.get(vid)
            if vehicle is not None and vehicle.status == "broken":
                continue  # a broken vehicle honors nothing; truncation is fact
            new_route = proposed.routes.get(vid)
            if new_route is None:
                return False
            lock = self._locked_index(current)
            if len(new_route.stops) < lock:
                return False
            for a, b in zip(current.stops[:lock], new_route.stops[:lock]):
                # Committed stops keep node and action; orders may only be
                # detached (failed cargo bookkeeping), never swapped in.
                if (a.node_id, a.action) != (b.node_id, b.action):
                    return False
                if not set(b.order_ids) <= set(a.order_ids):
                    return False
        return True

    def dry_run(self, event: AdhocEvent) -> Recommendation:
        """What-if: identical computation on a copied state, nothing persisted."""
        shadow = copy.deepcopy(self)
        rec = shadow.handle_event(event)
        return replace_rec_ephemeral(rec)

    # --- views ---------------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "clock": self.clock,
            "version": self.version,
            "orders": {oid: order_to_dict(o) for oid, o in sorted(self.orders.items())},
            "vehicles": {vid: v.status for vid, v in sorted(self.vehicles.items())},
            "active_events": [ev.id for ev in self.events if ev.active_at(self.clock)],
            "plan": plan_to_dict(self.plan) if self.plan else None,
            "recommendations": {rid: r.status for rid, r in sorted(self.recommendations.items())},
        }


def replace_rec_ephemeral(rec: Recommendation) -> Recommendation:
    rec.ephemeral = True
    return rec


def _covered_orders(plan: Plan) -> set[str]:
    covered = set(plan.unassigned)
    for route in plan.routes.values():
        for stop in route.stops:
            covered.update(stop.order_ids)
    return covered
