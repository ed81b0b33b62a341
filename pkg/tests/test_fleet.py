import json
import math

import pytest

from coglo.fleet import (
    IllegalTransition,
    Order,
    Plan,
    PlanError,
    Route,
    Stop,
    UNREACHABLE,
    ValidationReport,
    Vehicle,
    compute_etas,
    empty_route,
    plan_to_dict,
    plan_to_geojson,
    plan_to_json,
    transition,
    validate_plan,
)
from coglo.network import build_graph
from coglo.optimize import GraphProvider
from coglo.traffic import EdgeScope, Effect, EventContext, TrafficEvent

T0 = 28_800.0  # 08:00:00


def eta_graph():
    return build_graph({
        "nodes": [
            {"id": "D", "lat": 46.0, "lon": 15.0, "kind": "depot"},
            {"id": "X", "lat": 46.0, "lon": 15.08, "kind": "customer"},
        ],
        "edges": [
            {"id": "dx", "from": "D", "to": "X", "length_m": 6000.0, "free_flow_speed_kmh": 36.0},
            {"id": "xd", "from": "X", "to": "D", "length_m": 6000.0, "free_flow_speed_kmh": 36.0},
        ],
    })


def vehicle(vid="v1", capacity=10, depot="D"):
    return Vehicle(id=vid, capacity_units=capacity, home_depot=depot,
                   shift_start=T0, shift_end=T0 + 12 * 3600)


def delivery_route(service=0.0):
    return Route(vehicle_id="v1", stops=(
        Stop(node_id="D", action="depot_start", eta=T0),
        Stop(node_id="X", action="delivery", order_ids=("o1",), service_time_s=service),
        Stop(node_id="D", action="depot_end"),
    ))


class TestComputeEtas:
    def test_plain_travel(self):
        graph = eta_graph()
        provider = GraphProvider(graph)
        route = compute_etas(delivery_route(), vehicle(), provider.leg, T0)
        assert route.stops[1].eta == pytest.approx(T0 + 600.0)  # 08:10:00
        assert route.stops[1].leg_distance_m == pytest.approx(6000.0)

    def test_event_halves_speed(self):
        graph = eta_graph()
        event = TrafficEvent(id="slow", kind="congestion", scope=EdgeScope(("dx",)),
                             severity=0.5, effect=Effect(speed_multiplier=0.5),
                             valid_from=0.0, valid_to=10 ** 9)
        provider = GraphProvider(graph, EventContext(graph, [event]))
        route = compute_etas(delivery_route(), vehicle(), provider.leg, T0)
        assert route.stops[1].eta == pytest.approx(T0 + 1200.0)  # 08:20:00

    def test_unreachable_propagates(self):
        graph = eta_graph()
        event = TrafficEvent(id="blk", kind="closure", scope=EdgeScope(("dx",)),
                             severity=1.0, effect=Effect(closed=True),
                             valid_from=0.0, valid_to=10 ** 9)
        provider = GraphProvider(graph, EventContext(graph, [event]))
        route = compute_etas(delivery_route(), vehicle(), provider.leg, T0)
        assert route.stops[1].eta == UNREACHABLE
        assert route.stops[2].eta == UNREACHABLE

    def test_service_and_slack_accumulate(self):
        graph = eta_graph()
        provider = GraphProvider(graph)
        stops = (
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="X", action="delivery", order_ids=("o1",),
                 service_time_s=120.0, slack_s=60.0),
            Stop(node_id="D", action="depot_end"),
        )
        route = compute_etas(Route(vehicle_id="v1", stops=stops), vehicle(), provider.leg, T0)
        assert route.stops[1].eta == pytest.approx(T0 + 600.0)
        assert route.stops[2].eta == pytest.approx(T0 + 600.0 + 180.0 + 600.0)

    def test_eta_monotone_along_route(self):
        graph = eta_graph()
        provider = GraphProvider(graph)
        route = compute_etas(delivery_route(service=45.0), vehicle(), provider.leg, T0)
        etas = [s.eta for s in route.stops]
        assert all(b >= a for a, b in zip(etas, etas[1:]))

    def test_shift_start_floor(self):
        graph = eta_graph()
        provider = GraphProvider(graph)
        route = compute_etas(delivery_route(), vehicle(), provider.leg, T0 - 7200)
        assert route.stops[0].eta == T0


class TestTransitions:
    def test_legal_chain(self):
        order = Order(id="o1", size_units=1, pickup="D", delivery="X",
                      announce_time=0.0, sla_deadline=T0 + 3600)
        for target in ("assigned", "picked_up", "in_transit", "delivered"):
            order = transition(order, target)
        assert order.state == "delivered"

    def test_exchange_leg(self):
        order = Order(id="o1", size_units=1, pickup="D", delivery="X",
                      announce_time=0.0, sla_deadline=T0, state="picked_up")
        order = transition(order, "at_exchange")
        order = transition(order, "in_transit")
        assert order.state == "in_transit"

    def test_illegal_transition_names_both_states(self):
        order = Order(id="o1", size_units=1, pickup="D", delivery="X",
                      announce_time=0.0, sla_deadline=T0, state="delivered")
        with pytest.raises(IllegalTransition, match="delivered -> picked_up"):
            transition(order, "picked_up")

    def test_announced_can_fail_unserved(self):
        order = Order(id="o1", size_units=1, pickup="D", delivery="X",
                      announce_time=0.0, sla_deadline=T0)
        assert transition(order, "failed").state == "failed"


def two_node_graph():
    return build_graph({
        "nodes": [
            {"id": "D", "lat": 46.0, "lon": 15.0, "kind": "depot"},
            {"id": "P", "lat": 46.0, "lon": 15.01, "kind": "customer"},
            {"id": "Q", "lat": 46.0, "lon": 15.02, "kind": "customer"},
        ],
        "edges": [],
    })


def order(oid, size=1, pickup="P", delivery="Q", sla=T0 + 7200):
    return Order(id=oid, size_units=size, pickup=pickup, delivery=delivery,
                 announce_time=0.0, sla_deadline=sla)


class TestValidatePlan:
    def test_empty_routes_valid(self):
        graph = two_node_graph()
        veh = vehicle()
        plan = Plan(routes={"v1": empty_route(veh, T0)})
        report = validate_plan(plan, graph, {"v1": veh}, {})
        assert report.ok
        assert report.lateness_total_min == 0.0

    def test_capacity_violation_located(self):
        graph = two_node_graph()
        veh = Vehicle(id="v1", capacity_units=10, home_depot="D",
                      shift_start=T0, shift_end=T0 + 3600)
        big = order("o1", size=11)
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=T0),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=T0),
            Stop(node_id="D", action="depot_end", eta=T0),
        ))
        report = validate_plan(Plan(routes={"v1": route}), graph, {"v1": veh}, {"o1": big})
        kinds = [v.kind for v in report.violations]
        assert "capacity" in kinds
        violation = next(v for v in report.violations if v.kind == "capacity")
        assert violation.stop_index == 1

    def test_delivery_before_pickup(self):
        graph = two_node_graph()
        veh = vehicle()
        o = order("o1")
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=T0),
            Stop(node_id="D", action="depot_end", eta=T0),
        ))
        report = validate_plan(Plan(routes={"v1": route}), graph, {"v1": veh}, {"o1": o})
        assert any(v.kind == "precedence" and v.order_id == "o1" for v in report.violations)

    def test_unknown_node_reported(self):
        graph = two_node_graph()
        veh = vehicle()
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="NOPE", action="delivery", order_ids=(), eta=T0),
            Stop(node_id="D", action="depot_end", eta=T0),
        ))
        report = validate_plan(Plan(routes={"v1": route}), graph, {"v1": veh}, {})
        assert any(v.kind == "unknown_node" for v in report.violations)

    def test_duplicate_order_across_route_and_unassigned(self):
        graph = two_node_graph()
        veh = vehicle()
        o = order("o1")
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=T0),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=T0),
            Stop(node_id="D", action="depot_end", eta=T0),
        ))
        plan = Plan(routes={"v1": route}, unassigned=("o1",))
        report = validate_plan(plan, graph, {"v1": veh}, {"o1": o})
        assert any(v.kind == "duplicate_order" for v in report.violations)

    def test_sla_miss_is_soft(self):
        graph = two_node_graph()
        veh = vehicle()
        o = order("o1", sla=T0 + 60)
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=T0 + 100),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=T0 + 660),
            Stop(node_id="D", action="depot_end", eta=T0 + 700),
        ))
        report = validate_plan(Plan(routes={"v1": route}), graph, {"v1": veh}, {"o1": o})
        assert report.ok  # late but hard-feasible
        assert report.lateness_total_min == pytest.approx(10.0)

    def test_shift_violation_on_unreachable(self):
        graph = two_node_graph()
        veh = vehicle()
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=UNREACHABLE),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=UNREACHABLE),
            Stop(node_id="D", action="depot_end", eta=UNREACHABLE),
        ))
        report = validate_plan(Plan(routes={"v1": route}), graph, {"v1": veh},
                               {"o1": order("o1")})
        assert any(v.kind == "shift" for v in report.violations)

    def test_pure_function(self):
        graph = two_node_graph()
        veh = vehicle()
        o = order("o1")
        plan = Plan(routes={"v1": empty_route(veh, T0)}, unassigned=("o1",))
        first = validate_plan(plan, graph, {"v1": veh}, {"o1": o})
        second = validate_plan(plan, graph, {"v1": veh}, {"o1": o})
        assert first == second


class TestSerialization:
    def test_plan_json_round_trip_stability(self):
        veh = vehicle()
        plan = Plan(routes={"v1": empty_route(veh, T0)}, unassigned=("o2", "o1"))
        blob1 = plan_to_json(plan)
        blob2 = plan_to_json(plan)
        assert blob1 == blob2
        payload = json.loads(blob1)
        assert payload["unassigned"] == ["o1", "o2"]

    def test_geojson_one_feature_per_leg(self):
        graph = two_node_graph()
        veh = vehicle()
        o = order("o1")
        route = Route(vehicle_id="v1", stops=(
            Stop(node_id="D", action="depot_start", eta=T0),
            Stop(node_id="P", action="pickup", order_ids=("o1",), eta=T0 + 10),
            Stop(node_id="Q", action="delivery", order_ids=("o1",), eta=T0 + 20),
            Stop(node_id="D", action="depot_end", eta=T0 + 30),
        ))
        doc = plan_to_geojson(Plan(routes={"v1": route}), graph, {"o1": o})
        assert len(doc["features"]) == 3
        loads = [f["properties"]["load"] for f in doc["features"]]
        assert loads == [0, 1, 0]


class TestStructuralGuards:
    def test_route_needs_depots(self):
        with pytest.raises(PlanError):
            Route(vehicle_id="v1", stops=(Stop(node_id="D", action="pickup"),
                                          Stop(node_id="D", action="depot_end")))

    def test_order_guards(self):
        with pytest.raises(PlanError):
            Order(id="bad", size_units=0, pickup="P", delivery="Q",
                  announce_time=0.0, sla_deadline=0.0)
        with pytest.raises(PlanError):
            Order(id="bad", size_units=1, pickup="P", delivery="P",
                  announce_time=0.0, sla_deadline=0.0)

    def test_vehicle_guards(self):
        with pytest.raises(PlanError):
            Vehicle(id="v", capacity_units=0, home_depot="D", shift_start=0.0, shift_end=10.0)
        with pytest.raises(PlanError):
            Vehicle(id="v", capacity_units=1, home_depot="D", shift_start=10.0, shift_end=10.0)
