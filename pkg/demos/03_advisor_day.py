"""A dispatcher's day with the advisor: orchestrate, absorb ad-hoc events,
review recommendations, try what-ifs.

Run:  python demos/03_advisor_day.py
"""
from coglo.advisor import (
    Advisor, AdvisorKnobs, ManualDisturbance, MissedDelivery, NewOrder,
    TrafficDisturbance, VehicleBreakdown,
)
from coglo.fleet import Order, Vehicle
from coglo.network import build_graph
from coglo.optimize import ObjectiveWeights
from coglo.traffic import EdgeScope, Effect, TrafficEvent

T0 = 28_800.0

# A small town: depot, four customers on a line, a slow bypass road.
nodes = [{"id": "depot", "lat": 46.0, "lon": 15.00, "kind": "depot", "country": "XA"}]
edges = []
prev = "depot"
for i in range(4):
    nid = f"c{i}"
    nodes.append({"id": nid, "lat": 46.0, "lon": 15.01 + 0.012 * i,
                  "kind": "customer", "country": "XA"})
    edges += [
        {"id": f"e{i}f", "from": prev, "to": nid, "length_m": 1200, "free_flow_speed_kmh": 50},
        {"id": f"e{i}r", "from": nid, "to": prev, "length_m": 1200, "free_flow_speed_kmh": 50},
    ]
    prev = nid
edges += [
    {"id": "bypf", "from": "depot", "to": "c3", "length_m": 6500, "free_flow_speed_kmh": 70},
    {"id": "bypr", "from": "c3", "to": "depot", "length_m": 6500, "free_flow_speed_kmh": 70},
]
graph = build_graph({"nodes": nodes, "edges": edges})

vehicles = [
    Vehicle(id="van1", capacity_units=8, home_depot="depot", shift_start=T0,
            shift_end=T0 + 10 * 3600),
    Vehicle(id="van2", capacity_units=8, home_depot="depot", shift_start=T0,
            shift_end=T0 + 10 * 3600),
]
orders = [
    Order(id=f"job{i}", size_units=2, pickup="depot", delivery=f"c{i}",
          announce_time=T0 - 1800, sla_deadline=T0 + 3 * 3600)
    for i in range(4)
]
weights = ObjectiveWeights(w_dist=1.0, w_time=0.5, w_late=1.0, w_vehicle=5.0,
                           w_unassigned=50_000.0)
advisor = Advisor(graph, vehicles, orders, weights,
                  AdvisorKnobs(service_time_s=120.0, horizon_s=600.0), seed=1, t0=T0)

plan = advisor.daily_orchestration()
print(f"morning plan v{advisor.version}, objective {plan.objective:.1f}")
for vid, route in sorted(plan.routes.items()):
    print(f"  {vid}: {[s.node_id for s in route.stops]}")

# 09:00 - congestion on the first line segment. The advisor registers the fact
# and proposes the best response (possibly: change nothing).
advisor.advance_clock(T0 + 3600)
jam = TrafficEvent(id="jam", kind="congestion", scope=EdgeScope(("e0f", "e0r")),
                   severity=0.6, effect=Effect(speed_multiplier=0.4),
                   valid_from=T0 + 3600, valid_to=T0 + 3 * 3600)
rec = advisor.handle_event(TrafficDisturbance(event=jam))
print(f"\n[{rec.id}] traffic: {rec.objective_before:.1f} -> {rec.objective_after:.1f} "
      f"({rec.scope}); dispatcher accepts")
advisor.decide(rec.id, "accept")

# 09:10 - a customer calls in a new parcel. What would accepting it do?
ghost = advisor.dry_run(NewOrder(order=Order(
    id="maybe", size_units=1, pickup="depot", delivery="c2",
    announce_time=T0 + 4200, sla_deadline=T0 + 5 * 3600)))
print(f"\nwhat-if 'maybe': delta {ghost.objective_after - ghost.objective_before:+.1f} "
      f"(ephemeral={ghost.ephemeral}, state untouched: v{advisor.version})")

# The real order arrives and is inserted for real this time.
advisor.advance_clock(T0 + 4200)
rec = advisor.handle_event(NewOrder(order=Order(
    id="express", size_units=1, pickup="depot", delivery="c2",
    announce_time=T0 + 4200, sla_deadline=T0 + 5 * 3600)))
advisor.decide(rec.id, "accept")
print(f"[{rec.id}] express inserted on "
      f"{[vid for vid in rec.delta.routes_after]}, objective {rec.objective_after:.1f}")

# 09:30 - van1 breaks down; its remaining work moves to van2 where feasible.
advisor.advance_clock(T0 + 5400)
rec = advisor.handle_event(VehicleBreakdown(vehicle_id="van1", at=T0 + 5400))
advisor.decide(rec.id, "accept")
print(f"[{rec.id}] breakdown handled: unassigned now {rec.proposed_plan.unassigned}")

# Periodic re-optimization keeps things tidy between events.
rec = advisor.periodic_reoptimize()
advisor.decide(rec.id, "accept")
print(f"[{rec.id}] reopt tick: {rec.objective_before:.1f} -> {rec.objective_after:.1f}")

print(f"\nday state: v{advisor.version}, "
      f"orders {'/'.join(sorted(set(o.state for o in advisor.orders.values())))}")
