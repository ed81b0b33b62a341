"""The solver toolbox: routing, packing, assignment, the multi-modal pipeline
and anticipation buffers.

Run:  python demos/02_optimization.py
"""
import numpy as np

from coglo.fleet import Order, Vehicle
from coglo.optimize import (
    AnticipationStats, CvrpInstance, LinehaulLeg, MatrixProvider, ObjectiveWeights,
    SolveBudget, apply_buffers, assign_min_cost, cvrp_construct, cvrp_exact,
    cvrp_improve, insert_order, multimodal_plan, pack_ffd,
)
from coglo.network import build_graph

T0 = 28_800.0  # 08:00

# Collinear toy world: the depot at km 0, customers at 1, 2, 3 km.
positions = {"depot": 0.0, "stop0": 1.0, "stop1": 2.0, "stop2": 3.0, "late": 2.5}
names = list(positions)
dist = np.array([[abs(positions[a] - positions[b]) * 1000 for b in names] for a in names])
provider = MatrixProvider(names, dist * 3.6 / 60.0, dist)  # 60 km/h

orders = tuple(
    Order(id=f"o{i}", size_units=1, pickup="depot", delivery=f"stop{i}",
          announce_time=0.0, sla_deadline=T0 + 8 * 3600)
    for i in range(3)
)
vehicle = Vehicle(id="van", capacity_units=10, home_depot="depot",
                  shift_start=T0, shift_end=T0 + 12 * 3600)
instance = CvrpInstance(vehicles=(vehicle,), orders=orders, provider=provider, t0=T0)
weights = ObjectiveWeights(w_dist=1.0, w_time=0.0, w_late=0.0, w_vehicle=0.0,
                           w_unassigned=1e6)

# The exact solver is the oracle for tiny instances...
optimal = cvrp_exact(instance, weights)
print(f"exact tour cost: {optimal.objective:.1f} km")

# ...and regret-2 insertion plus local search should land on the same tour here.
plan = cvrp_construct(instance, weights, seed=0)
plan = cvrp_improve(plan, instance, weights, SolveBudget(max_iterations=20))
print(f"construct+improve: {plan.objective:.1f} km")
print("stop order:", [s.node_id for s in plan.routes["van"].stops])

# Ad-hoc insertion finds the cheapest feasible slot without reordering stops.
extra = Order(id="adhoc", size_units=1, pickup="depot", delivery="late",
              announce_time=T0, sla_deadline=T0 + 8 * 3600)
result = insert_order(plan, extra, instance, weights)
print(f"insert 'adhoc' on {result.vehicle_id} at positions "
      f"({result.pickup_pos}, {result.delivery_pos}), delta {result.delta:.2f} km")

# First-fit-decreasing consolidation into transport units.
bins = pack_ffd([5, 4, 3, 2, 1], capacity=6)
print("ffd bins (item indices):", bins)

# Minimum-cost assignment, rectangular inputs welcome.
assignment = assign_min_cost([[10.0, 12.0], [11.0, 9.0], [8.0, 15.0]])
print(f"assignment {assignment.assignment}, cost {assignment.total_cost}, "
      f"unmatched rows {assignment.unmatched_rows}")

# The three-stage multi-modal flow: collect, consolidate, line-haul.
mm = multimodal_plan(
    orders=orders,
    vehicles=(vehicle,),
    origin_office="stop2",
    dest_office_of={o.id: "east-hub" for o in orders},
    linehaul_legs=[LinehaulLeg(id="L1", from_office="stop2", to_office="east-hub", cost=40.0),
                   LinehaulLeg(id="L2", from_office="stop2", to_office="east-hub", cost=55.0)],
    unit_capacity=2,
    weights=weights,
    provider=provider,
    t0=T0,
)
print("transport units:", [(u.id, u.order_ids) for u in mm.units])
print("unit -> leg:", mm.unit_to_leg, "unassigned units:", mm.unassigned_units)

# Anticipation buffers pad service with noise-derived slack and re-time ETAs.
graph = build_graph({
    "nodes": [{"id": n, "lat": 46.0, "lon": 15.0 + positions[n] / 100.0,
               "kind": "depot" if n == "depot" else "customer"} for n in names],
    "edges": [],
})
stats = AnticipationStats(miss_probability={"customer": 0.3})
buffered = apply_buffers(plan, stats, alpha=1.0, instance=instance, graph=graph)
before = plan.routes["van"].stops[-1].eta
after = buffered.routes["van"].stops[-1].eta
print(f"day ends {after - before:.0f} s later with buffers in place")
