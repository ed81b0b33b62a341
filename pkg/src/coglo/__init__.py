"""Traffic-aware parcel logistics: network model, traffic context, CVRP
optimization, ad-hoc re-planning advisor, and a deterministic simulator."""

from .advisor import Advisor, AdvisorKnobs
from .fleet import Order, Plan, Vehicle, validate_plan
from .network import build_graph, shortest_path, travel_time_matrix
from .optimize import (
    ObjectiveWeights,
    assign_min_cost,
    cvrp_construct,
    cvrp_exact,
    cvrp_improve,
    insert_order,
    pack_ffd,
)
from .sim import Scenario, compare, generate_xb_scenario, kpis, run
from .traffic import EventContext, TrafficEvent, publish_rtti

__version__ = "0.1.0"

__all__ = [
    "Advisor", "AdvisorKnobs", "Order", "Plan", "Vehicle", "validate_plan",
    "build_graph", "shortest_path", "travel_time_matrix", "ObjectiveWeights",
    "assign_min_cost", "cvrp_construct", "cvrp_exact", "cvrp_improve",
    "insert_order", "pack_ffd", "Scenario", "compare", "generate_xb_scenario",
    "kpis", "run", "EventContext", "TrafficEvent", "publish_rtti",
]
