"""Cross-border bypass study: fixed exchange-chain baseline versus the
managed policies, on the synthetic two-country scenario.

Run:  python demos/04_xb_comparison.py
"""
from coglo.sim import compare, generate_xb_scenario, run

scenario = generate_xb_scenario(seed=0)
print(f"scenario: {len(scenario.orders)} parcels, "
      f"{len(scenario.vehicles)} vehicles, seed {scenario.seed}\n")

reports = {}
for policy in ("static", "reactive", "anticipatory"):
    trace, report = run(scenario, policy)
    reports[policy] = report
    d = report.to_dict()
    print(f"{policy:13s} distance {d['total_distance_km']:7.1f} km | "
          f"fuel {d['total_fuel_l']:6.1f} l | cost {d['total_cost']:7.1f} | "
          f"load factor {d['load_factor']:.3f} | on-time {d['on_time_rate']:.2f} | "
          f"delivered {d['delivered']:2d} | failed {d['failed']}")

print("\nreactive vs static, per KPI (negative distance/fuel/cost = improvement):")
for key, row in compare(reports["static"], reports["reactive"]).items():
    pct = "  n/a" if row["pct"] is None else f"{row['pct']:+6.1f}%"
    print(f"  {key:20s} {row['a']:9.2f} -> {row['b']:9.2f}   {row['delta']:+9.2f}  {pct}")

print("\nWhy: the baseline hands every cross-border parcel through both exchange")
print("offices (first-mile van, line-haul truck, last-mile van - empty approaches")
print("and returns included), while the managed policies send near-border parcels")
print("straight through the crossing and consolidate mid-day demand into the same")
print("short trips. Same parcels, same network, different kilometres.")
