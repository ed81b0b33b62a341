"""Command line entry points: simulate, compare, generate, serve.

Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .sim import (
    GenerationError,
    ScenarioError,
    XbParams,
    compare,
    generate_xb_scenario,
    kpi_report_from_dict,
    run as run_simulation,
    scenario_from_json,
)

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@click.group()
def main():
    """Traffic-aware logistics planning and simulation."""


@main.group("sim")
def sim_group():
    """Run and compare day-of-operations simulations."""


@sim_group.command("run")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(path_type=Path))
@click.option("--policy", required=True,
              type=click.Choice(["static", "reactive", "anticipatory"]))
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Write the KPI report JSON here.")
@click.option("--trace", "trace_path", type=click.Path(path_type=Path), default=None,
              help="Write the JSONL event trace here.")
def sim_run(scenario_path: Path, policy: str, seed: int | None, out_path: Path | None,
            trace_path: Path | None):
    """Simulate one day under POLICY and report KPIs."""
    try:
        scenario = scenario_from_json(scenario_path.read_text())
        if seed is not None:
            from dataclasses import replace
            scenario = replace(scenario, seed=seed)
    except (OSError, ScenarioError) as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    try:
        trace, report = run_simulation(scenario, policy)
    except Exception as exc:
        click.echo(f"simulation failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    if out_path is not None:
        out_path.write_text(report.to_json())
    if trace_path is not None:
        trace_path.write_text(trace.to_jsonl())
    click.echo(report.to_json())


@sim_group.command("compare")
@click.argument("report_a", type=click.Path(path_type=Path))
@click.argument("report_b", type=click.Path(path_type=Path))
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table")
def sim_compare(report_a: Path, report_b: Path, fmt: str):
    """Per-KPI deltas of REPORT_B against REPORT_A (negative cost = better)."""
    try:
        a = kpi_report_from_dict(json.loads(report_a.read_text()))
        b = kpi_report_from_dict(json.loads(report_b.read_text()))
    except (OSError, KeyError, ValueError) as exc:
        click.echo(f"report error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    delta = compare(a, b)
    if fmt == "json":
        click.echo(json.dumps(delta, sort_keys=True, indent=2))
        return
    header = f"{'kpi':22s} {'a':>12s} {'b':>12s} {'delta':>12s} {'pct':>8s}"
    click.echo(header)
    click.echo("-" * len(header))
    for key, row in delta.items():
        pct = "n/a" if row["pct"] is None else f"{row['pct']:+.1f}%"
        click.echo(f"{key:22s} {row['a']:12.3f} {row['b']:12.3f} "
                   f"{row['delta']:+12.3f} {pct:>8s}")


@main.group("gen")
def gen_group():
    """Generate synthetic scenarios."""


@gen_group.command("xb")
@click.option("--seed", type=int, default=0)
@click.option("--near", type=int, default=6, help="Near-border parcel count.")
@click.option("--inland", type=int, default=0, help="Inland parcel count.")
@click.option("--adhoc", type=int, default=6, help="Mid-day ad-hoc parcel count.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def gen_xb(seed: int, near: int, inland: int, adhoc: int, out_path: Path):
    """Generate the two-country cross-border scenario."""
    try:
        scenario = generate_xb_scenario(seed, XbParams(near=near, inland=inland,
                                                       adhoc=adhoc))
    except (GenerationError, ScenarioError) as exc:
        click.echo(f"generation failed: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    out_path.write_text(scenario.to_json())
    click.echo(f"wrote {out_path} ({len(scenario.orders)} orders, seed {seed})")


@main.command("serve")
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--scenario", "scenario_path", type=click.Path(path_type=Path), default=None,
              help="Preload this scenario at startup.")
def serve(port: int, host: str, scenario_path: Path | None):
    """Run the advisor HTTP service."""
    import uvicorn

    from .service import create_app

    app = create_app()
    if scenario_path is not None:
        try:
            raw = json.loads(scenario_path.read_text())
            scenario_id = app.state.load_scenario(raw)
        except (OSError, ScenarioError, json.JSONDecodeError) as exc:
            click.echo(f"scenario error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        click.echo(f"preloaded scenario as {scenario_id}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
