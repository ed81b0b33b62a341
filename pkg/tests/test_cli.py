import json

from click.testing import CliRunner

from coglo.cli import main
from coglo.sim import generate_xb_scenario


def test_gen_run_compare_round_trip(tmp_path):
    runner = CliRunner()
    scenario_path = tmp_path / "xb.json"
    result = runner.invoke(main, ["gen", "xb", "--seed", "4", "--out", str(scenario_path)])
    assert result.exit_code == 0, result.output
    assert scenario_path.exists()

    report_a = tmp_path / "a.json"
    report_b = tmp_path / "b.json"
    trace_path = tmp_path / "a.jsonl"
    result = runner.invoke(main, ["sim", "run", "--scenario", str(scenario_path),
                                  "--policy", "static", "--out", str(report_a),
                                  "--trace", str(trace_path)])
    assert result.exit_code == 0, result.output
    assert json.loads(report_a.read_text())["total_distance_km"] > 0
    assert trace_path.read_text().count("\n") > 10

    result = runner.invoke(main, ["sim", "run", "--scenario", str(scenario_path),
                                  "--policy", "reactive", "--out", str(report_b)])
    assert result.exit_code == 0, result.output

    table = runner.invoke(main, ["sim", "compare", str(report_a), str(report_b)])
    assert table.exit_code == 0
    assert "total_distance_km" in table.output

    as_json = runner.invoke(main, ["sim", "compare", str(report_a), str(report_b),
                                   "--format", "json"])
    delta = json.loads(as_json.output)
    assert delta["total_distance_km"]["delta"] < 0


def test_seed_override_changes_report_seed_only(tmp_path):
    runner = CliRunner()
    scenario_path = tmp_path / "xb.json"
    scenario_path.write_text(generate_xb_scenario(1).to_json())
    out1 = tmp_path / "r1.json"
    out2 = tmp_path / "r2.json"
    for seed, out in (("1", out1), ("99", out2)):
        result = runner.invoke(main, ["sim", "run", "--scenario", str(scenario_path),
                                      "--policy", "reactive", "--seed", seed,
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
    # this scenario has no stochastic draws, so reports coincide across seeds
    assert json.loads(out1.read_text()) == json.loads(out2.read_text())


def test_validation_errors_exit_2(tmp_path):
    runner = CliRunner()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    result = runner.invoke(main, ["sim", "run", "--scenario", str(bad),
                                  "--policy", "static"])
    assert result.exit_code == 2

    missing_seed = tmp_path / "noseed.json"
    doc = json.loads(generate_xb_scenario(1).to_json())
    del doc["seed"]
    missing_seed.write_text(json.dumps(doc))
    result = runner.invoke(main, ["sim", "run", "--scenario", str(missing_seed),
                                  "--policy", "static"])
    assert result.exit_code == 2

    result = runner.invoke(main, ["sim", "compare", str(bad), str(bad)])
    assert result.exit_code == 2


def test_unknown_policy_rejected_by_click(tmp_path):
    runner = CliRunner()
    scenario_path = tmp_path / "xb.json"
    scenario_path.write_text(generate_xb_scenario(1).to_json())
    result = runner.invoke(main, ["sim", "run", "--scenario", str(scenario_path),
                                  "--policy", "psychic"])
    assert result.exit_code != 0
