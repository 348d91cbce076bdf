"""CLI surface: runs, CSV artifacts, validation, exit codes."""

import csv
from pathlib import Path

import yaml

from cvheat.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    main,
    validate_model,
)
from cvheat.scenario import load_scenario

QUICK = {
    "schema_version": 1,
    "system": {"n_pi": 1, "n_x": 2},
    "timestep_s": 7200,
    "horizon": 2,
    "sim_steps": 1,
    "initial_temperatures": {"pipe": 285.0, "soil_bottom": 283.0, "soil_top": 282.0},
    "series": {
        "price_eur_per_kwh": 0.25,
        "theta_soil_k": 279.0,
        "theta_air_k": 275.0,
    },
    "controller": {"kind": "pd", "i_max": 5},
    "safe_plan": {"mdot": 2.0, "dtheta": 2.0},
}


def write_scenario(tmp_path, cfg, name="scenario.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestRun:
    def test_minimal_run_writes_three_csvs(self, tmp_path):
        scen = write_scenario(tmp_path, QUICK)
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(scen), "--out", str(out)]) == EXIT_OK
        traj = read_csv(out / "trajectory.csv")
        trace = read_csv(out / "trace.csv")
        summary = read_csv(out / "summary.csv")
        assert len(traj) == 1
        assert len(summary) == 1
        assert len(trace) >= 1
        assert summary[0]["n_variables"] == "19"
        # every column name carries a unit suffix
        for col in traj[0]:
            if col != "step":
                assert col.rsplit("_", 1)[-1] in {
                    "s", "K", "kgps", "Pa", "eur", "kwh",
                }, col

    def test_deterministic_reruns(self, tmp_path):
        scen = write_scenario(tmp_path, dict(QUICK, sim_steps=2))
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--scenario", str(scen), "--out", str(out1)]) == EXIT_OK
        assert main(["run", "--scenario", str(scen), "--out", str(out2)]) == EXIT_OK
        assert (out1 / "trajectory.csv").read_bytes() == (
            out2 / "trajectory.csv"
        ).read_bytes()
        # the trace is identical except for measured wall time
        strip = lambda p: [
            {k: v for k, v in row.items() if k != "wall_ms"} for row in read_csv(p)
        ]
        assert strip(out1 / "trace.csv") == strip(out2 / "trace.csv")

    def test_bad_scenario_exit_code(self, tmp_path):
        bad = write_scenario(tmp_path, dict(QUICK, schema_version=5))
        assert (
            main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")])
            == EXIT_CONFIG
        )

    def test_missing_file_exit_code(self, tmp_path):
        code = main(
            ["run", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]
        )
        assert code == EXIT_CONFIG

    def test_infeasible_scenario_exit_code(self, tmp_path):
        cfg = dict(QUICK)
        cfg["system"] = {
            "n_pi": 1,
            "n_x": 2,
            "params": {"theta_soil_min": 299.9, "theta_soil_max": 300.1},
        }
        scen = write_scenario(tmp_path, cfg)
        code = main(["run", "--scenario", str(scen), "--out", str(tmp_path / "o")])
        assert code == 3


class TestBench:
    def test_tiny_sweep(self, tmp_path):
        cfg = dict(QUICK, sweep=[[1, 2], [2, 2]])
        sweep = write_scenario(tmp_path, cfg, "sweep.yaml")
        out = tmp_path / "bench"
        assert main(["bench", "--sweep", str(sweep), "--out", str(out)]) == EXIT_OK
        rows = read_csv(out / "bench.csv")
        assert [r["n_pipes"] for r in rows] == ["1", "2"]
        assert rows[0]["n_variables"] == "19"
        assert all(r["status"] == "ok" for r in rows)

    def test_empty_sweep_header_only(self, tmp_path):
        cfg = dict(QUICK, sweep=[])
        sweep = write_scenario(tmp_path, cfg, "sweep.yaml")
        out = tmp_path / "bench"
        assert main(["bench", "--sweep", str(sweep), "--out", str(out)]) == EXIT_OK
        text = (out / "bench.csv").read_text().splitlines()
        assert len(text) == 1 and text[0].startswith("n_pipes,")


class TestValidate:
    def test_default_scenario_all_checks_pass(self, tmp_path):
        scen = write_scenario(tmp_path, QUICK)
        assert main(["validate-model", "--scenario", str(scen)]) == EXIT_OK

    def test_variable_count_printed_for_1x2(self, tmp_path, capsys):
        scen = write_scenario(tmp_path, QUICK)
        main(["validate-model", "--scenario", str(scen)])
        out = capsys.readouterr().out
        assert "per-step count 19" in out
        assert "PASS" in out and "FAIL" not in out

    def test_injected_corruption_fails_antisymmetry(self, tmp_path, capsys):
        scen = write_scenario(tmp_path, QUICK)
        code = main(
            [
                "validate-model",
                "--scenario",
                str(scen),
                "--inject-corruption",
                "negate-coupling",
            ]
        )
        assert code != EXIT_OK
        out = capsys.readouterr().out
        assert "FAIL  capacity_weighted_antisymmetry" in out

    def test_validate_model_api(self):
        scen = load_scenario("scenarios/small_1x2.yaml")
        checks = validate_model(scen)
        assert all(ok for _, ok, _ in checks)
