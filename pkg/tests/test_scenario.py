"""Scenario file parsing and validation."""

import pytest
import yaml
from numpy.testing import assert_allclose

import cvheat
from cvheat.scenario import (
    ScenarioError,
    initial_temperatures,
    load_scenario,
    load_sweep,
    scenario_from_dict,
)

MINIMAL = {
    "schema_version": 1,
    "system": {"n_pi": 1, "n_x": 2},
    "timestep_s": 7200,
    "horizon": 2,
    "sim_steps": 1,
    "initial_temperatures": {"uniform": 300.0},
    "series": {
        "price_eur_per_kwh": 0.25,
        "theta_soil_k": 280.0,
        "theta_air_k": 275.0,
    },
}


def test_minimal_scenario_roundtrip(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(MINIMAL))
    scen = load_scenario(path)
    assert scen.params.n_pi == 1
    assert scen.sim_steps == 1
    assert len(scen.prices) == 3  # sim + horizon
    model = scen.build_model()
    assert model.net.n_theta == 12


def test_scalar_series_expand():
    scen = scenario_from_dict(MINIMAL)
    assert_allclose(scen.theta_soil, 280.0)
    assert_allclose(scen.prices, 0.25)


def test_series_too_short_rejected():
    cfg = dict(MINIMAL)
    cfg["series"] = dict(MINIMAL["series"], price_eur_per_kwh=[0.25, 0.25])
    with pytest.raises(ScenarioError, match="price_eur_per_kwh"):
        scenario_from_dict(cfg)


def test_csv_series(tmp_path):
    (tmp_path / "prices.csv").write_text(
        "price_eur_per_kwh\n0.1\n0.2\n0.3\n0.4\n"
    )
    cfg = dict(MINIMAL)
    cfg["series"] = dict(MINIMAL["series"], price_eur_per_kwh={"csv": "prices.csv"})
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(cfg))
    scen = load_scenario(path)
    assert_allclose(scen.prices[:4], [0.1, 0.2, 0.3, 0.4])


def test_missing_csv_named(tmp_path):
    cfg = dict(MINIMAL)
    cfg["series"] = dict(MINIMAL["series"], price_eur_per_kwh={"csv": "nope.csv"})
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(cfg))
    with pytest.raises(ScenarioError, match="nope.csv"):
        load_scenario(path)


def test_schema_version_checked():
    cfg = dict(MINIMAL, schema_version=99)
    with pytest.raises(ScenarioError, match="schema_version"):
        scenario_from_dict(cfg)


def test_negative_price_rejected():
    cfg = dict(MINIMAL)
    cfg["series"] = dict(MINIMAL["series"], price_eur_per_kwh=-0.1)
    with pytest.raises(ScenarioError):
        scenario_from_dict(cfg)


def test_kind_based_initial_temperatures(params23):
    theta = initial_temperatures(
        params23, {"pipe": 310.0, "soil_bottom": 290.0, "soil_top": 285.0}
    )
    from cvheat.heatfield import grid_of_state

    for i, v in enumerate(theta):
        gi = grid_of_state(params23, i)
        if gi.kind == "pipe":
            assert v == 310.0
        elif gi.layer == "bottom":
            assert v == 290.0
        else:
            assert v == 285.0


def test_per_cv_initial_temperatures_length_checked(params23):
    with pytest.raises(ScenarioError):
        initial_temperatures(params23, [300.0] * 7)


def test_unknown_system_parameter_rejected():
    cfg = dict(MINIMAL, system={"n_pi": 1, "n_x": 2, "params": {"bogus": 1.0}})
    with pytest.raises(ScenarioError):
        scenario_from_dict(cfg)


def test_pd_config_passthrough():
    cfg = dict(MINIMAL, controller={"kind": "pd", "alpha0": 7.5, "i_max": 3})
    scen = scenario_from_dict(cfg)
    assert scen.pd.alpha0 == 7.5
    assert scen.pd.i_max == 3
    assert scen.pd.n_c == cfg["horizon"]


def test_sweep_loading(tmp_path):
    cfg = dict(MINIMAL, sweep=[[1, 2], [2, 3]])
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump(cfg))
    pairs, template = load_sweep(path)
    assert pairs == [(1, 2), (2, 3)]
    assert "sweep" not in template


def test_sweep_rejects_per_cv_temperatures(tmp_path):
    cfg = dict(MINIMAL, sweep=[[1, 2]], initial_temperatures=[300.0] * 12)
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump(cfg))
    with pytest.raises(ScenarioError):
        load_sweep(path)


def test_shipped_scenarios_parse():
    for name in ("benchmark_2x3_48h.yaml", "small_1x2.yaml"):
        scen = load_scenario(f"scenarios/{name}")
        assert scen.sim_steps >= 1
