"""Scenario files: experiment configuration for runs and benchmarks.

A scenario is one human-editable YAML file with an explicit schema
version.  Time series are step-indexed and piecewise-constant over the
timestep; they may be given inline, as a constant, or as a CSV reference.
Series must cover ``sim_steps + horizon`` entries so the controller always
has a full preview.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .bdf import DiscreteModel
from .heatfield import HeatfieldParams, build, grid_of_state
from .model import ModelError
from .pdmpc import PdConfig, SafePlan
from .plant import CarryRule

SCHEMA_VERSION = 1


class ScenarioError(ModelError):
    pass


@dataclass(frozen=True)
class GridSpec:
    points: int
    low: float
    high: float

    def values(self) -> np.ndarray:
        return np.linspace(self.low, self.high, self.points)


@dataclass(frozen=True)
class Scenario:
    params: HeatfieldParams
    dt: float
    n_c: int
    sim_steps: int
    theta0: np.ndarray
    prices: np.ndarray
    theta_soil: np.ndarray
    theta_air: np.ndarray
    controller: str  # "pd" | "grid"
    pd: PdConfig
    grid: GridSpec | None
    safe_plan: SafePlan
    seed: int
    order: int = 2

    def build_model(self) -> DiscreteModel:
        return DiscreteModel(build(self.params), self.dt, self.order)

    def disturbances(self) -> np.ndarray:
        return np.column_stack([self.theta_soil, self.theta_air])

    def carry_rules(self) -> tuple:
        # Outlet mixing row is vacuous at zero total flow; hold theta_out.
        return (CarryRule(family="f_t", row=1, block="z_t", index=1),)

    def initial_z(self):
        pipe_temps = [
            self.theta0[i]
            for i in range(self.params.n_theta)
            if grid_of_state(self.params, i).kind == "pipe"
        ]
        theta_out = float(np.mean(pipe_temps)) if pipe_temps else 0.0
        return np.zeros(self.params.n_pi), np.array([theta_out, theta_out])


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ScenarioError(f"missing key {key!r} in {where}")
    return cfg[key]


def _series(spec, name: str, length: int, base_dir: Path) -> np.ndarray:
    """Inline list, scalar constant, or {csv: path, column: name}."""
    if isinstance(spec, (int, float)):
        return np.full(length, float(spec))
    if isinstance(spec, list):
        values = np.asarray(spec, float)
    elif isinstance(spec, dict) and "csv" in spec:
        path = base_dir / spec["csv"]
        if not path.exists():
            raise ScenarioError(f"series {name}: file not found: {path}")
        column = spec.get("column", name)
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if column not in (reader.fieldnames or []):
                raise ScenarioError(f"series {name}: column {column!r} not in {path}")
            values = np.array([float(row[column]) for row in reader])
    else:
        raise ScenarioError(
            f"series {name}: expected scalar, list, or {{csv, column}}, got {spec!r}"
        )
    if len(values) < length:
        raise ScenarioError(
            f"series {name}: {len(values)} entries, need >= {length} (sim_steps + horizon)"
        )
    return values


def initial_temperatures(params: HeatfieldParams, spec) -> np.ndarray:
    """Uniform value, per-kind dict, or explicit per-CV list."""
    n = params.n_theta
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    if isinstance(spec, list):
        values = np.asarray(spec, float)
        if len(values) != n:
            raise ScenarioError(
                f"initial_temperatures: {len(values)} values for {n} states"
            )
        return values
    if isinstance(spec, dict):
        if "uniform" in spec:
            return np.full(n, float(spec["uniform"]))
        keys = {"pipe", "soil_bottom", "soil_top"}
        if not keys <= set(spec):
            raise ScenarioError(
                f"initial_temperatures dict needs {sorted(keys)} or 'uniform'"
            )
        theta = np.empty(n)
        for i in range(n):
            gi = grid_of_state(params, i)
            if gi.kind == "pipe":
                theta[i] = spec["pipe"]
            elif gi.layer == "bottom":
                theta[i] = spec["soil_bottom"]
            else:
                theta[i] = spec["soil_top"]
        return theta
    raise ScenarioError(f"cannot interpret initial_temperatures: {spec!r}")


def scenario_from_dict(cfg: dict, base_dir: Path = Path(".")) -> Scenario:
    version = _require(cfg, "schema_version", "scenario")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    system = _require(cfg, "system", "scenario")
    overrides = dict(system.get("params", {}))
    try:
        params = HeatfieldParams(
            n_pi=int(_require(system, "n_pi", "system")),
            n_x=int(_require(system, "n_x", "system")),
            **overrides,
        )
    except TypeError as exc:
        raise ScenarioError(f"unknown system parameter: {exc}") from exc
    if not bool(cfg.get("allow_unphysical", False)):
        params.check()
    dt = float(_require(cfg, "timestep_s", "scenario"))
    n_c = int(_require(cfg, "horizon", "scenario"))
    sim_steps = int(_require(cfg, "sim_steps", "scenario"))
    if dt <= 0 or n_c < 1 or sim_steps < 0:
        raise ScenarioError("need timestep_s > 0, horizon >= 1, sim_steps >= 0")
    length = sim_steps + n_c
    series = _require(cfg, "series", "scenario")
    prices = _series(
        _require(series, "price_eur_per_kwh", "series"), "price_eur_per_kwh", length, base_dir
    )
    theta_soil = _series(
        _require(series, "theta_soil_k", "series"), "theta_soil_k", length, base_dir
    )
    theta_air = _series(
        _require(series, "theta_air_k", "series"), "theta_air_k", length, base_dir
    )
    if np.any(prices < 0):
        raise ScenarioError("prices must be >= 0")
    theta0 = initial_temperatures(params, _require(cfg, "initial_temperatures", "scenario"))
    controller = cfg.get("controller", {"kind": "pd"})
    kind = controller.get("kind", "pd")
    if kind not in ("pd", "grid"):
        raise ScenarioError(f"controller kind must be 'pd' or 'grid', got {kind!r}")
    pd_keys = (
        "alpha0 b0 b_shrink max_backtracks eps_rel eps_abs i_max feas_tol".split()
    )
    pd_cfg = PdConfig(
        n_c=n_c, **{k: controller[k] for k in pd_keys if k in controller}
    )
    grid = None
    if "grid" in controller:
        g = controller["grid"]
        grid = GridSpec(
            points=int(_require(g, "points", "controller.grid")),
            low=float(_require(g, "low", "controller.grid")),
            high=float(_require(g, "high", "controller.grid")),
        )
    if kind == "grid" and grid is None:
        raise ScenarioError("grid controller requires controller.grid")
    sp = cfg.get("safe_plan", {})
    safe_plan = SafePlan(
        u_h=np.full(params.n_pi, float(sp.get("mdot", max(params.mdot_min, 1.0)))),
        u_t=np.full(1, float(sp.get("dtheta", 0.0))),
    )
    return Scenario(
        params=params,
        dt=dt,
        n_c=n_c,
        sim_steps=sim_steps,
        theta0=theta0,
        prices=prices,
        theta_soil=theta_soil,
        theta_air=theta_air,
        controller=kind,
        pd=pd_cfg,
        grid=grid,
        safe_plan=safe_plan,
        seed=int(cfg.get("seed", 0)),
        order=int(cfg.get("bdf_order", 2)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path, encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ScenarioError(f"scenario file {path} does not contain a mapping")
    return scenario_from_dict(cfg, base_dir=path.parent)


def load_sweep(path) -> tuple[list[tuple[int, int]], dict]:
    """A sweep file is a scenario template plus a ``sweep`` list of
    (n_pi, n_x) pairs; per-CV initial temperature lists are rejected
    because they cannot scale across configurations."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"sweep file not found: {path}")
    with open(path, encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict) or "sweep" not in cfg:
        raise ScenarioError("sweep file must be a mapping with a 'sweep' list")
    pairs = []
    for entry in cfg["sweep"]:
        if not (isinstance(entry, (list, tuple)) and len(entry) == 2):
            raise ScenarioError(f"sweep entries must be (n_pi, n_x) pairs, got {entry!r}")
        pairs.append((int(entry[0]), int(entry[1])))
    if isinstance(cfg.get("initial_temperatures"), list):
        raise ScenarioError("sweep scenarios need kind-based initial_temperatures")
    template = {k: v for k, v in cfg.items() if k != "sweep"}
    return pairs, template
