"""Command-line entry point: closed-loop runs, benchmark sweeps, checks.

Exit codes: 0 success, 2 configuration error, 3 controller infeasibility,
4 LP solver failure, 1 unexpected error.  All diagnostics go to stderr;
results are CSV files in the output directory (schemas in the README).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import heatfield, pdmpc, plant
from .heatfield import grid_of_state
from .model import ModelError, eval_dynamics_rhs, jacobian_wrt_block
from .scenario import Scenario, ScenarioError, load_scenario, load_sweep, scenario_from_dict

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

log = logging.getLogger("cvheat")


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".12g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def _theta_columns(params: heatfield.HeatfieldParams) -> list[str]:
    names = []
    for i in range(params.n_theta):
        kind = grid_of_state(params, i).kind
        names.append(f"theta_cv{i + 1:02d}_{kind}_K")
    return names


def trajectory_header(params: heatfield.HeatfieldParams) -> list[str]:
    return (
        ["step", "time_s"]
        + _theta_columns(params)
        + [f"mdot_in_{p}_kgps" for p in range(1, params.n_pi + 1)]
        + ["dtheta_K", "theta_in_K", "theta_out_K"]
        + [f"dp_{p}_Pa" for p in range(1, params.n_pi + 1)]
        + [
            "cost_h_eur",
            "cost_t_eur",
            "price_eur_per_kwh",
            "theta_soil_K",
            "theta_air_K",
            "theta_soil_min_K",
            "theta_soil_max_K",
        ]
    )


def write_trajectory(path: Path, scen: Scenario, traj: plant.Trajectory) -> None:
    rows = []
    for k in range(len(traj)):
        rows.append(
            [k, (k + 1) * scen.dt]
            + list(traj.theta[k])
            + list(traj.u_h[k])
            + [traj.u_t[k][0], traj.z_t[k][0], traj.z_t[k][1]]
            + list(traj.z_h[k])
            + [
                traj.cost_h_eur[k],
                traj.cost_t_eur[k],
                scen.prices[k],
                traj.d[k][0],
                traj.d[k][1],
                scen.params.theta_soil_min,
                scen.params.theta_soil_max,
            ]
        )
    _write_csv(path, trajectory_header(scen.params), rows)


TRACE_HEADER = [
    "mpc_step",
    "pd_iteration",
    "j_h_eur",
    "j_t_eur",
    "j_eur",
    "subgrad_norm",
    "step_size",
    "backtracks",
    "feasible",
    "wall_ms",
]


def write_trace(path: Path, result: pdmpc.ClosedLoopResult) -> None:
    rows = []
    for k, trace in enumerate(result.traces):
        for it in trace.iterations:
            rows.append(
                [
                    k,
                    it.index,
                    it.j_h,
                    it.j_t,
                    it.j,
                    it.subgrad_norm,
                    it.alpha,
                    it.backtracks,
                    it.feasible,
                    result.wall_s[k] * 1e3,
                ]
            )
    _write_csv(path, TRACE_HEADER, rows)


SUMMARY_HEADER = [
    "n_pipes",
    "n_x",
    "n_variables",
    "horizon",
    "sim_steps",
    "total_cost_eur",
    "avg_cost_per_step_eur",
    "avg_calc_time_per_step_s",
    "avg_pd_iterations",
    "converged_steps",
    "max_bound_violation_k",
    "all_controls_feasible",
]


def write_summary(path: Path, scen: Scenario, result: pdmpc.ClosedLoopResult) -> None:
    traj = result.trajectory
    total = float(np.sum(traj.cost_h_eur) + np.sum(traj.cost_t_eur))
    n = max(len(traj), 1)
    row = [
        scen.params.n_pi,
        scen.params.n_x,
        scen.params.per_step_variable_count,
        scen.n_c,
        len(traj),
        total,
        total / n,
        float(np.mean(result.wall_s)) if len(traj) else 0.0,
        float(np.mean(result.pd_iterations)) if len(traj) else 0.0,
        int(sum(t.converged for t in result.traces)),
        float(np.max(result.bound_violation)) if len(traj) else 0.0,
        bool(np.all(result.feasible_controls)) if len(traj) else True,
    ]
    _write_csv(path, SUMMARY_HEADER, [row])


def run_scenario(scen: Scenario) -> pdmpc.ClosedLoopResult:
    model = scen.build_model()
    return pdmpc.closed_loop(
        model,
        scen.pd,
        scen.theta0,
        scen.disturbances(),
        scen.prices,
        scen.sim_steps,
        scen.safe_plan,
        scen.carry_rules(),
        scen.initial_z(),
    )


def cmd_run(args) -> int:
    scen = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info(
        "run: (%d,%d) system, %d steps, horizon %d",
        scen.params.n_pi, scen.params.n_x, scen.sim_steps, scen.n_c,
    )
    result = run_scenario(scen)
    write_trajectory(out / "trajectory.csv", scen, result.trajectory)
    write_trace(out / "trace.csv", result)
    write_summary(out / "summary.csv", scen, result)
    if args.reference_refinement > 0:
        # re-simulate the applied controls at a refined step: a dense
        # reference for the run's own discretization error
        from . import oracle

        traj = result.trajectory
        ref = oracle.fine_reference(
            scen.build_model(),
            (scen.theta0, None),
            traj.u_h,
            traj.u_t,
            traj.d,
            refinement=args.reference_refinement,
            carry_rules=scen.carry_rules(),
            initial_z=scen.initial_z(),
        )
        ref.cost_h_eur = traj.cost_h_eur
        ref.cost_t_eur = traj.cost_t_eur
        write_trajectory(out / "reference.csv", scen, ref)
    violation = float(np.max(result.bound_violation, initial=0.0))
    if violation > 1e-6 or not np.all(result.feasible_controls):
        log.error("constraint violation flag raised (max %.3e)", violation)
        return EXIT_INFEASIBLE
    return EXIT_OK


BENCH_HEADER = [
    "n_pipes",
    "n_x",
    "n_variables",
    "avg_cost_per_step_eur",
    "avg_calc_time_per_step_s",
    "pd_iterations_mean",
    "steps_completed",
    "status",
]


def bench_one(template: dict, n_pi: int, n_x: int) -> list:
    cfg = dict(template)
    cfg["system"] = dict(template.get("system", {}))
    cfg["system"]["n_pi"] = n_pi
    cfg["system"]["n_x"] = n_x
    scen = scenario_from_dict(cfg)
    try:
        result = run_scenario(scen)
    except pdmpc.ControllerError as exc:
        log.error("bench (%d,%d): %s", n_pi, n_x, exc)
        return [n_pi, n_x, scen.params.per_step_variable_count, np.nan, np.nan, np.nan, 0,
                "infeasible"]
    traj = result.trajectory
    total = float(np.sum(traj.cost_h_eur) + np.sum(traj.cost_t_eur))
    return [
        n_pi,
        n_x,
        scen.params.per_step_variable_count,
        total / max(len(traj), 1),
        float(np.mean(result.wall_s)),
        float(np.mean(result.pd_iterations)),
        len(traj),
        "ok",
    ]


def cmd_bench(args) -> int:
    pairs, template = load_sweep(args.sweep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(lambda p: bench_one(template, *p), pairs))
    else:
        rows = [bench_one(template, *pair) for pair in pairs]
    _write_csv(out / "bench.csv", BENCH_HEADER, rows)
    return EXIT_OK if all(r[-1] == "ok" for r in rows) else EXIT_INFEASIBLE


def _corrupt_coupling(net):
    """Negate one side of the largest conductive coupling (test hook)."""
    a = net.dynamics.affine["theta"].tolil(copy=True)
    off = a.toarray()
    np.fill_diagonal(off, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(off)), off.shape)
    a[i, j] = -a[i, j]
    dyn = dataclasses.replace(
        net.dynamics, affine={**net.dynamics.affine, "theta": a.tocsr()}
    )
    return dataclasses.replace(net, dynamics=dyn)


def validate_model(scen: Scenario, corruption: str = None, n_probe: int = 5) -> list[tuple[str, bool, str]]:
    """Structural invariant suite; returns (check, passed, detail) triples."""
    checks = []
    params = scen.params
    net = heatfield.build(params)
    if corruption == "negate-coupling":
        net = _corrupt_coupling(net)
    elif corruption is not None:
        raise ScenarioError(f"unknown corruption {corruption!r}")

    defect = net.capacity_antisymmetry_defect()
    scale = float(np.abs(net.a_matrix.toarray()).max() * net.capacity.max())
    checks.append(
        (
            "capacity_weighted_antisymmetry",
            defect <= 1e-9 * max(scale, 1.0),
            f"defect {defect:.3e} (scale {scale:.3e})",
        )
    )

    count = params.per_step_variable_count
    expected = params.n_theta + params.n_pi * params.n_x + 2 * params.n_pi + 3
    checks.append(
        ("variable_count_formula", count == expected, f"per-step count {count}")
    )
    canon = {(1, 2): 19, (2, 3): 43, (7, 5): 202}
    ok = all(
        heatfield.HeatfieldParams(n_pi=a, n_x=b).per_step_variable_count == v
        for (a, b), v in canon.items()
    )
    checks.append(("canonical_counts_19_43_202", ok, "(1,2)/(2,3)/(7,5)"))

    rng = np.random.default_rng(scen.seed)
    worst = 0.0
    for _ in range(n_probe):
        point = net.full_point(
            theta=300.0 + rng.normal(0, 5.0, net.n_theta),
            z_h=rng.uniform(0, 1e5, net.n_zh),
            z_t=300.0 + rng.normal(0, 5.0, net.n_zt),
            u_h=rng.uniform(0.5, 5.0, net.n_uh),
            u_t=rng.uniform(0, 5.0, net.n_ut),
            d=280.0 + rng.normal(0, 3.0, net.n_d),
        )
        for target in ("dynamics", "f_h", "f_t", "g_t"):
            cs = net.constraint_set(target)
            if cs.n_rows == 0:
                continue
            for block in ("theta", "z_h", "z_t", "u_h", "u_t"):
                jac = jacobian_wrt_block(net, point, target, block).toarray()
                fd = _fd_jacobian(net, point, target, block)
                scale_j = max(np.abs(fd).max(), np.abs(jac).max(), 1e-9)
                worst = max(worst, np.abs(jac - fd).max() / scale_j)
    checks.append(
        ("jacobian_fd_spot_checks", worst <= 1e-6, f"max rel err {worst:.3e}")
    )

    uniform = net.full_point(theta=300.0, z_t=300.0, d=300.0, u_h=np.full(net.n_uh, 2.0))
    rhs = eval_dynamics_rhs(net, uniform)
    checks.append(
        (
            "uniform_equilibrium",
            float(np.abs(rhs).max(initial=0.0)) <= 1e-12,
            f"max |dtheta/dt| {np.abs(rhs).max(initial=0.0):.3e}",
        )
    )
    return checks


def _fd_jacobian(net, point, target, block, h=1e-6):
    from .model import eval_constraints

    def f(pt):
        if target == "dynamics":
            return eval_dynamics_rhs(net, pt)
        return eval_constraints(net, pt, target)

    base = np.asarray(point[block], float)
    cols = []
    for j in range(len(base)):
        hi = dict(point)
        lo = dict(point)
        step = h * max(1.0, abs(base[j]))
        hi[block] = base.copy()
        hi[block][j] += step
        lo[block] = base.copy()
        lo[block][j] -= step
        cols.append((f(hi) - f(lo)) / (2 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def cmd_validate(args) -> int:
    scen = load_scenario(args.scenario)
    checks = validate_model(scen, corruption=args.inject_corruption)
    failed = 0
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        failed += not passed
    return EXIT_OK if failed == 0 else EXIT_UNEXPECTED


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvheat",
        description="Thermo-hydraulic CV network models and decomposition MPC",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser(
        "run", parents=[common], help="closed-loop run; writes CSV artifacts"
    )
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument(
        "--reference-refinement",
        type=int,
        default=0,
        metavar="N",
        help="also write reference.csv: the applied controls re-simulated "
        "at dt/N and downsampled (0 = off)",
    )
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser(
        "bench", parents=[common], help="scaling sweep over (n_pi, n_x) pairs"
    )
    p_bench.add_argument("--sweep", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--parallel", type=int, default=1)
    p_bench.set_defaults(func=cmd_bench)

    p_val = sub.add_parser(
        "validate-model", parents=[common], help="structural invariant checks"
    )
    p_val.add_argument("--scenario", required=True)
    p_val.add_argument(
        "--inject-corruption",
        default=None,
        choices=["negate-coupling"],
        help="deliberately corrupt the built model (test hook)",
    )
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()), stream=sys.stderr
    )
    try:
        return args.func(args)
    except ScenarioError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (pdmpc.SafePlanInfeasible, pdmpc.HydraulicInfeasible, pdmpc.ThermalInfeasible) as exc:
        log.error("controller infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except pdmpc.SolverFailure as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except ModelError as exc:
        log.error("model error: %s", exc)
        return EXIT_CONFIG
    except Exception:  # pragma: no cover - last-resort diagnostics
        logging.exception("unexpected error")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
