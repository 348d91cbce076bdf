"""Independent brute-force references.

Ground truth for the rest of the package comes from three directions:
exhaustive grid search over the flow block (stands in for a monolithic
optimizer at desk scale), a refined-timestep plant rollout (reference for
discretization error), and central finite differences of the optimal-value
function (reference for the subgradient assembly).  A dense vertex
enumerator certifies the LP layer on small random instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import plant
from .bdf import DiscreteModel
from .model import ModelError
from .pdmpc import Horizon, HydraulicInfeasible, ThermalInfeasible

GRID_CARDINALITY_CAP = 10**6


class GridTooLarge(ModelError):
    def __init__(self, cardinality):
        self.cardinality = cardinality
        super().__init__(
            f"grid search would evaluate {cardinality} combinations "
            f"(cap {GRID_CARDINALITY_CAP})"
        )


@dataclass
class GridEntry:
    u_h: np.ndarray  # (n_c, n_uh)
    j_h: float
    j_t: float
    j: float
    feasible: bool


@dataclass
class GridSearchResult:
    best_plan: np.ndarray | None
    best_objective: float
    table: list


def grid_search(
    model: DiscreteModel,
    history,
    disturbances,
    prices,
    n_c: int,
    grid: np.ndarray,
) -> GridSearchResult:
    """Exhaustively evaluate every flow combination on a per-step grid.

    ``grid`` lists candidate values for every pump flow at every step, so
    the table has ``len(grid) ** (n_c * n_uh)`` entries.  The pump cost is
    evaluated directly from the pressure-loss law; the thermal horizon LP
    supplies the rest.  Infeasible combinations are recorded as such.
    """
    grid = np.asarray(grid, float)
    ctx = Horizon(model, n_c, history, disturbances, prices)
    n_free = n_c * model.net.n_uh
    cardinality = len(grid) ** n_free
    if cardinality > GRID_CARDINALITY_CAP:
        raise GridTooLarge(cardinality)
    table = []
    best = None
    best_j = np.inf
    for combo in itertools.product(grid, repeat=n_free):
        u_plan = np.array(combo).reshape(n_c, model.net.n_uh)
        try:
            hyd = ctx.solve_hydraulic(u_plan, 1e-7)
            thm = ctx.solve_thermal(u_plan, hyd.z_h)
        except (HydraulicInfeasible, ThermalInfeasible):
            table.append(GridEntry(u_plan, np.nan, np.nan, np.nan, False))
            continue
        j = hyd.j_h + thm.j_t
        table.append(GridEntry(u_plan, hyd.j_h, thm.j_t, j, True))
        if j < best_j:
            best_j = j
            best = u_plan
    return GridSearchResult(best_plan=best, best_objective=best_j, table=table)


def fine_reference(
    model: DiscreteModel,
    theta0_pair,
    u_h_seq,
    u_t_seq,
    d_seq,
    refinement: int,
    carry_rules=(),
    initial_z=None,
) -> plant.Trajectory:
    """Plant rollout at ``dt/refinement``, downsampled to the original grid.

    Inputs are held piecewise-constant over the original steps, so coarse
    run and reference integrate the same input signal.
    """
    refinement = int(refinement)
    if refinement < 1:
        raise ModelError("refinement factor must be a positive integer")
    if refinement == 1:
        return plant.rollout(
            model, theta0_pair, u_h_seq, u_t_seq, d_seq,
            carry_rules=carry_rules, initial_z=initial_z,
        )
    fine_model = model.refined(refinement)
    rep = lambda a: np.repeat(np.atleast_2d(np.asarray(a, float)), refinement, axis=0)
    traj = plant.rollout(
        fine_model,
        theta0_pair,
        rep(u_h_seq),
        rep(u_t_seq),
        rep(d_seq),
        carry_rules=carry_rules,
        initial_z=initial_z,
    )
    pick = np.arange(refinement - 1, len(traj), refinement)
    return plant.Trajectory(
        theta=traj.theta[pick],
        z_h=traj.z_h[pick],
        z_t=traj.z_t[pick],
        u_h=traj.u_h[pick],
        u_t=traj.u_t[pick],
        d=traj.d[pick],
        pump_power_w=traj.pump_power_w[pick],
        heater_power_w=traj.heater_power_w[pick],
        cost_h_eur=traj.cost_h_eur[pick],
        cost_t_eur=traj.cost_t_eur[pick],
        newton_iters=traj.newton_iters[pick],
    )


class ProbeInfeasible(ModelError):
    """A finite-difference probe point left the feasible region."""


def fd_value_slope(
    model: DiscreteModel,
    history,
    disturbances,
    prices,
    n_c: int,
    u_plan: np.ndarray,
    step_index: int,
    component: int,
    h: float = 1e-3,
) -> float:
    """Central difference of phi(u) = J_h + J_t in one flow coordinate."""
    ctx = Horizon(model, n_c, history, disturbances, prices)
    u_plan = np.asarray(u_plan, float)
    values = []
    for sign in (+1.0, -1.0):
        probe = u_plan.copy()
        probe[step_index, component] += sign * h
        if np.any(probe < ctx.box_lo) or np.any(probe > ctx.box_hi):
            raise ProbeInfeasible(
                f"probe at step {step_index}, component {component} leaves the flow box"
            )
        try:
            values.append(ctx.value(probe))
        except (HydraulicInfeasible, ThermalInfeasible) as exc:
            raise ProbeInfeasible(str(exc)) from exc
    return (values[0] - values[1]) / (2.0 * h)


def lp_vertex_enumeration(problem, tol: float = 1e-9):
    """Exact optimum of a small LP by enumerating basic feasible points.

    Every choice of ``n - n_eq`` active relations among inequality rows
    and finite bounds (on top of all equalities) yields a candidate
    vertex; feasible candidates are scored and the best kept.  Exponential
    by design; intended for n up to ~10 free dimensions.

    Returns ``(objective, x)`` or ``(inf, None)`` when no feasible vertex
    exists.
    """
    c = problem.cost
    n = problem.n_vars
    rows = []
    rhs = []
    a_eq = problem.eq_matrix.toarray() if problem.eq_matrix.shape[0] else np.zeros((0, n))
    a_ub = problem.ineq_matrix.toarray() if problem.ineq_matrix.shape[0] else np.zeros((0, n))
    for i in range(a_ub.shape[0]):
        rows.append(a_ub[i])
        rhs.append(problem.ineq_rhs[i])
    for j in range(n):
        if np.isfinite(problem.lower[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(-problem.lower[j])
        if np.isfinite(problem.upper[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(problem.upper[j])
    rows = np.array(rows) if rows else np.zeros((0, n))
    rhs = np.array(rhs)
    n_active = n - a_eq.shape[0]
    if n_active < 0:
        n_active = 0

    def feasible(x):
        if a_eq.shape[0] and np.abs(a_eq @ x - problem.eq_rhs).max() > 1e-7:
            return False
        if rows.shape[0] and (rows @ x - rhs).max() > 1e-7:
            return False
        return True

    best_obj, best_x = np.inf, None
    for active in itertools.combinations(range(rows.shape[0]), n_active):
        a_sys = np.vstack([a_eq, rows[list(active)]])
        b_sys = np.concatenate([problem.eq_rhs, rhs[list(active)]])
        if a_sys.shape[0] != n:
            continue
        try:
            x = np.linalg.solve(a_sys, b_sys)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)) or not feasible(x):
            continue
        obj = float(c @ x)
        if obj < best_obj - tol or (
            abs(obj - best_obj) <= tol and best_x is not None and tuple(x) < tuple(best_x)
        ):
            best_obj, best_x = obj, x
    return best_obj, best_x
