"""Receding-horizon economic control by primal decomposition.

At each MPC step the horizon problem is split on the pump-flow block:
with flows fixed, the hydraulic equalities pin down the pressure states
(a degenerate LP solved exactly with adjoint duals) and the remaining
horizon problem in temperatures, mixing states and heater lift is a
sparse LP.  The flow block is then improved by a subgradient step on the
optimal-value function, assembled from the subproblem multipliers and
the analytic constraint derivatives; a diminishing step size
``alpha0/sqrt(i)`` drives the iteration and infeasible updates are backed
off geometrically toward the last feasible iterate.  Updates are clamped
to the pump-flow box before feasibility is judged, so backtracking only
has to repair the coupled (thermal) constraints.

Every plan handed to the plant comes from an iterate whose subproblems
solved to optimality, i.e. a point feasible for all horizon constraints
within solver tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lpsolve, plant
from .bdf import DiscreteModel, HorizonAssembly, assemble_horizon
from .model import EUR_PER_KWH_TO_EUR_PER_J, CvNetwork, ModelError


class ControllerError(ModelError):
    pass


class HydraulicInfeasible(ControllerError):
    def __init__(self, rows):
        self.rows = tuple(rows)
        super().__init__(f"hydraulic constraints violated: {', '.join(self.rows)}")


class ThermalInfeasible(ControllerError):
    def __init__(self, message="thermal horizon LP infeasible"):
        super().__init__(message)


class SafePlanInfeasible(ControllerError):
    def __init__(self, rows):
        self.rows = tuple(rows)
        super().__init__(
            "no feasible starting plan; violated rows: " + ", ".join(self.rows)
        )


class SolverFailure(ControllerError):
    def __init__(self, diagnostics):
        self.diagnostics = diagnostics
        super().__init__(f"LP solver failure: {diagnostics}")


@dataclass(frozen=True)
class PdConfig:
    """Tuning of the decomposition loop for one controller instance."""

    n_c: int
    alpha0: float = 2.0  # initial step size [kg/s per unit subgradient]
    b0: float = 0.5  # first backtracking factor
    b_shrink: float = 0.5  # per-retry multiplier
    max_backtracks: int = 20
    eps_rel: float = 1e-4  # relative objective-change tolerance
    eps_abs: float = 1e-3  # absolute tolerance [EUR]
    i_max: int = 50
    feas_tol: float = 1e-7

    def __post_init__(self):
        if self.n_c < 1 or self.i_max < 1:
            raise ModelError("n_c and i_max must be >= 1")
        if not (0 < self.b0 < 1 and 0 < self.b_shrink < 1):
            raise ModelError("need 0 < b0 < 1 and 0 < b_shrink < 1")
        if self.alpha0 <= 0:
            raise ModelError("alpha0 must be > 0")


@dataclass(frozen=True)
class Plan:
    """Controls over one horizon: rows are steps."""

    u_h: np.ndarray  # (n_c, n_uh)
    u_t: np.ndarray  # (n_c, n_ut)

    def shifted(self) -> "Plan":
        """Receding-horizon warm start: drop step 0, repeat the last step."""
        return Plan(
            u_h=np.vstack([self.u_h[1:], self.u_h[-1:]]),
            u_t=np.vstack([self.u_t[1:], self.u_t[-1:]]),
        )


@dataclass(frozen=True)
class SafePlan:
    """Constant fallback plan used when the shifted plan turns infeasible."""

    u_h: np.ndarray  # (n_uh,)
    u_t: np.ndarray  # (n_ut,)


@dataclass
class PdIteration:
    index: int
    j_h: float
    j_t: float
    j: float
    subgrad_norm: float
    alpha: float
    backtracks: int
    feasible: bool
    u_h: np.ndarray


@dataclass
class PdTrace:
    iterations: list = field(default_factory=list)
    converged: bool = False
    backtracks_exhausted: bool = False
    hit_iteration_cap: bool = False
    best_index: int = -1

    def best_so_far(self) -> np.ndarray:
        js = [it.j for it in self.iterations]
        return np.minimum.accumulate(js) if js else np.zeros(0)


@dataclass
class HydraulicResult:
    j_h: float
    z_h: np.ndarray  # (n_c, n_zh)
    duals: dict
    x: np.ndarray  # stacked point with flows and z_h set


@dataclass
class ThermalResult:
    j_t: float
    theta: np.ndarray  # (n_c, n_theta)
    z_t: np.ndarray
    u_t: np.ndarray
    duals: dict
    x: np.ndarray  # full stacked point


@dataclass
class PdResult:
    plan: Plan
    j: float
    j_h: float
    j_t: float
    trace: PdTrace
    x: np.ndarray  # stacked point of the returned plan
    theta: np.ndarray  # predicted states of the returned plan


def uh_box(net: CvNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Pump-flow box implied by single-variable rows of g_h."""
    lo = np.full(net.n_uh, -np.inf)
    hi = np.full(net.n_uh, np.inf)
    a = net.g_h.affine.get("u_h")
    if a is None:
        return lo, hi
    a = a.tocsr()
    for i in range(net.g_h.n_rows):
        row = a.getrow(i)
        if row.nnz != 1 or any(
            b != "u_h" and m.getrow(i).nnz for b, m in net.g_h.affine.items()
        ):
            continue
        j = row.indices[0]
        coeff = row.data[0]
        bound = -net.g_h.constant[i] / coeff
        if coeff > 0:
            hi[j] = min(hi[j], bound)
        else:
            lo[j] = max(lo[j], bound)
    return lo, hi


class Horizon:
    """Working set for one MPC step: assembly plus index bookkeeping.

    Immutable after construction; every solve is a pure function of the
    candidate flow plan.
    """

    def __init__(
        self,
        model: DiscreteModel,
        n_c: int,
        history,
        disturbances: np.ndarray,
        prices: np.ndarray,
    ):
        self.model = model
        self.net = model.net
        self.n_c = n_c
        self.asm: HorizonAssembly = assemble_horizon(
            model, n_c, history, disturbances, prices
        )
        self.idx = {b: self.asm.block_indices(b) for b in ("theta", "mflow", "z_h", "z_t", "u_h", "u_t")}
        self.thermal_free = np.sort(
            np.concatenate([self.idx["theta"], self.idx["z_t"], self.idx["u_t"]])
        )
        self.flow_chain = sp.block_diag([self.net.mflow_map] * n_c, format="csr")
        self.box_lo, self.box_hi = uh_box(self.net)

    def clamp(self, u_plan: np.ndarray) -> np.ndarray:
        return np.clip(u_plan, self.box_lo, self.box_hi)

    def flows_point(self, u_plan: np.ndarray) -> np.ndarray:
        x = np.zeros(self.asm.n_stacked)
        self.asm.set_flows(x, u_plan)
        return x

    def _linearize(self, names, x_base):
        mats, rhs, spans = [], [], {}
        r0 = 0
        for name in names:
            fam = self.asm.families[name]
            mats.append(fam.jacobian(x_base).tocsc())
            rhs.append(fam.residual(x_base))
            spans[name] = slice(r0, r0 + fam.n_rows)
            r0 += fam.n_rows
        return sp.vstack(mats, format="csc"), np.concatenate(rhs), spans

    def solve_hydraulic(self, u_plan: np.ndarray, feas_tol: float) -> HydraulicResult:
        """Fix the flow block; the hydraulic equalities determine z_h."""
        x0 = self.flows_point(u_plan)
        fam = self.asm.families["g_h"]
        r = fam.residual(x0)
        if np.any(r > feas_tol):
            raise HydraulicInfeasible(
                [fam.row_labels[i] for i in np.flatnonzero(r > feas_tol)]
            )
        jac, const, _ = self._linearize(["f_h"], x0)
        a = jac[:, self.idx["z_h"]]
        cost = self.asm.cost_h.gradient(x0)[self.idx["z_h"]]
        sol = lpsolve.solve_equality_system_with_duals(a, -const, cost)
        if sol.status != "optimal":
            raise HydraulicInfeasible([f"f_h inconsistent ({sol.diagnostics})"])
        x = x0.copy()
        x[self.idx["z_h"]] = sol.primal
        return HydraulicResult(
            j_h=self.asm.cost_h.value(x),
            z_h=sol.primal.reshape(self.n_c, self.net.n_zh),
            duals={"f_h": sol.dual_eq},
            x=x,
        )

    def thermal_problem(
        self, u_plan: np.ndarray, z_h: np.ndarray
    ) -> tuple[lpsolve.LpProblem, dict, np.ndarray]:
        """The horizon LP in (theta, z_t, u_t) with the flow block as data."""
        x0 = self.flows_point(u_plan)
        x0[self.idx["z_h"]] = np.asarray(z_h, float).ravel()
        jac_eq, c_eq, eq_spans = self._linearize(["dyn", "f_t"], x0)
        jac_ub, c_ub, _ = self._linearize(["g_t"], x0)
        free = self.thermal_free
        problem = lpsolve.LpProblem(
            cost=self.asm.cost_t.gradient(x0)[free],
            eq_matrix=jac_eq[:, free],
            eq_rhs=-c_eq,
            ineq_matrix=jac_ub[:, free],
            ineq_rhs=-c_ub,
        )
        return problem, eq_spans, x0

    def solve_thermal(self, u_plan: np.ndarray, z_h: np.ndarray) -> ThermalResult:
        """Horizon LP in (theta, z_t, u_t) with the flow block as data.

        The interior-point algorithm is markedly faster on this tall
        equality-dominated structure; a failed run or certificate falls
        back to the simplex before giving up.
        """
        problem, eq_spans, x0 = self.thermal_problem(u_plan, z_h)
        free = self.thermal_free
        sol = lpsolve.solve(problem, method="highs-ipm")
        if sol.status == "failed":
            sol = lpsolve.solve(problem, method="highs")
        if sol.status == "infeasible":
            raise ThermalInfeasible()
        if sol.status != "optimal":
            raise SolverFailure(sol.diagnostics)
        x = x0.copy()
        x[free] = sol.primal
        net = self.net
        return ThermalResult(
            j_t=self.asm.cost_t.value(x),
            theta=x[self.idx["theta"]].reshape(self.n_c, net.n_theta),
            z_t=x[self.idx["z_t"]].reshape(self.n_c, net.n_zt),
            u_t=x[self.idx["u_t"]].reshape(self.n_c, net.n_ut),
            duals={
                "dyn": sol.dual_eq[eq_spans["dyn"]],
                "f_t": sol.dual_eq[eq_spans["f_t"]],
                "g_t": sol.dual_ineq,
            },
            x=x,
        )

    def subgradient(self, hyd: HydraulicResult, thm: ThermalResult) -> np.ndarray:
        """Value-function subgradient w.r.t. the pump-flow plan.

        Combines the explicit objective gradient with one term per
        constraint family, ``-dual_eq' dr/du`` for equalities and
        ``+dual_ineq' dg/du`` for inequalities (rhs-sensitivity duals).
        Flow derivatives include the chain through the CV flows.  Rows of
        g_h carry no free variables, so their multipliers vanish; the box
        is enforced by clamping instead.
        """
        x = thm.x
        g = self.asm.cost_h.gradient(x) + self.asm.cost_t.gradient(x)
        s = g[self.idx["u_h"]] + self.flow_chain.T @ g[self.idx["mflow"]]
        contributions = (
            ("f_h", hyd.duals["f_h"], -1.0),
            ("dyn", thm.duals["dyn"], -1.0),
            ("f_t", thm.duals["f_t"], -1.0),
            ("g_t", thm.duals["g_t"], 1.0),
        )
        for name, dual, sign in contributions:
            if not len(dual):
                continue
            jac = self.asm.families[name].jacobian(x).tocsc()
            j_u = jac[:, self.idx["u_h"]] + jac[:, self.idx["mflow"]] @ self.flow_chain
            s = s + sign * (j_u.T @ dual)
        return s.reshape(self.n_c, self.net.n_uh)

    def value(self, u_plan: np.ndarray, feas_tol: float = 1e-7) -> float:
        """phi(u) = J_h + J_t; raises if a subproblem is infeasible."""
        hyd = self.solve_hydraulic(u_plan, feas_tol)
        thm = self.solve_thermal(u_plan, hyd.z_h)
        return hyd.j_h + thm.j_t

    def inequality_violations(self, x: np.ndarray, tol: float):
        bad = []
        for name in ("g_h", "g_t"):
            fam = self.asm.families[name]
            r = fam.residual(x)
            bad.extend(fam.row_labels[i] for i in np.flatnonzero(r > tol))
        return bad


def feasible_start(
    ctx: Horizon,
    previous_plan: Plan | None,
    safe_plan: SafePlan | None,
    carry_rules: tuple = (),
    feas_tol: float = 1e-7,
) -> tuple[Plan, np.ndarray]:
    """Initial flow plan whose simulated horizon satisfies every constraint.

    Shifts the previous optimal plan one step (last entry repeated) and
    simulates it step by step; the resulting point satisfies the
    equalities by construction and is checked against the inequalities.
    On violation the configured safe plan is tried; if that fails too,
    the controller refuses to emit a control.
    """
    net = ctx.net
    n_c = ctx.n_c
    candidates = []
    if previous_plan is not None:
        candidates.append(previous_plan.shifted())
    if safe_plan is None:
        lo = np.where(np.isfinite(ctx.box_lo), ctx.box_lo, 0.0)
        safe_plan = SafePlan(u_h=lo, u_t=np.zeros(net.n_ut))
    candidates.append(
        Plan(
            u_h=np.tile(np.asarray(safe_plan.u_h, float), (n_c, 1)),
            u_t=np.tile(np.asarray(safe_plan.u_t, float), (n_c, 1)),
        )
    )
    violations = []
    for cand in candidates:
        u_plan = ctx.clamp(np.asarray(cand.u_h, float))
        u_t_plan = np.asarray(cand.u_t, float)
        state = plant.PlantState(
            theta=ctx.asm.theta_prev.copy(),
            theta_prev=None
            if ctx.asm.theta_prevprev is None
            else ctx.asm.theta_prevprev.copy(),
            z_h=np.zeros(net.n_zh),
            z_t=np.zeros(net.n_zt),
        )
        x = ctx.flows_point(u_plan)
        ok = True
        for k in range(n_c):
            try:
                state, _ = plant.step(
                    ctx.model, state, u_plan[k], u_t_plan[k], ctx.asm.disturbances[k],
                    carry_rules,
                )
            except plant.PlantError:
                ok = False
                violations = [f"plant step {k} failed"]
                break
            x[ctx.asm.block_slice(k, "theta")] = state.theta
            x[ctx.asm.block_slice(k, "z_h")] = state.z_h
            x[ctx.asm.block_slice(k, "z_t")] = state.z_t
            x[ctx.asm.block_slice(k, "u_t")] = u_t_plan[k]
        if not ok:
            continue
        violations = ctx.inequality_violations(x, feas_tol)
        if not violations:
            return Plan(u_h=u_plan, u_t=u_t_plan), x
    raise SafePlanInfeasible(violations or ["no candidate plan available"])


def solve_hydraulic(
    model: DiscreteModel, u_plan, history, disturbances, prices, feas_tol=1e-7
) -> HydraulicResult:
    u_plan = np.atleast_2d(np.asarray(u_plan, float))
    ctx = Horizon(model, u_plan.shape[0], history, disturbances, prices)
    return ctx.solve_hydraulic(u_plan, feas_tol)


def solve_thermal(
    model: DiscreteModel, u_plan, history, disturbances, prices
) -> ThermalResult:
    u_plan = np.atleast_2d(np.asarray(u_plan, float))
    ctx = Horizon(model, u_plan.shape[0], history, disturbances, prices)
    hyd = ctx.solve_hydraulic(u_plan, 1e-7)
    return ctx.solve_thermal(u_plan, hyd.z_h)


def subgradient(
    model: DiscreteModel, u_plan, history, disturbances, prices
) -> np.ndarray:
    u_plan = np.atleast_2d(np.asarray(u_plan, float))
    ctx = Horizon(model, u_plan.shape[0], history, disturbances, prices)
    hyd = ctx.solve_hydraulic(u_plan, 1e-7)
    thm = ctx.solve_thermal(u_plan, hyd.z_h)
    return ctx.subgradient(hyd, thm)


def pd_iterate(
    model: DiscreteModel,
    config: PdConfig,
    history,
    disturbances,
    prices,
    previous_plan: Plan | None = None,
    safe_plan: SafePlan | None = None,
    carry_rules: tuple = (),
) -> PdResult:
    """One full decomposition solve of the horizon problem.

    Returns the best feasible plan found together with the iteration
    trace.  Non-convergence (iteration cap, exhausted backtracking) is
    reported through trace flags, never an exception, so a closed loop
    can always continue with the best-so-far plan.
    """
    ctx = Horizon(model, config.n_c, history, disturbances, prices)
    start, _ = feasible_start(
        ctx, previous_plan, safe_plan, carry_rules, config.feas_tol
    )
    u = start.u_h
    trace = PdTrace()
    best = None  # (j, iteration index, u, hyd, thm)
    last_good = None  # (u, s, alpha) for backtracking
    j_prev = None
    i = 1
    backtracks = 0
    while i <= config.i_max:
        try:
            hyd = ctx.solve_hydraulic(u, config.feas_tol)
            thm = ctx.solve_thermal(u, hyd.z_h)
        except (HydraulicInfeasible, ThermalInfeasible):
            if last_good is None:
                raise  # feasible start cannot fail here by construction
            if backtracks >= config.max_backtracks:
                trace.backtracks_exhausted = True
                break
            b = config.b0 * config.b_shrink**backtracks
            u_base, s_prev, alpha_prev = last_good
            u = ctx.clamp(u_base - b * alpha_prev * s_prev)
            backtracks += 1
            continue
        j_h, j_t = hyd.j_h, thm.j_t
        j = j_h + j_t
        s = ctx.subgradient(hyd, thm)
        alpha = config.alpha0 / np.sqrt(i)
        trace.iterations.append(
            PdIteration(
                index=i,
                j_h=j_h,
                j_t=j_t,
                j=j,
                subgrad_norm=float(np.linalg.norm(s)),
                alpha=alpha,
                backtracks=backtracks,
                feasible=True,
                u_h=u.copy(),
            )
        )
        if best is None or j < best[0]:
            best = (j, i, u.copy(), hyd, thm)
        if j_prev is not None and abs(j - j_prev) <= config.eps_abs + config.eps_rel * abs(
            j_prev
        ):
            trace.converged = True
            break
        j_prev = j
        last_good = (u.copy(), s, alpha)
        u = ctx.clamp(u - alpha * s)
        backtracks = 0
        i += 1
    else:
        trace.hit_iteration_cap = True
    j_best, i_best, u_best, hyd_best, thm_best = best
    trace.best_index = i_best
    return PdResult(
        plan=Plan(u_h=u_best, u_t=thm_best.u_t.copy()),
        j=j_best,
        j_h=hyd_best.j_h,
        j_t=thm_best.j_t,
        trace=trace,
        x=thm_best.x,
        theta=thm_best.theta,
    )


@dataclass
class ClosedLoopResult:
    """States, applied controls and per-step controller traces."""

    trajectory: plant.Trajectory
    traces: list
    wall_s: np.ndarray
    pd_iterations: np.ndarray
    bound_violation: np.ndarray  # max g_t residual at each applied step
    feasible_controls: np.ndarray  # True when the applied plan's iterate was feasible


def closed_loop(
    model: DiscreteModel,
    config: PdConfig,
    theta0: np.ndarray,
    disturbances: np.ndarray,
    prices: np.ndarray,
    sim_steps: int,
    safe_plan: SafePlan | None = None,
    carry_rules: tuple = (),
    initial_z=None,
) -> ClosedLoopResult:
    """Receding-horizon simulation: optimize, apply the first control,
    advance the plant, shift the plan as the next warm start."""
    net = model.net
    disturbances = np.atleast_2d(np.asarray(disturbances, float))
    prices = np.asarray(prices, float)
    if disturbances.shape[0] < sim_steps + config.n_c or len(prices) < sim_steps + config.n_c:
        raise ModelError(
            f"scenario series must cover sim_steps + n_c = {sim_steps + config.n_c} steps"
        )
    z_h0, z_t0 = (None, None) if initial_z is None else initial_z
    state = plant.initial_state(net, theta0, None, z_h0, z_t0)
    plan: Plan | None = None
    n = sim_steps
    theta = np.empty((n, net.n_theta))
    z_h = np.empty((n, net.n_zh))
    z_t = np.empty((n, net.n_zt))
    u_h = np.empty((n, net.n_uh))
    u_t = np.empty((n, net.n_ut))
    pump = np.empty(n)
    heater = np.empty(n)
    cost_h = np.empty(n)
    cost_t = np.empty(n)
    iters = np.empty(n, dtype=int)
    walls = np.empty(n)
    pd_iters = np.empty(n, dtype=int)
    violations = np.empty(n)
    feas = np.empty(n, dtype=bool)
    traces = []
    for k in range(sim_steps):
        t0 = time.perf_counter()
        result = pd_iterate(
            model,
            config,
            (state.theta, state.theta_prev),
            disturbances[k : k + config.n_c],
            prices[k : k + config.n_c],
            plan,
            safe_plan,
            carry_rules,
        )
        walls[k] = time.perf_counter() - t0
        state, report = plant.step(
            model,
            state,
            result.plan.u_h[0],
            result.plan.u_t[0],
            disturbances[k],
            carry_rules,
        )
        theta[k] = state.theta
        z_h[k] = state.z_h
        z_t[k] = state.z_t
        u_h[k] = result.plan.u_h[0]
        u_t[k] = result.plan.u_t[0]
        iters[k] = report.iterations
        point = net.with_mflow(
            {
                "theta": state.theta,
                "z_h": state.z_h,
                "z_t": state.z_t,
                "u_h": u_h[k],
                "u_t": u_t[k],
                "d": disturbances[k],
            }
        )
        pump[k] = net.objective_h.value(point)
        heater[k] = net.objective_t.value(point)
        w = prices[k] * EUR_PER_KWH_TO_EUR_PER_J * model.dt
        cost_h[k] = w * pump[k]
        cost_t[k] = w * heater[k]
        violations[k] = float(net.g_t.evaluate(point).max(initial=-np.inf))
        best = next(
            (it for it in result.trace.iterations if it.index == result.trace.best_index),
            None,
        )
        feas[k] = best.feasible if best is not None else False
        pd_iters[k] = len(result.trace.iterations)
        traces.append(result.trace)
        plan = result.plan
    trajectory = plant.Trajectory(
        theta=theta,
        z_h=z_h,
        z_t=z_t,
        u_h=u_h,
        u_t=u_t,
        d=disturbances[:n].copy(),
        pump_power_w=pump,
        heater_power_w=heater,
        cost_h_eur=cost_h,
        cost_t_eur=cost_t,
        newton_iters=iters,
    )
    return ClosedLoopResult(
        trajectory=trajectory,
        traces=traces,
        wall_s=walls,
        pd_iterations=pd_iters,
        bound_violation=violations,
        feasible_controls=feas,
    )
