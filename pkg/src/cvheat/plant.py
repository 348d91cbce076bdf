"""Step-by-step simulation of the discretized network.

Each step solves the square nonlinear system (implicit dynamics plus the
hydraulic and thermal algebraic equations) for the temperatures and
algebraic states, given the controls and disturbances of that step.  With
flows acting as inputs the system is linear in the unknowns and the
damped Newton iteration converges in a single step; the damping only
matters for genuinely nonlinear constraint variants.

The same routine doubles as the feasible-start computation of the
decomposition controller and, run at a refined timestep, as the dense
reference for discretization-error measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bdf import _BDF, DiscreteModel
from .model import EUR_PER_KWH_TO_EUR_PER_J, ModelError

_MAX_NEWTON = 50
_MIN_DAMPING = 1e-6
_RESIDUAL_TOL = 1e-10


class PlantError(ModelError):
    pass


class NonConvergence(PlantError):
    def __init__(self, iterations: int, residual_norm: float):
        self.iterations = iterations
        self.residual_norm = residual_norm
        super().__init__(
            f"Newton did not converge in {iterations} iterations "
            f"(scaled residual {residual_norm:.3e})"
        )


class SingularJacobian(PlantError):
    def __init__(self, detail: str = ""):
        super().__init__(f"singular step Jacobian{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class CarryRule:
    """Replace a structurally vacuous algebraic row by value carry-forward.

    When the named row's Jacobian is entirely zero (e.g. the outlet mixing
    relation at zero total flow), the equation is replaced by
    ``block[index] = previous value``.
    """

    family: str  # "f_h" | "f_t"
    row: int
    block: str  # "z_h" | "z_t"
    index: int


@dataclass
class PlantState:
    """Measured state carried between plant steps."""

    theta: np.ndarray
    theta_prev: np.ndarray | None = None
    z_h: np.ndarray = None
    z_t: np.ndarray = None


@dataclass(frozen=True)
class StepReport:
    iterations: int
    residual_norm: float
    order: int
    carried_rows: tuple = ()


@dataclass
class Trajectory:
    """Dense record of a rollout; row k is the state after step k."""

    theta: np.ndarray
    z_h: np.ndarray
    z_t: np.ndarray
    u_h: np.ndarray
    u_t: np.ndarray
    d: np.ndarray
    pump_power_w: np.ndarray
    heater_power_w: np.ndarray
    cost_h_eur: np.ndarray
    cost_t_eur: np.ndarray
    newton_iters: np.ndarray

    def __len__(self) -> int:
        return self.theta.shape[0]


def initial_state(net, theta0, theta_prev=None, z_h=None, z_t=None) -> PlantState:
    """Plant state at simulation start; missing algebraic values are zero."""
    return PlantState(
        theta=np.asarray(theta0, float).copy(),
        theta_prev=None if theta_prev is None else np.asarray(theta_prev, float).copy(),
        z_h=np.zeros(net.n_zh) if z_h is None else np.asarray(z_h, float).copy(),
        z_t=np.zeros(net.n_zt) if z_t is None else np.asarray(z_t, float).copy(),
    )


def step(
    model: DiscreteModel,
    state: PlantState,
    u_h: np.ndarray,
    u_t: np.ndarray,
    d: np.ndarray,
    carry_rules: tuple = (),
    factor_cache: dict = None,
) -> tuple[PlantState, StepReport]:
    """Advance one step: solve for (theta, z_h, z_t) given the inputs.

    ``factor_cache`` may hold LU factorizations across steps with
    unchanged flows (the Jacobian depends on the flow inputs only).
    """
    net = model.net
    order = model.order
    if order == 2 and state.theta_prev is None:
        order = 1
    (c0, c1, c2), beta = _BDF[order]
    u_h = np.asarray(u_h, float)
    u_t = np.asarray(u_t, float)
    d = np.asarray(d, float)

    n_th, n_zh, n_zt = net.n_theta, net.n_zh, net.n_zt
    sl_theta = slice(0, n_th)
    sl_zh = slice(n_th, n_th + n_zh)
    sl_zt = slice(n_th + n_zh, n_th + n_zh + n_zt)
    block_off = {"z_h": n_th, "z_t": n_th + n_zh}
    fam_row_off = {"f_h": n_th, "f_t": n_th + n_zh}

    def point_of(w):
        return {
            "theta": w[sl_theta],
            "z_h": w[sl_zh],
            "z_t": w[sl_zt],
            "u_h": u_h,
            "u_t": u_t,
            "d": d,
        }

    prev_values = {"z_h": state.z_h, "z_t": state.z_t}

    def assemble(w):
        full = net.with_mflow(point_of(w))
        r_dyn = c0 * full["theta"] + c1 * state.theta
        if order == 2:
            r_dyn = r_dyn + c2 * state.theta_prev
        r_dyn = r_dyn - beta * model.dt * net.dynamics.evaluate(full)
        residual = np.concatenate([r_dyn, net.f_h.evaluate(full), net.f_t.evaluate(full)])
        s = -beta * model.dt
        jac_blocks = []
        for target, scale in (("dynamics", s), ("f_h", 1.0), ("f_t", 1.0)):
            cs = net.constraint_set(target)
            j_theta = scale * cs.jacobian(full, "theta")
            if target == "dynamics":
                j_theta = j_theta + c0 * sp.eye(n_th, format="csr")
            jac_blocks.append(
                sp.hstack(
                    [
                        j_theta,
                        scale * cs.jacobian(full, "z_h"),
                        scale * cs.jacobian(full, "z_t"),
                    ],
                    format="csr",
                )
            )
        jac = sp.vstack(jac_blocks, format="csr")
        carried = []
        if carry_rules:
            jac = jac.tolil()
            for rule in carry_rules:
                i = fam_row_off[rule.family] + rule.row
                vacuous = not jac.data[i] or max(abs(v) for v in jac.data[i]) <= 1e-14
                if vacuous:
                    j = block_off[rule.block] + rule.index
                    residual[i] = w[j] - prev_values[rule.block][rule.index]
                    jac.rows[i] = [j]
                    jac.data[i] = [1.0]
                    carried.append(i)
        return residual, jac.tocsc(), tuple(carried)

    def scale_vector(w):
        s_t = 1.0 + np.abs(w[sl_theta]).max(initial=0.0)
        s_p = 1.0 + np.abs(w[sl_zh]).max(initial=0.0)
        s_mix = s_t * (1.0 + np.abs(u_h).sum())
        return np.concatenate(
            [np.full(n_th, s_t), np.full(n_zh, s_p), np.full(n_zt, s_mix)]
        )

    w = np.concatenate([state.theta, state.z_h, state.z_t])
    residual, jac, carried = assemble(w)
    norm = float(np.abs(residual / scale_vector(w)).max(initial=0.0))
    solver = None
    for it in range(1, _MAX_NEWTON + 1):
        if norm <= _RESIDUAL_TOL:
            new_state = PlantState(
                theta=w[sl_theta].copy(),
                theta_prev=state.theta.copy(),
                z_h=w[sl_zh].copy(),
                z_t=w[sl_zt].copy(),
            )
            return new_state, StepReport(it - 1, norm, order, carried)
        if solver is None:
            key = (order, carried, u_h.tobytes())
            solver = None if factor_cache is None else factor_cache.get(key)
            if solver is None:
                try:
                    solver = spla.splu(jac)
                except RuntimeError as exc:
                    raise SingularJacobian(str(exc)) from exc
                if factor_cache is not None:
                    factor_cache[key] = solver
        dw = solver.solve(-residual)
        if not np.all(np.isfinite(dw)):
            raise SingularJacobian("non-finite Newton direction")
        # Armijo backtracking on the scaled residual norm.
        t = 1.0
        while True:
            w_new = w + t * dw
            residual_new, jac_new, carried_new = assemble(w_new)
            norm_new = float(np.abs(residual_new / scale_vector(w_new)).max(initial=0.0))
            if norm_new <= (1.0 - 1e-4 * t) * norm or t < _MIN_DAMPING:
                break
            t *= 0.5
        w, residual, norm = w_new, residual_new, norm_new
        if carried_new != carried:
            carried, solver = carried_new, None
        jac = jac_new
    raise NonConvergence(_MAX_NEWTON, norm)


class _AffineStepper:
    """Fast per-step solver exploiting that, given the flow inputs, the
    step system is affine in the unknowns:

        F(w) = J w + G_ut u_t + G_d d + c1 P theta_prev + c2 P theta_pp + g0

    J and the input maps are constant per (order, flows, carried rows), so
    a step is one cached LU solve.  Valid for every model in this package
    because bilinear terms always carry the CV-flow block on one side.
    """

    def __init__(self, model: DiscreteModel, carry_rules: tuple):
        self.model = model
        self.net = model.net
        self.carry_rules = carry_rules
        self.cache: dict = {}

    def _build(self, order: int, u_h: np.ndarray):
        net, model = self.net, self.model
        (c0, c1, c2), beta = _BDF[order]
        zero = net.with_mflow(
            {
                "theta": np.zeros(net.n_theta),
                "z_h": np.zeros(net.n_zh),
                "z_t": np.zeros(net.n_zt),
                "u_h": u_h,
                "u_t": np.zeros(net.n_ut),
                "d": np.zeros(net.n_d),
            }
        )
        n_th = net.n_theta
        blocks, g_ut_rows, g_d_rows = [], [], []
        for target, scale in (("dynamics", -beta * model.dt), ("f_h", 1.0), ("f_t", 1.0)):
            cs = net.constraint_set(target)
            j_theta = scale * cs.jacobian(zero, "theta")
            if target == "dynamics":
                j_theta = j_theta + c0 * sp.eye(n_th, format="csr")
            blocks.append(
                sp.hstack(
                    [j_theta, scale * cs.jacobian(zero, "z_h"), scale * cs.jacobian(zero, "z_t")],
                    format="csr",
                )
            )
            g_ut_rows.append(scale * cs.jacobian(zero, "u_t"))
            g_d_rows.append(scale * cs.jacobian(zero, "d"))
        jac = sp.vstack(blocks, format="csr")
        g_ut = sp.vstack(g_ut_rows, format="csr")
        g_d = sp.vstack(g_d_rows, format="csr")
        g0 = np.concatenate(
            [
                -beta * model.dt * net.dynamics.evaluate(zero),
                net.f_h.evaluate(zero),
                net.f_t.evaluate(zero),
            ]
        )
        carried = []
        if self.carry_rules:
            fam_row_off = {"f_h": n_th, "f_t": n_th + net.n_zh}
            block_off = {"z_h": n_th, "z_t": n_th + net.n_zh}
            jac = jac.tolil()
            for rule in self.carry_rules:
                i = fam_row_off[rule.family] + rule.row
                if not jac.data[i] or max(abs(v) for v in jac.data[i]) <= 1e-14:
                    j = block_off[rule.block] + rule.index
                    jac.rows[i] = [j]
                    jac.data[i] = [1.0]
                    g0[i] = 0.0
                    carried.append((i, j))
            jac = jac.tocsr()
        try:
            lu = spla.splu(jac.tocsc())
        except RuntimeError as exc:
            raise SingularJacobian(str(exc)) from exc
        return (lu, jac, g_ut, g_d, g0, (c1, c2), tuple(carried))

    def step(self, state: PlantState, u_h, u_t, d) -> tuple[PlantState, StepReport]:
        net = self.net
        order = self.model.order
        if order == 2 and state.theta_prev is None:
            order = 1
        u_h = np.asarray(u_h, float)
        key = (order, u_h.tobytes())
        built = self.cache.get(key)
        if built is None:
            built = self.cache[key] = self._build(order, u_h)
        lu, jac, g_ut, g_d, g0, (c1, c2), carried = built
        n_th = net.n_theta
        rhs = -(g_ut @ np.asarray(u_t, float) + g_d @ np.asarray(d, float) + g0)
        rhs[:n_th] -= c1 * state.theta
        if order == 2:
            rhs[:n_th] -= c2 * state.theta_prev
        prev_values = {"z_h": state.z_h, "z_t": state.z_t}
        for i, j in carried:
            block = "z_h" if j < n_th + net.n_zh else "z_t"
            rhs[i] = prev_values[block][j - (n_th if block == "z_h" else n_th + net.n_zh)]
        w = lu.solve(rhs)
        if not np.all(np.isfinite(w)):
            raise SingularJacobian("non-finite step solution")
        resid = float(np.abs(jac @ w - rhs).max(initial=0.0))
        scale = 1.0 + np.abs(w).max(initial=0.0)
        if resid > _RESIDUAL_TOL * scale:
            raise NonConvergence(1, resid / scale)
        new_state = PlantState(
            theta=w[:n_th].copy(),
            theta_prev=state.theta.copy(),
            z_h=w[n_th : n_th + net.n_zh].copy(),
            z_t=w[n_th + net.n_zh :].copy(),
        )
        return new_state, StepReport(1, resid / scale, order, tuple(i for i, _ in carried))


def rollout(
    model: DiscreteModel,
    theta0_pair,
    u_h_seq: np.ndarray,
    u_t_seq: np.ndarray,
    d_seq: np.ndarray,
    prices=None,
    carry_rules: tuple = (),
    initial_z=None,
) -> Trajectory:
    """Repeated stepping over control/disturbance sequences of equal length.

    ``theta0_pair`` is ``(theta0, theta_minus1_or_None)``.  When ``prices``
    (EUR/kWh per step) are given, per-step realized energy costs are
    reported alongside the instantaneous powers.
    """
    net = model.net
    theta0, theta_m1 = theta0_pair
    u_h_seq = np.atleast_2d(np.asarray(u_h_seq, float))
    u_t_seq = np.atleast_2d(np.asarray(u_t_seq, float))
    d_seq = np.atleast_2d(np.asarray(d_seq, float))
    n = u_h_seq.shape[0]
    if not (u_t_seq.shape[0] == n and d_seq.shape[0] == n):
        raise PlantError(
            f"sequence lengths differ: {n}, {u_t_seq.shape[0]}, {d_seq.shape[0]}"
        )
    z_h0, z_t0 = (None, None) if initial_z is None else initial_z
    state = initial_state(net, theta0, theta_m1, z_h0, z_t0)

    theta = np.empty((n, net.n_theta))
    z_h = np.empty((n, net.n_zh))
    z_t = np.empty((n, net.n_zt))
    pump = np.empty(n)
    heater = np.empty(n)
    cost_h = np.zeros(n)
    cost_t = np.zeros(n)
    iters = np.empty(n, dtype=int)
    stepper = _AffineStepper(model, carry_rules)
    for k in range(n):
        try:
            state, report = stepper.step(state, u_h_seq[k], u_t_seq[k], d_seq[k])
        except PlantError as exc:
            raise PlantError(f"step {k}: {exc}") from exc
        theta[k] = state.theta
        z_h[k] = state.z_h
        z_t[k] = state.z_t
        iters[k] = report.iterations
        point = net.with_mflow(
            {
                "theta": state.theta,
                "z_h": state.z_h,
                "z_t": state.z_t,
                "u_h": u_h_seq[k],
                "u_t": u_t_seq[k],
                "d": d_seq[k],
            }
        )
        pump[k] = net.objective_h.value(point)
        heater[k] = net.objective_t.value(point)
        if prices is not None:
            w = prices[k] * EUR_PER_KWH_TO_EUR_PER_J * model.dt
            cost_h[k] = w * pump[k]
            cost_t[k] = w * heater[k]

    return Trajectory(
        theta=theta,
        z_h=z_h,
        z_t=z_t,
        u_h=u_h_seq.copy(),
        u_t=u_t_seq.copy(),
        d=d_seq.copy(),
        pump_power_w=pump,
        heater_power_w=heater,
        cost_h_eur=cost_h,
        cost_t_eur=cost_t,
        newton_iters=iters,
    )
