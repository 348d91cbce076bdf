"""Implicit backward-differentiation time stepping and horizon stacking.

Orders 1 and 2 are supported.  The per-step equation system for order 2 is

    theta_k - (4/3) theta_{k-1} + (1/3) theta_{k-2}
        - (2/3) dt * rhs(theta_k, z_k, u_k, d_k) = 0

with the continuous right-hand side from :mod:`cvheat.model`; order 1 is
the implicit Euler analogue.  A two-step method needs two history states:
when only the initial state exists, the first step falls back to order 1
and every later step uses the requested order.

:func:`assemble_horizon` stacks the per-step equalities and inequalities
of an MPC horizon into one sparse affine-plus-bilinear system over the
stacked variable vector ``[theta_k, mdot_k, z_h_k, z_t_k, u_h_k, u_t_k]``
per step, with CV flows tied to pump flows by explicit link rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import (
    EUR_PER_KWH_TO_EUR_PER_J,
    CvNetwork,
    ModelError,
    eval_dynamics_rhs,
)

# order -> ((c_self, c_km1, c_km2), beta) in
# c_self theta_k + c_km1 theta_{k-1} + c_km2 theta_{k-2} = beta dt rhs
_BDF = {1: ((1.0, -1.0, 0.0), 1.0), 2: ((1.0, -4.0 / 3.0, 1.0 / 3.0), 2.0 / 3.0)}

#: Per-step variable blocks of the stacked horizon vector, in order.
STEP_BLOCKS = ("theta", "mflow", "z_h", "z_t", "u_h", "u_t")

#: Constraint families of a stacked horizon, equalities first.
EQ_FAMILIES = ("dyn", "f_h", "f_t", "mflow_link")
INEQ_FAMILIES = ("g_h", "g_t")


class MissingHistory(ModelError):
    """Order-2 stepping was requested without two history states."""


@dataclass(frozen=True)
class DiscreteModel:
    """A CvNetwork paired with a fixed timestep and BDF order."""

    net: CvNetwork
    dt: float
    order: int = 2

    def __post_init__(self):
        if self.dt <= 0:
            raise ModelError("dt must be > 0")
        if self.order not in _BDF:
            raise ModelError(f"order must be one of {sorted(_BDF)}")

    def refined(self, factor: int) -> "DiscreteModel":
        return DiscreteModel(self.net, self.dt / factor, self.order)


def step_residual(
    model: DiscreteModel,
    theta_k: np.ndarray,
    theta_km1: np.ndarray,
    theta_km2,
    point: dict,
    order: int = None,
) -> np.ndarray:
    """Residual of one implicit step; zero iff ``theta_k`` solves the step.

    ``point`` supplies the algebraic/input blocks at step k (its ``theta``
    entry, if any, is replaced by ``theta_k``).
    """
    order = model.order if order is None else order
    if order not in _BDF:
        raise ModelError(f"order must be one of {sorted(_BDF)}")
    if order == 2 and theta_km2 is None:
        raise MissingHistory("order 2 requires theta_{k-2}")
    (c0, c1, c2), beta = _BDF[order]
    pt = dict(point)
    pt["theta"] = np.asarray(theta_k, float)
    r = c0 * pt["theta"] + c1 * np.asarray(theta_km1, float)
    if order == 2:
        r = r + c2 * np.asarray(theta_km2, float)
    return r - beta * model.dt * eval_dynamics_rhs(model.net, pt)


@dataclass(frozen=True)
class StackedBilinear:
    """``x_matrix @ [(y_matrix @ x) o (z_matrix @ x)]`` over stacked coords.

    The y side only ever touches CV-flow coordinates, so fixing the flow
    block makes every term affine in the remaining coordinates.
    """

    x_matrix: sp.csr_matrix
    y_matrix: sp.csr_matrix
    z_matrix: sp.csr_matrix

    def value(self, x: np.ndarray) -> np.ndarray:
        return self.x_matrix @ ((self.y_matrix @ x) * (self.z_matrix @ x))

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        return self.x_matrix @ (
            sp.diags(self.y_matrix @ x) @ self.z_matrix
            + sp.diags(self.z_matrix @ x) @ self.y_matrix
        )


@dataclass(frozen=True)
class StackedFamily:
    """One constraint family stacked over the horizon."""

    kind: str  # "equality" | "inequality"
    matrix: sp.csr_matrix
    constant: np.ndarray
    bilinear: tuple
    row_labels: tuple
    row_step: np.ndarray  # horizon step index per row

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        r = self.matrix @ x + self.constant
        for t in self.bilinear:
            r += t.value(x)
        return r

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        j = self.matrix
        for t in self.bilinear:
            j = j + t.jacobian(x)
        return sp.csr_matrix(j)


@dataclass(frozen=True)
class StackedCost:
    """Scalar cost over the stacked vector: linear part plus bilinear rows."""

    linear: np.ndarray
    bilinear: tuple

    def value(self, x: np.ndarray) -> float:
        v = float(self.linear @ x)
        for t in self.bilinear:
            v += float(np.sum(t.value(x)))
        return v

    def gradient(self, x: np.ndarray) -> np.ndarray:
        g = self.linear.copy()
        for t in self.bilinear:
            w = np.asarray(t.x_matrix.sum(axis=0)).ravel()
            g += t.y_matrix.T @ (w * (t.z_matrix @ x))
            g += t.z_matrix.T @ (w * (t.y_matrix @ x))
        return g


@dataclass(frozen=True)
class HorizonAssembly:
    """Stacked constraint system and cost of one MPC horizon.

    History states and disturbance/price forecasts are folded into the
    constants, so residuals are functions of the stacked vector alone.
    """

    model: DiscreteModel
    n_c: int
    per_step: int
    n_stacked: int
    families: dict
    cost_h: StackedCost
    cost_t: StackedCost
    prices: np.ndarray
    disturbances: np.ndarray
    theta_prev: np.ndarray
    theta_prevprev: np.ndarray | None
    step_orders: tuple

    def block_slice(self, k: int, block: str) -> slice:
        """Stacked-coordinate slice of one block at horizon step ``k``."""
        if not 0 <= k < self.n_c:
            raise ModelError(f"step {k} outside horizon 0..{self.n_c - 1}")
        net = self.model.net
        off = k * self.per_step
        for b in STEP_BLOCKS:
            size = net.block_size(b)
            if b == block:
                return slice(off, off + size)
            off += size
        raise ModelError(f"unknown stacked block {block!r}")

    def block_indices(self, block: str) -> np.ndarray:
        """All stacked coordinates of one block across the horizon."""
        return np.concatenate(
            [np.arange(self.block_slice(k, block).start, self.block_slice(k, block).stop)
             for k in range(self.n_c)]
        )

    def set_flows(self, x: np.ndarray, u_plan: np.ndarray) -> None:
        """Write a pump-flow plan (n_c, n_uh) and the derived CV flows."""
        net = self.model.net
        for k in range(self.n_c):
            x[self.block_slice(k, "u_h")] = u_plan[k]
            x[self.block_slice(k, "mflow")] = net.mflow_map @ u_plan[k]

    def residuals(self, x: np.ndarray) -> dict:
        return {name: fam.residual(x) for name, fam in self.families.items()}

    def objective_value(self, x: np.ndarray) -> float:
        return self.cost_h.value(x) + self.cost_t.value(x)


def _lift(mat: sp.spmatrix, col_offset: int, n_stacked: int) -> sp.csr_matrix:
    """Place a block matrix at a column offset of the stacked vector."""
    m = sp.csr_matrix(mat)
    return sp.csr_matrix(
        (m.data, m.indices + col_offset, m.indptr), shape=(m.shape[0], n_stacked)
    )


def _lift_rows(mat: sp.spmatrix, row_offset: int, n_rows: int) -> sp.csr_matrix:
    """Place a block matrix at a row offset of a stacked family."""
    m = sp.coo_matrix(mat)
    return sp.csr_matrix(
        (m.data, (m.row + row_offset, m.col)), shape=(n_rows, m.shape[1])
    )


def _merge_bilinears(terms: list) -> tuple:
    """Concatenate stacked bilinear terms along the product dimension.

    ``X1[(Y1 x) o (Z1 x)] + X2[(Y2 x) o (Z2 x)]`` equals one term with X
    matrices side by side and Y/Z stacked, which makes residual and
    Jacobian evaluation two sparse products instead of two per term."""
    if len(terms) <= 1:
        return tuple(terms)
    return (
        StackedBilinear(
            sp.hstack([t.x_matrix for t in terms], format="csr"),
            sp.vstack([t.y_matrix for t in terms], format="csr"),
            sp.vstack([t.z_matrix for t in terms], format="csr"),
        ),
    )


def assemble_horizon(
    model: DiscreteModel,
    n_c: int,
    history,
    disturbances: np.ndarray,
    prices: np.ndarray,
) -> HorizonAssembly:
    """Stack dynamics, algebraics and inequalities over an ``n_c`` horizon.

    ``history`` is ``(theta_prev, theta_prevprev)`` with ``theta_prevprev``
    possibly None (first closed-loop step); ``disturbances`` has one row
    per step and ``prices`` is in EUR/kWh.  Both forecasts must cover at
    least ``n_c`` steps.
    """
    net = model.net
    theta_prev, theta_prevprev = history
    theta_prev = np.asarray(theta_prev, float)
    if theta_prevprev is not None:
        theta_prevprev = np.asarray(theta_prevprev, float)
    if n_c < 1:
        raise ModelError("horizon must be >= 1 steps")
    disturbances = np.atleast_2d(np.asarray(disturbances, float))
    prices = np.asarray(prices, float)
    if disturbances.shape[0] < n_c or len(prices) < n_c:
        raise ModelError(
            f"forecasts shorter than horizon: need {n_c} steps, got "
            f"{disturbances.shape[0]} disturbance rows and {len(prices)} prices"
        )
    disturbances = disturbances[:n_c]
    prices = prices[:n_c]

    per_step = sum(net.block_size(b) for b in STEP_BLOCKS)
    n_stacked = n_c * per_step

    def off(k, block):
        o = k * per_step
        for b in STEP_BLOCKS:
            if b == block:
                return o
            o += net.block_size(b)
        raise ModelError(block)

    step_orders = []
    for k in range(n_c):
        if model.order == 2 and k == 0 and theta_prevprev is None:
            step_orders.append(1)
        else:
            step_orders.append(model.order)

    def stack_set(cs, family: str, scale: float = 1.0):
        """Stack one ConstraintSet over all steps (d folded per step)."""
        mats, consts, bls, labels, row_step = [], [], [], [], []
        n_rows_total = n_c * cs.n_rows
        for k in range(n_c):
            parts = []
            const = scale * cs.constant.copy()
            for block, a in cs.affine.items():
                if block == "d":
                    const += scale * (a @ disturbances[k])
                else:
                    parts.append(_lift(scale * a, off(k, block), n_stacked))
            for t in cs.bilinear_terms:
                if t.z_block == "d":
                    folded = t.x_matrix @ sp.diags(t.z_matrix @ disturbances[k]) @ t.y_matrix
                    parts.append(_lift(scale * folded, off(k, "mflow"), n_stacked))
                else:
                    bls.append(
                        StackedBilinear(
                            _lift_rows(scale * t.x_matrix, k * cs.n_rows, n_rows_total),
                            _lift(t.y_matrix, off(k, "mflow"), n_stacked),
                            _lift(t.z_matrix, off(k, t.z_block), n_stacked),
                        )
                    )
            mat = parts[0] if parts else sp.csr_matrix((cs.n_rows, n_stacked))
            for p in parts[1:]:
                mat = mat + p
            mats.append(mat)
            consts.append(const)
            base = cs.row_labels or tuple(f"row{i}" for i in range(cs.n_rows))
            labels.extend(f"{family}[k{k}]:{lab}" for lab in base)
            row_step.extend([k] * cs.n_rows)
        return StackedFamily(
            kind=cs.kind,
            matrix=sp.vstack(mats, format="csr") if mats else sp.csr_matrix((0, n_stacked)),
            constant=np.concatenate(consts) if consts else np.zeros(0),
            bilinear=_merge_bilinears(bls),
            row_labels=tuple(labels),
            row_step=np.array(row_step, dtype=int),
        )

    # Dynamics rows need the BDF scaling and the history coupling on top
    # of the plain stacking of the continuous right-hand side.
    dyn_mats, dyn_consts, dyn_bls, dyn_labels, dyn_step = [], [], [], [], []
    eye = sp.eye(net.n_theta, format="csr")
    for k in range(n_c):
        (c0, c1, c2), beta = _BDF[step_orders[k]]
        s = -beta * model.dt
        parts = [_lift(c0 * eye, off(k, "theta"), n_stacked)]
        const = np.zeros(net.n_theta)
        for block, a in net.dynamics.affine.items():
            if block == "d":
                const += s * (a @ disturbances[k])
            else:
                parts.append(_lift(s * a, off(k, block), n_stacked))
        for t in net.dynamics.bilinear_terms:
            if t.z_block == "d":
                folded = t.x_matrix @ sp.diags(t.z_matrix @ disturbances[k]) @ t.y_matrix
                parts.append(_lift(s * folded, off(k, "mflow"), n_stacked))
            else:
                dyn_bls.append(
                    StackedBilinear(
                        _lift_rows(s * t.x_matrix, k * net.n_theta, n_c * net.n_theta),
                        _lift(t.y_matrix, off(k, "mflow"), n_stacked),
                        _lift(t.z_matrix, off(k, t.z_block), n_stacked),
                    )
                )
        const += s * net.dynamics.constant
        # History coupling: in-horizon steps reference stacked theta,
        # pre-horizon steps fold the measured states into the constant.
        if k >= 1:
            parts.append(_lift(c1 * eye, off(k - 1, "theta"), n_stacked))
        else:
            const += c1 * theta_prev
        if c2 != 0.0:
            if k >= 2:
                parts.append(_lift(c2 * eye, off(k - 2, "theta"), n_stacked))
            elif k == 1:
                const += c2 * theta_prev
            else:
                const += c2 * theta_prevprev
        mat = parts[0]
        for p in parts[1:]:
            mat = mat + p
        dyn_mats.append(mat)
        dyn_consts.append(const)
        dyn_labels.extend(f"dyn[k{k}]:cv{i + 1}" for i in range(net.n_theta))
        dyn_step.extend([k] * net.n_theta)
    dyn = StackedFamily(
        kind="equality",
        matrix=sp.vstack(dyn_mats, format="csr"),
        constant=np.concatenate(dyn_consts),
        bilinear=_merge_bilinears(dyn_bls),
        row_labels=tuple(dyn_labels),
        row_step=np.array(dyn_step, dtype=int),
    )

    # CV-flow link rows: mdot_k - mflow_map u_h_k = 0.
    link_mats, link_labels, link_step = [], [], []
    for k in range(n_c):
        link_mats.append(
            _lift(sp.eye(net.n_mflow, format="csr"), off(k, "mflow"), n_stacked)
            + _lift(-net.mflow_map, off(k, "u_h"), n_stacked)
        )
        link_labels.extend(f"mflow_link[k{k}]:cv{i}" for i in range(net.n_mflow))
        link_step.extend([k] * net.n_mflow)
    link = StackedFamily(
        kind="equality",
        matrix=sp.vstack(link_mats, format="csr"),
        constant=np.zeros(n_c * net.n_mflow),
        bilinear=(),
        row_labels=tuple(link_labels),
        row_step=np.array(link_step, dtype=int),
    )

    families = {
        "dyn": dyn,
        "f_h": stack_set(net.f_h, "f_h"),
        "f_t": stack_set(net.f_t, "f_t"),
        "mflow_link": link,
        "g_h": stack_set(net.g_h, "g_h"),
        "g_t": stack_set(net.g_t, "g_t"),
    }

    def stack_cost(form) -> StackedCost:
        linear = np.zeros(n_stacked)
        bls = []
        for k in range(n_c):
            w = model.dt
            if form.price_scaled:
                w *= prices[k] * EUR_PER_KWH_TO_EUR_PER_J
            for block, vec in form.linear.items():
                linear[off(k, block) : off(k, block) + net.block_size(block)] += w * vec
            for t in form.bilinear_terms:
                bls.append(
                    StackedBilinear(
                        sp.csr_matrix(w * t.x_matrix),
                        _lift(t.y_matrix, off(k, "mflow"), n_stacked),
                        _lift(t.z_matrix, off(k, t.z_block), n_stacked),
                    )
                )
        return StackedCost(linear=linear, bilinear=_merge_bilinears(bls))

    return HorizonAssembly(
        model=model,
        n_c=n_c,
        per_step=per_step,
        n_stacked=n_stacked,
        families=families,
        cost_h=stack_cost(net.objective_h),
        cost_t=stack_cost(net.objective_t),
        prices=prices,
        disturbances=disturbances,
        theta_prev=theta_prev,
        theta_prevprev=theta_prevprev,
        step_orders=tuple(step_orders),
    )
