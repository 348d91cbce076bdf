"""Builder for the underground heating benchmark system.

``n_pi`` parallel pipes are buried in a two-layer soil grid: across the
pipes (y) the bottom layer alternates soil/pipe/soil/... for a total of
``2 n_pi + 1`` columns, the top layer is all soil, and each column is
split into ``n_x`` slices along the pipes (x).  That yields
``(2 n_pi + 1) * 2 * n_x`` temperature states.  Each pipe is fed by a pump
(flow ``mdot_in_p``) from a shared manifold: the pipe outlet streams mix
to a common return temperature, a heater lifts it by ``dtheta``, and the
result re-enters all pipes.

Conductive couplings, with sigma values lumped per CV face [W/K]:

* pipe CV <-> soil CV directly above: ``sigma_pi``
* soil <-> soil along x (same column and layer): ``sigma_x``
* soil <-> soil across y (same layer, adjacent columns): ``sigma_y``
* soil <-> soil vertically (same column and slice): ``sigma_z``
* edge columns <-> undisturbed soil: ``sigma_y / 2`` per CV, both layers
* top layer <-> ambient air: ``sigma_z / 2`` per CV

Pipe CVs exchange heat along x only by convection (the flowing water),
never by conduction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .model import (
    EUR_PER_KWH_TO_EUR_PER_J,
    BilinearTerm,
    ConstraintSet,
    CvNetwork,
    ModelError,
    ObjectiveForm,
)


@dataclass(frozen=True)
class HeatfieldParams:
    """Geometry, material and bound parameters of the heating field.

    Defaults reproduce the benchmark configuration; all values can be
    overridden per scenario.
    """

    n_pi: int = 2
    n_x: int = 3
    volume: float = 3.75  # CV volume [m^3]
    sigma_x: float = 0.025  # soil conductance along the pipes [W/K]
    sigma_y: float = 22.5  # soil conductance across the pipes [W/K]
    sigma_z: float = 22.5  # vertical soil conductance [W/K]
    sigma_pi: float = 44.86  # pipe wall conductance [W/K]
    c_w: float = 4200.0  # water specific heat [J/(kg K)]
    rho_w: float = 1000.0  # water density [kg/m^3]
    cs_rhos: float = 1.5e6  # soil volumetric heat capacity [J/(m^3 K)]
    dp_nom: float = 8e5  # nominal pipe pressure loss [Pa]
    mdot_nom: float = 30.0  # nominal pipe mass flow [kg/s]
    eta_pu: float = 0.8  # pump efficiency [-]
    theta_soil_min: float = 278.15  # soil CV lower bound [K]
    theta_soil_max: float = 313.15  # soil CV upper bound [K]
    mdot_min: float = 0.1  # pump flow lower bound used by the MPC [kg/s]
    mdot_max: float = 30.0  # pump flow upper bound [kg/s]
    dtheta_max: float = 10.0  # heater temperature lift upper bound [K]

    def check(self) -> None:
        if self.n_pi < 1 or self.n_x < 1:
            raise ModelError("n_pi and n_x must both be >= 1")
        positive = (
            "volume sigma_x sigma_y sigma_z sigma_pi c_w rho_w cs_rhos "
            "dp_nom mdot_nom eta_pu mdot_max dtheta_max"
        ).split()
        for name in positive:
            if getattr(self, name) <= 0:
                raise ModelError(f"parameter {name} must be strictly positive")
        if self.mdot_min < 0 or self.mdot_min >= self.mdot_max:
            raise ModelError("need 0 <= mdot_min < mdot_max")
        if self.theta_soil_min >= self.theta_soil_max:
            raise ModelError("need theta_soil_min < theta_soil_max")

    def override(self, **changes) -> "HeatfieldParams":
        return replace(self, **changes)

    @property
    def n_columns(self) -> int:
        return 2 * self.n_pi + 1

    @property
    def n_theta(self) -> int:
        return self.n_columns * 2 * self.n_x

    @property
    def n_mflow(self) -> int:
        return self.n_pi * self.n_x

    @property
    def pressure_coeff(self) -> float:
        """k in dp = k * mdot^2 [Pa/(kg/s)^2]."""
        return self.dp_nom / self.mdot_nom**2

    @property
    def per_step_variable_count(self) -> int:
        """Decision variables per horizon step: theta, CV flows, dp per
        pipe, theta_in/theta_out, pump flows, dtheta."""
        return self.n_theta + self.n_mflow + 2 * self.n_pi + 3


@dataclass(frozen=True)
class GridIndex:
    """Position of one CV in the (column, slice, layer) grid, 1-based."""

    column: int
    slice: int
    layer: str  # "bottom" | "top"
    kind: str  # "pipe" | "soil"

    def __post_init__(self):
        if self.layer not in ("bottom", "top"):
            raise ModelError(f"layer must be 'bottom' or 'top', got {self.layer!r}")
        is_pipe = self.layer == "bottom" and self.column % 2 == 0
        expected = "pipe" if is_pipe else "soil"
        if self.kind != expected:
            raise ModelError(
                f"column {self.column} {self.layer} is a {expected} CV, not {self.kind!r}"
            )


def state_index(params: HeatfieldParams, gi: GridIndex) -> int:
    """0-based temperature state index; bottom layer first, column-major."""
    if not (1 <= gi.column <= params.n_columns and 1 <= gi.slice <= params.n_x):
        raise ModelError(f"grid index out of range: {gi}")
    base = 0 if gi.layer == "bottom" else params.n_columns * params.n_x
    return base + (gi.column - 1) * params.n_x + (gi.slice - 1)


def grid_of_state(params: HeatfieldParams, i: int) -> GridIndex:
    """Inverse of :func:`state_index`."""
    per_layer = params.n_columns * params.n_x
    if not (0 <= i < 2 * per_layer):
        raise ModelError(f"state index {i} out of range")
    layer = "bottom" if i < per_layer else "top"
    j = i % per_layer
    column = j // params.n_x + 1
    sl = j % params.n_x + 1
    kind = "pipe" if layer == "bottom" and column % 2 == 0 else "soil"
    return GridIndex(column=column, slice=sl, layer=layer, kind=kind)


def pipe_state_index(params: HeatfieldParams, pipe: int, sl: int) -> int:
    return state_index(
        params, GridIndex(column=2 * pipe, slice=sl, layer="bottom", kind="pipe")
    )


def pipe_exit_index(params: HeatfieldParams, pipe: int) -> int:
    return pipe_state_index(params, pipe, params.n_x)


def mflow_index(params: HeatfieldParams, pipe: int, sl: int) -> int:
    return (pipe - 1) * params.n_x + (sl - 1)


def soil_state_indices(params: HeatfieldParams) -> np.ndarray:
    return np.array(
        [i for i in range(params.n_theta) if grid_of_state(params, i).kind == "soil"],
        dtype=int,
    )


def build(params: HeatfieldParams, check: bool = True) -> CvNetwork:
    """Construct the CvNetwork for the given geometry and parameters."""
    if check:
        params.check()
    n_pi, n_x = params.n_pi, params.n_x
    n_theta = params.n_theta
    n_mflow = params.n_mflow
    n_zh, n_zt, n_uh, n_ut, n_d = n_pi, 2, n_pi, 1, 2

    capacity = np.empty(n_theta)
    for i in range(n_theta):
        kind = grid_of_state(params, i).kind
        capacity[i] = (
            params.c_w * params.rho_w if kind == "pipe" else params.cs_rhos
        ) * params.volume

    # Conductive couplings (i, j, sigma) and boundary couplings
    # (i, d column, sigma).
    couplings: list[tuple[int, int, float]] = []
    boundary: list[tuple[int, int, float]] = []

    def at(column, sl, layer):
        kind = "pipe" if layer == "bottom" and column % 2 == 0 else "soil"
        return state_index(params, GridIndex(column, sl, layer, kind)), kind

    for c in range(1, params.n_columns + 1):
        for s in range(1, n_x + 1):
            bot, bot_kind = at(c, s, "bottom")
            top, _ = at(c, s, "top")
            # Vertical: pipe wall for pipe columns, soil-soil otherwise.
            couplings.append(
                (bot, top, params.sigma_pi if bot_kind == "pipe" else params.sigma_z)
            )
            # Along x (soil only).
            if s < n_x:
                nxt_b, nxt_kind = at(c, s + 1, "bottom")
                if bot_kind == "soil" and nxt_kind == "soil":
                    couplings.append((bot, nxt_b, params.sigma_x))
                couplings.append((top, at(c, s + 1, "top")[0], params.sigma_x))
            # Across y (soil only: in the bottom layer neighbours alternate
            # soil/pipe, so only the top layer couples).
            if c < params.n_columns:
                nb_b, nb_kind = at(c + 1, s, "bottom")
                if bot_kind == "soil" and nb_kind == "soil":
                    couplings.append((bot, nb_b, params.sigma_y))
                couplings.append((top, at(c + 1, s, "top")[0], params.sigma_y))
            # Boundaries: undisturbed soil at the y edges, air above.
            if c in (1, params.n_columns):
                boundary.append((bot, 0, 0.5 * params.sigma_y))
                boundary.append((top, 0, 0.5 * params.sigma_y))
            boundary.append((top, 1, 0.5 * params.sigma_z))

    a = sp.lil_matrix((n_theta, n_theta))
    dmat = sp.lil_matrix((n_theta, n_d))
    for i, j, sigma in couplings:
        a[i, i] -= sigma / capacity[i]
        a[i, j] += sigma / capacity[i]
        a[j, j] -= sigma / capacity[j]
        a[j, i] += sigma / capacity[j]
    for i, col, sigma in boundary:
        a[i, i] -= sigma / capacity[i]
        dmat[i, col] += sigma / capacity[i]

    # Advection: dtheta/dt += mdot (theta_upstream - theta_self) / (rho_w V).
    inv_rho_v = 1.0 / (params.rho_w * params.volume)
    n_pcv = n_pi * n_x
    x_theta = sp.lil_matrix((n_theta, n_pcv))
    y_theta = sp.lil_matrix((n_pcv, n_mflow))
    z_theta = sp.lil_matrix((n_pcv, n_theta))
    x_in = sp.lil_matrix((n_theta, n_pi))
    y_in = sp.lil_matrix((n_pi, n_mflow))
    z_in = sp.lil_matrix((n_pi, n_zt))
    row = 0
    for p in range(1, n_pi + 1):
        for s in range(1, n_x + 1):
            i = pipe_state_index(params, p, s)
            x_theta[i, row] = inv_rho_v
            y_theta[row, mflow_index(params, p, s)] = 1.0
            z_theta[row, i] = -1.0
            if s > 1:
                z_theta[row, pipe_state_index(params, p, s - 1)] = 1.0
            row += 1
        x_in[pipe_state_index(params, p, 1), p - 1] = inv_rho_v
        y_in[p - 1, mflow_index(params, p, 1)] = 1.0
        z_in[p - 1, 0] = 1.0  # theta_in
    dyn_bilinear = (
        BilinearTerm(x_theta, y_theta, z_theta, "theta"),
        BilinearTerm(x_in, y_in, z_in, "z_t"),
    )
    dynamics = ConstraintSet(
        n_rows=n_theta,
        kind="equality",
        affine={"theta": a.tocsr(), "d": dmat.tocsr()},
        bilinear_terms=dyn_bilinear,
    )

    # Hydraulics: dp_p - k mdot_p^2 = 0.
    k = params.pressure_coeff
    y_sq = sp.lil_matrix((n_pi, n_mflow))
    for p in range(1, n_pi + 1):
        y_sq[p - 1, mflow_index(params, p, 1)] = 1.0
    f_h = ConstraintSet(
        n_rows=n_pi,
        kind="equality",
        affine={"z_h": sp.eye(n_pi, format="csr")},
        bilinear_terms=(BilinearTerm(-k * sp.eye(n_pi, format="csr"), y_sq, y_sq, "mflow"),),
        row_labels=tuple(f"dp[{p}]" for p in range(1, n_pi + 1)),
    )

    # Thermal algebraics: heater link and outlet mixing,
    # (sum_p mdot_p) theta_out - sum_p mdot_p theta_exit_p = 0.
    aff_zt = sp.lil_matrix((2, n_zt))
    aff_zt[0, 0] = 1.0
    aff_zt[0, 1] = -1.0
    aff_ut = sp.lil_matrix((2, n_ut))
    aff_ut[0, 0] = -1.0
    y_last = sp.lil_matrix((n_pi, n_mflow))
    z_exit = sp.lil_matrix((n_pi, n_theta))
    for p in range(1, n_pi + 1):
        y_last[p - 1, mflow_index(params, p, n_x)] = 1.0
        z_exit[p - 1, pipe_exit_index(params, p)] = 1.0
    x_mix_out = sp.lil_matrix((2, 1))
    x_mix_out[1, 0] = 1.0
    z_out = sp.lil_matrix((1, n_zt))
    z_out[0, 1] = 1.0
    x_mix_exit = sp.lil_matrix((2, n_pi))
    x_mix_exit[1, :] = -1.0
    f_t = ConstraintSet(
        n_rows=2,
        kind="equality",
        affine={"z_t": aff_zt.tocsr(), "u_t": aff_ut.tocsr()},
        bilinear_terms=(
            BilinearTerm(x_mix_out, y_last.sum(axis=0), z_out, "z_t"),
            BilinearTerm(x_mix_exit, y_last, z_exit, "theta"),
        ),
        row_labels=("theta_in", "mixing"),
    )

    # Hydraulic inequalities: pump flow box.
    eye_uh = sp.eye(n_pi, format="csr")
    g_h = ConstraintSet(
        n_rows=2 * n_pi,
        kind="inequality",
        affine={"u_h": sp.vstack([-eye_uh, eye_uh], format="csr")},
        constant=np.concatenate(
            [np.full(n_pi, params.mdot_min), np.full(n_pi, -params.mdot_max)]
        ),
        row_labels=tuple(
            [f"mdot_min[{p}]" for p in range(1, n_pi + 1)]
            + [f"mdot_max[{p}]" for p in range(1, n_pi + 1)]
        ),
    )

    # Thermal inequalities: soil temperature box and heater lift box.
    soil = soil_state_indices(params)
    n_soil = len(soil)
    sel = sp.csr_matrix(
        (np.ones(n_soil), (np.arange(n_soil), soil)), shape=(n_soil, n_theta)
    )
    aff_theta = sp.vstack([-sel, sel, sp.csr_matrix((2, n_theta))], format="csr")
    aff_ut_g = sp.lil_matrix((2 * n_soil + 2, n_ut))
    aff_ut_g[2 * n_soil, 0] = -1.0
    aff_ut_g[2 * n_soil + 1, 0] = 1.0
    g_t = ConstraintSet(
        n_rows=2 * n_soil + 2,
        kind="inequality",
        affine={"theta": aff_theta, "u_t": aff_ut_g.tocsr()},
        constant=np.concatenate(
            [
                np.full(n_soil, params.theta_soil_min),
                np.full(n_soil, -params.theta_soil_max),
                [0.0, -params.dtheta_max],
            ]
        ),
        row_labels=tuple(
            [f"soil_min[cv{i + 1}]" for i in soil]
            + [f"soil_max[cv{i + 1}]" for i in soil]
            + ["dtheta_min", "dtheta_max"]
        ),
    )

    mflow_map = sp.lil_matrix((n_mflow, n_uh))
    for p in range(1, n_pi + 1):
        for s in range(1, n_x + 1):
            mflow_map[mflow_index(params, p, s), p - 1] = 1.0

    return CvNetwork(
        n_theta=n_theta,
        n_zh=n_zh,
        n_zt=n_zt,
        n_uh=n_uh,
        n_ut=n_ut,
        n_d=n_d,
        n_mflow=n_mflow,
        dynamics=dynamics,
        f_h=f_h,
        f_t=f_t,
        g_h=g_h,
        g_t=g_t,
        mflow_map=mflow_map.tocsr(),
        capacity=capacity,
        objective_h=_pump_power_form(params),
        objective_t=_heater_power_form(params),
    )


def _pump_power_form(params: HeatfieldParams) -> ObjectiveForm:
    """Total pump power sum_p dp_p mdot_p / (rho_w eta_pu) [W]."""
    n_pi = params.n_pi
    y = sp.lil_matrix((n_pi, params.n_mflow))
    for p in range(1, n_pi + 1):
        y[p - 1, mflow_index(params, p, 1)] = 1.0
    term = BilinearTerm(
        sp.eye(n_pi, format="csr") / (params.rho_w * params.eta_pu),
        y,
        sp.eye(n_pi, format="csr"),
        "z_h",
    )
    return ObjectiveForm(bilinear_terms=(term,), price_scaled=True)


def _heater_power_form(params: HeatfieldParams) -> ObjectiveForm:
    """Heater power c_w dtheta sum_p mdot_p [W]."""
    y = sp.lil_matrix((1, params.n_mflow))
    for p in range(1, params.n_pi + 1):
        y[0, mflow_index(params, p, 1)] = 1.0
    term = BilinearTerm(
        sp.csr_matrix(np.array([[params.c_w]])), y, sp.csr_matrix(np.array([[1.0]])), "u_t"
    )
    return ObjectiveForm(bilinear_terms=(term,), price_scaled=True)


def objective_coeffs(
    params: HeatfieldParams, price_eur_per_kwh: float, dt: float
) -> tuple[ObjectiveForm, ObjectiveForm]:
    """Per-step cost forms (hydraulic, thermal) in EUR for one step of
    length ``dt`` at the given electricity price."""
    if price_eur_per_kwh < 0:
        raise ModelError("price must be >= 0")
    if dt <= 0:
        raise ModelError("dt must be > 0")
    w = price_eur_per_kwh * EUR_PER_KWH_TO_EUR_PER_J * dt
    return _pump_power_form(params).scaled(w), _heater_power_form(params).scaled(w)


def mixing_residual(flows, exit_temps, theta_out: float) -> float:
    """Residual of the outlet mixing relation,
    ``(sum flows) theta_out - sum(flows * exit_temps)``.

    All-zero flows give residual 0 for any ``theta_out``; the plant
    resolves that degenerate case by carrying the previous outlet
    temperature forward.
    """
    flows = np.asarray(flows, float)
    exit_temps = np.asarray(exit_temps, float)
    return float(flows.sum() * theta_out - flows @ exit_temps)
