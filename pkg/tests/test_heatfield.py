"""Grid layout, couplings, objectives and bounds of the heating field."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

import cvheat
from cvheat import heatfield
from cvheat.heatfield import (
    GridIndex,
    HeatfieldParams,
    build,
    grid_of_state,
    mixing_residual,
    objective_coeffs,
    pipe_exit_index,
    pipe_state_index,
    soil_state_indices,
    state_index,
)
from cvheat.model import ModelError


class TestCounts:
    def test_two_pipe_system_has_30_cvs(self, params23):
        assert params23.n_theta == 30

    @pytest.mark.parametrize(
        "n_pi,n_x,expected", [(1, 2, 19), (2, 3, 43), (7, 5, 202)]
    )
    def test_per_step_variable_counts(self, n_pi, n_x, expected):
        p = HeatfieldParams(n_pi=n_pi, n_x=n_x)
        assert p.per_step_variable_count == expected
        assert (
            p.n_theta + p.n_pi * p.n_x + 2 * p.n_pi + 3 == expected
        )

    def test_invalid_geometry_rejected(self):
        with pytest.raises(ModelError):
            build(HeatfieldParams(n_pi=0, n_x=2))
        with pytest.raises(ModelError):
            build(HeatfieldParams(n_pi=1, n_x=0))

    def test_nonpositive_parameters_rejected(self):
        with pytest.raises(ModelError):
            HeatfieldParams(sigma_pi=-1.0).check()
        with pytest.raises(ModelError):
            HeatfieldParams(theta_soil_min=300.0, theta_soil_max=290.0).check()


class TestGrid:
    def test_pipe_iff_bottom_even_column(self, params23):
        for i in range(params23.n_theta):
            gi = grid_of_state(params23, i)
            is_pipe = gi.layer == "bottom" and gi.column % 2 == 0
            assert (gi.kind == "pipe") == is_pipe

    def test_roundtrip(self, params23):
        for i in range(params23.n_theta):
            assert state_index(params23, grid_of_state(params23, i)) == i

    def test_figure_numbering(self, params23):
        # pipe 1 occupies CVs 4..6, pipe 2 CVs 10..12 (1-based)
        assert pipe_state_index(params23, 1, 1) == 3
        assert pipe_exit_index(params23, 1) == 5
        assert pipe_exit_index(params23, 2) == 11

    def test_kind_mismatch_rejected(self):
        with pytest.raises(ModelError):
            GridIndex(column=2, slice=1, layer="bottom", kind="soil")

    def test_soil_count(self, params23):
        assert len(soil_state_indices(params23)) == 30 - 6


class TestCouplings:
    def test_every_coupling_appears_twice_antisymmetric(self, net23):
        cap = net23.capacity
        a = net23.a_matrix.toarray()
        sym = cap[:, None] * a
        off = sym - np.diag(np.diag(sym))
        assert_allclose(off, off.T, rtol=0, atol=1e-9)
        # adjacency is symmetric in the sparsity pattern too
        assert np.array_equal(off != 0, (off != 0).T)

    def test_row_balance_against_boundaries(self, net23):
        # diagonal absorbs exactly the couplings plus boundary conductances
        a = net23.a_matrix.toarray()
        d = net23.d_matrix.toarray()
        assert_allclose(a.sum(axis=1) + d.sum(axis=1), 0.0, atol=1e-18)

    def test_pipe_rows_touch_only_soil_above(self, params23, net23):
        a = net23.a_matrix.toarray()
        for p in (1, 2):
            for s in range(1, params23.n_x + 1):
                i = pipe_state_index(params23, p, s)
                neighbors = np.flatnonzero(a[i])
                above = state_index(
                    params23, GridIndex(2 * p, s, "top", "soil")
                )
                assert set(neighbors) == {i, above}

    def test_pipe_permutation_symmetry(self, params23, net23):
        # swapping the two pipes permutes the model onto itself
        perm = np.arange(params23.n_theta)
        for s in range(1, params23.n_x + 1):
            for layer in ("bottom", "top"):
                kind = "pipe" if layer == "bottom" else "soil"
                i = state_index(params23, GridIndex(2, s, layer, kind))
                j = state_index(params23, GridIndex(4, s, layer, kind))
                perm[[i, j]] = perm[[j, i]]
                # mirror the soil columns too (1<->5, 3 fixed)
        for s in range(1, params23.n_x + 1):
            for layer in ("bottom", "top"):
                i = state_index(params23, GridIndex(1, s, layer, "soil"))
                j = state_index(params23, GridIndex(5, s, layer, "soil"))
                perm[[i, j]] = perm[[j, i]]
        a = net23.a_matrix.toarray()
        assert_allclose(a[np.ix_(perm, perm)], a, atol=1e-18)
        d = net23.d_matrix.toarray()
        assert_allclose(d[perm], d, atol=1e-18)


class TestObjectives:
    def test_pump_power_at_nominal(self, net12):
        point = net12.full_point(u_h=[30.0], z_h=[8e5])
        assert_allclose(
            net12.objective_h.value(net12.with_mflow(point)), 3.0e4, rtol=1e-12
        )

    def test_heater_power(self, net23):
        point = net23.full_point(u_h=[2.0, 2.0], u_t=[1.0])
        assert_allclose(
            net23.objective_t.value(net23.with_mflow(point)), 16800.0, rtol=1e-12
        )

    def test_zero_price_zero_cost(self, params23, net23):
        h, t = objective_coeffs(params23, 0.0, 7200.0)
        rng = np.random.default_rng(5)
        point = net23.with_mflow(
            net23.full_point(
                u_h=rng.uniform(0, 5, 2), u_t=rng.uniform(0, 5, 1), z_h=rng.uniform(0, 1e5, 2)
            )
        )
        assert h.value(point) == 0.0
        assert t.value(point) == 0.0

    def test_per_step_cost_scaling(self, params12, net12):
        # 0.25 EUR/kWh, 2 h, 3.0e4 W -> 15 EUR
        h, _ = objective_coeffs(params12, 0.25, 7200.0)
        point = net12.with_mflow(net12.full_point(u_h=[30.0], z_h=[8e5]))
        assert_allclose(h.value(point), 15.0, rtol=1e-12)

    def test_price_validation(self, params12):
        with pytest.raises(ModelError):
            objective_coeffs(params12, -0.1, 3600.0)
        with pytest.raises(ModelError):
            objective_coeffs(params12, 0.1, 0.0)


class TestMixing:
    def test_weighted_mean(self):
        assert_allclose(
            mixing_residual([2.0, 5.0], [320.0, 330.0], 2290.0 / 7.0), 0.0, atol=1e-12
        )

    def test_single_pipe_exit_temperature(self):
        assert mixing_residual([3.0], [311.5], 311.5) == 0.0
        assert mixing_residual([3.0], [311.5], 300.0) != 0.0

    def test_degenerate_zero_flow(self):
        assert mixing_residual([0.0, 0.0], [320.0, 330.0], 999.0) == 0.0


class TestBounds:
    def test_flow_box_rows(self, params23, net23):
        point = net23.full_point(u_h=[params23.mdot_min, params23.mdot_max])
        r = cvheat.eval_constraints(net23, point, "g_h")
        assert_allclose(r[[0, 3]], 0.0, atol=1e-12)  # min row p1, max row p2
        assert np.all(r <= 1e-12)

    def test_soil_box_rows(self, params23, net23):
        theta = np.full(params23.n_theta, 300.0)
        theta[soil_state_indices(params23)[0]] = params23.theta_soil_min - 1.0
        point = net23.full_point(theta=theta, z_t=300.0, d=300.0)
        r = cvheat.eval_constraints(net23, point, "g_t")
        labels = net23.g_t.row_labels
        violated = [labels[i] for i in np.flatnonzero(r > 0)]
        assert violated == ["soil_min[cv1]"]
