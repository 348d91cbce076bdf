import numpy as np
import pytest

import cvheat
from cvheat import heatfield

DT = 7200.0


@pytest.fixture(scope="session")
def params12():
    return cvheat.HeatfieldParams(n_pi=1, n_x=2)


@pytest.fixture(scope="session")
def net12(params12):
    return cvheat.build(params12)


@pytest.fixture(scope="session")
def model12(net12):
    return cvheat.DiscreteModel(net12, DT, 2)


@pytest.fixture(scope="session")
def params23():
    return cvheat.HeatfieldParams(n_pi=2, n_x=3)


@pytest.fixture(scope="session")
def net23(params23):
    return cvheat.build(params23)


@pytest.fixture(scope="session")
def model23(net23):
    return cvheat.DiscreteModel(net23, DT, 2)


def binding_theta0(params):
    """State with the soil above the pipes close to its lower bound and a
    cold water loop, so the horizon LP must engage the heater."""
    net_theta = np.empty(params.n_theta)
    for i in range(params.n_theta):
        gi = heatfield.grid_of_state(params, i)
        if gi.kind == "pipe":
            net_theta[i] = 278.5
        elif gi.layer == "top" and gi.column % 2 == 0:
            net_theta[i] = 278.28
        elif gi.layer == "top":
            net_theta[i] = 279.2
        else:
            net_theta[i] = 281.0
    return net_theta


def random_interior_point(net, rng, spread=5.0):
    return net.full_point(
        theta=300.0 + rng.normal(0, spread, net.n_theta),
        z_h=rng.uniform(0.0, 1e5, net.n_zh),
        z_t=300.0 + rng.normal(0, spread, net.n_zt),
        u_h=rng.uniform(0.5, 8.0, net.n_uh),
        u_t=rng.uniform(0.0, 5.0, net.n_ut),
        d=280.0 + rng.normal(0, 3.0, net.n_d),
    )
