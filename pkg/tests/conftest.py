import numpy as np
import pytest

import symgrid as sg


@pytest.fixture(scope="session")
def di_system():
    return sg.double_integrator()


@pytest.fixture(scope="session")
def di_grid(di_system):
    return sg.UniformGrid(di_system.domain, [80, 160], di_system.periodic)


@pytest.fixture(scope="session")
def di_model(di_system, di_grid):
    inputs = sg.InputGrid(di_system.input_set, (5,))
    return sg.build_abstraction(di_system, di_grid, inputs, "exact_linear")


@pytest.fixture(scope="session")
def di_table(di_model):
    return sg.margin_table(di_model)


@pytest.fixture(scope="session")
def di_safety(di_model, di_system):
    return sg.maximal_safety_controller(di_model, di_system.domain)


@pytest.fixture(scope="session")
def di_det(di_safety, di_table):
    return sg.determinize_max_margin(di_safety, di_table)


def make_affine_1d(
    a=1.0,
    b=0.0,
    e=0.0,
    domain=(0.0, 1.0),
    input_set=(0.0, 0.0),
    disturbance=(0.0, 0.0),
):
    """Tiny 1-D affine plant for desk-scale tests: x' = a x + b u + e d."""
    return sg.SystemSpec(
        kind="affine",
        tau=1.0,
        domain=sg.HyperRect([domain[0]], [domain[1]]),
        input_set=sg.HyperRect([input_set[0]], [input_set[1]]),
        disturbance_set=sg.HyperRect([disturbance[0]], [disturbance[1]]),
        periodic=np.array([False]),
        matrices=([[a]], [[b]], [[e]]),
    )
