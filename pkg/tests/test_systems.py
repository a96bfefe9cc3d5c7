"""Plant dynamics, input grids, perturbation budgets."""

import numpy as np
import pytest

import symgrid as sg
from conftest import make_affine_1d


def test_double_integrator_step_examples():
    sys = sg.double_integrator(tau=0.5)
    assert np.allclose(sys.step([0.0, 0.0], [0.0], [0.0, 0.0]), [0.0, 0.0])
    got = sys.step([2.2, 3.2], [-1.0], [0.0, 0.0])
    assert np.allclose(got, [3.675, 2.7], atol=1e-12)


def test_unicycle_step_example():
    sys = sg.unicycle(tau=1.0)
    got = sys.step([0.5, 4.0, 0.0], [0.25, 0.0], [0.0, 0.0, 0.0])
    assert np.allclose(got, [0.75, 4.0, 0.0], atol=1e-12)


def test_double_integrator_affine_in_state():
    sys = sg.double_integrator()
    rng = np.random.default_rng(0)
    for _ in range(50):
        x1 = rng.uniform(-2, 2, 2)
        x2 = rng.uniform(-2, 2, 2)
        a = rng.uniform()
        u = rng.uniform(-1, 1, 1)
        w = rng.uniform(-0.01, 0.01, 2)
        mix = sys.step(a * x1 + (1 - a) * x2, u, w)
        parts = a * sys.step(x1, u, w) + (1 - a) * sys.step(x2, u, w)
        assert np.allclose(mix, parts, atol=1e-12)


def test_unicycle_heading_wraps():
    sys = sg.unicycle()
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.uniform([0, 0, -np.pi], [10, 10, np.pi])
        u = rng.uniform([0.25, -1], [1, 1])
        w = rng.uniform(-0.05, 0.05, 3)
        x2 = sys.step(x, u, w)
        assert -np.pi <= x2[2] < np.pi


def test_step_dimension_mismatch():
    sys = sg.double_integrator()
    with pytest.raises(ValueError):
        sys.step([0.0], [0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        sys.step([0.0, 0.0], [0.0, 1.0], [0.0, 0.0])


def test_perturbed_step():
    sys = sg.double_integrator()
    x, u, w = [1.0, 0.5], [0.5], [0.0, 0.0]
    base = sys.step(x, u, w)
    same = sg.perturbed_step(sys, x, u, w, [0.0, 0.0], bound=0.0)
    assert np.array_equal(base, same)
    moved = sg.perturbed_step(sys, [0, 0], [0.0], [0, 0], [0.01, -0.01], bound=0.02)
    assert np.allclose(moved, [0.01, -0.01])
    with pytest.raises(ValueError, match="budget"):
        sg.perturbed_step(sys, x, u, w, [0.05, 0.0], bound=0.01)


def test_perturbed_step_scaled_inclusion(di_model, di_table):
    # scaled draws stay inside the margin-inflated reach box
    sys = di_model.sys
    grid = di_model.grid
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = sys.domain.sample(rng, 1)[0]
        q = grid.quantize(x)
        v = int(rng.integers(0, di_model.n_inputs))
        bound = 0.99 * di_table.values[q, v]
        p = rng.uniform(-bound, bound, size=2)
        d = rng.uniform(sys.disturbance_set.lo, sys.disturbance_set.hi)
        y = sg.perturbed_step(sys, x, di_model.inputs[v], d, p, bound=bound)
        box = di_model.reach_box(q, v).inflate(bound)
        assert box.contains_point(y, tol=1e-12)


def test_input_grid_endpoints():
    g = sg.InputGrid(sg.HyperRect([-1.0], [1.0]), (5,))
    assert np.allclose(g.vectors.ravel(), [-1, -0.5, 0, 0.5, 1])
    g1 = sg.InputGrid(sg.HyperRect([-1.0], [1.0]), (1,))
    assert np.allclose(g1.vectors.ravel(), [0.0])
    g2 = sg.InputGrid(sg.HyperRect([0.25, -1.0], [1.0, 1.0]), (3, 5))
    assert len(g2) == 15
    assert np.allclose(sorted(set(g2.vectors[:, 0])), [0.25, 0.625, 1.0])


def test_perturbation_map_validation(di_table):
    with pytest.raises(ValueError):
        sg.PerturbationMap("scaled", rho=1.0, table=di_table)
    with pytest.raises(ValueError):
        sg.PerturbationMap("adversarial", rho=0.9, table=di_table)
    with pytest.raises(ValueError):
        sg.PerturbationMap("scaled", rho=0.5)  # needs a table
    pm = sg.PerturbationMap("scaled", rho=0.5, table=di_table)
    assert pm.bound(0, 0) == pytest.approx(0.5 * di_table.values[0, 0])
    assert sg.PerturbationMap("none").bound(3, 1) == 0.0


def test_affine_kind_matches_matrices():
    sys = make_affine_1d(a=0.5, b=1.0, e=0.25, domain=(-1, 1),
                         input_set=(-1, 1), disturbance=(-0.1, 0.1))
    got = sys.step([0.4], [0.2], [0.1])
    assert np.allclose(got, [0.5 * 0.4 + 0.2 + 0.025])
    A, B, E = sys.affine()
    assert A[0][0] == 0.5 and B[0][0] == 1.0 and E[0][0] == 0.25


def test_growth_matrices_only_for_unicycle():
    with pytest.raises(ValueError):
        sg.double_integrator().growth_matrices([0.0])
    L, b = sg.unicycle(tau=1.0).growth_matrices([1.0, 0.0])
    assert np.allclose(L, [[1, 0, 1], [0, 1, 1], [0, 0, 1]])
    assert np.allclose(b, [0.05, 0.05, 0.05])
