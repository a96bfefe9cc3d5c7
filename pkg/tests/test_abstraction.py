"""Symbolic model construction: closure transitions, overflow, persistence."""

import numpy as np
import pytest

import symgrid as sg
from symgrid.geometry import OVERFLOW
from conftest import make_affine_1d


@pytest.fixture(scope="module")
def identity_model():
    sys = make_affine_1d(a=1.0)
    grid = sg.UniformGrid(sys.domain, [10])
    inputs = sg.InputGrid(sys.input_set, (1,))
    return sg.build_abstraction(sys, grid, inputs, "exact_linear")


def test_identity_successors_are_face_neighbors(identity_model):
    m = identity_model
    for q in range(1, 9):
        assert set(m.successors(q, 0)) == {q - 1, q, q + 1}
    # edge cells touch the domain boundary, so the outside symbol joins in
    assert set(m.successors(0, 0)) == {OVERFLOW, 0, 1}
    assert set(m.successors(9, 0)) == {OVERFLOW, 8, 9}


def test_overflow_expansion(identity_model):
    succ = identity_model.successors(OVERFLOW, 0)
    assert set(succ) == set(range(10)) | {OVERFLOW}


def test_enabled_inputs(identity_model, di_model):
    assert list(identity_model.enabled_inputs(3)) == [0]
    assert list(di_model.enabled_inputs(0)) == [0, 1, 2, 3, 4]


def test_di_pair_count(di_model):
    assert di_model.n_states == 12800
    assert di_model.n_inputs == 5
    # every pair has a nonempty successor set (cells or the outside symbol)
    has_succ = ~di_model.empty | di_model.overflow
    assert bool(has_succ.all())


def test_boundary_cells_flag_overflow(di_model, di_grid):
    # a top-velocity cell pushed upward must be able to exit
    q = di_grid.quantize([3.0, 5.99])
    v = 4  # u = +1
    assert bool(di_model.overflow[v, q])
    blk = di_model.successor_block(q, v)
    assert blk.overflow


def test_successors_match_brute_force():
    sys = sg.SystemSpec(
        kind="affine",
        tau=1.0,
        domain=sg.HyperRect([0.0, 0.0], [1.0, 1.0]),
        input_set=sg.HyperRect([-1.0], [1.0]),
        disturbance_set=sg.HyperRect([-0.02], [0.02]),
        periodic=np.array([False, False]),
        matrices=([[1.0, 0.3], [0.0, 0.9]], [[0.02], [0.1]], [[1.0], [0.0]]),
    )
    grid = sg.UniformGrid(sys.domain, [9, 7])
    inputs = sg.InputGrid(sys.input_set, (2,))
    model = sg.build_abstraction(sys, grid, inputs, "exact_linear")
    op = sg.ExactLinearReach(sys)
    for q in range(grid.n_cells):
        for v in range(len(inputs)):
            r = op.reach(grid.cell_bounds(q), inputs[v])
            expected = {
                qq
                for qq in range(grid.n_cells)
                if grid.cell_bounds(qq).intersects(r)
            }
            if not sys.domain.contains_rect(r):
                expected.add(OVERFLOW)
            assert set(model.successors(q, v)) == expected, (q, v)


def test_alternating_simulation_samples(di_model):
    # one-step soundness: the step image of any point in a cell quantizes
    # into the successor set of that cell
    sys, grid = di_model.sys, di_model.grid
    rng = np.random.default_rng(11)
    X = sys.domain.sample(rng, 5000)
    qs = grid.quantize_many(X)
    for v in range(di_model.n_inputs):
        W = sys.disturbance_set.sample(rng, X.shape[0])
        Y = sys.step_many(X, di_model.inputs[v], W)
        qn = grid.quantize_many(Y)
        for q, q2 in zip(qs, qn):
            assert di_model.successor_block(int(q), v).contains_cell(grid, int(q2))


def test_rebuild_is_bit_stable(di_model):
    m2 = sg.build_abstraction(
        di_model.sys, di_model.grid, di_model.inputs, "exact_linear"
    )
    assert np.array_equal(m2.reach_lo, di_model.reach_lo)
    assert np.array_equal(m2.reach_hi, di_model.reach_hi)
    assert np.array_equal(m2.blk_lo, di_model.blk_lo)
    assert np.array_equal(m2.blk_hi, di_model.blk_hi)
    assert np.array_equal(m2.overflow, di_model.overflow)


def test_save_load_roundtrip(tmp_path, identity_model):
    p = tmp_path / "model.npz"
    identity_model.save(p)
    back = sg.SymbolicModel.load(p)
    assert back.grid == identity_model.grid
    assert back.reach_kind == identity_model.reach_kind
    assert np.array_equal(back.reach_lo, identity_model.reach_lo)
    assert np.array_equal(back.blk_hi, identity_model.blk_hi)
    assert np.array_equal(back.overflow, identity_model.overflow)
    assert np.array_equal(back.initial, identity_model.initial)


def test_save_load_roundtrip_di(tmp_path, di_model):
    p = tmp_path / "di.npz"
    di_model.save(p)
    back = sg.SymbolicModel.load(p)
    for name in ("reach_lo", "reach_hi", "blk_lo", "blk_hi", "overflow", "empty"):
        assert np.array_equal(getattr(back, name), getattr(di_model, name)), name


def test_initial_region():
    sys = make_affine_1d(a=1.0)
    grid = sg.UniformGrid(sys.domain, [10])
    inputs = sg.InputGrid(sys.input_set, (1,))
    model = sg.build_abstraction(
        sys, grid, inputs, "exact_linear",
        initial_region=sg.HyperRect([0.2], [0.5]),
    )
    assert set(np.flatnonzero(model.initial)) == {2, 3, 4}


def test_grid_mismatch_rejected(di_system):
    wrong = sg.UniformGrid(sg.HyperRect([0.0, -5.0], [6.0, 5.0]), [10, 10])
    with pytest.raises(ValueError, match="domain"):
        sg.build_abstraction(
            di_system, wrong, sg.InputGrid(di_system.input_set, (3,)), "exact_linear"
        )
