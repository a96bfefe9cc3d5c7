"""Geometry: quantization, covering blocks, and inflation margins.

Derived expectations are computed by independent oracles kept in this
file: a plain floor quantizer, a brute-force closed-box intersection scan
for covering blocks, and a binary search with an explicit inclusion test
for margins.
"""

import itertools

import numpy as np
import pytest

import symgrid as sg
from symgrid.geometry import OVERFLOW


# -- oracles -----------------------------------------------------------------


def floor_quantize(grid, x):
    """Independent quantizer: plain floor, top face to the last cell."""
    idx = []
    for d in range(grid.dim):
        t = (x[d] - grid.domain.lo[d]) / grid.h[d]
        i = int(np.floor(t))
        if i == grid.counts[d]:
            i -= 1
        idx.append(i)
    return grid.flat_index(idx)


def brute_force_cover(grid, r):
    """All cells whose closed box meets the closed box r, by full scan."""
    out = set()
    for q in range(grid.n_cells):
        if grid.cell_bounds(q).intersects(r):
            out.add(q)
    return out


def margin_binary_search(r, region, eps_hi=10.0, iters=60):
    """Largest inflation of r strictly inside a closed box region."""

    def strictly_inside(eps):
        infl = r.inflate(eps)
        return bool(np.all(infl.lo > region.lo) and np.all(infl.hi < region.hi))

    if not strictly_inside(0.0):
        return 0.0
    lo, hi = 0.0, eps_hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if strictly_inside(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- HyperRect ------------------------------------------------------------------


def test_hyperrect_validation():
    with pytest.raises(ValueError):
        sg.HyperRect([0.0, 1.0], [1.0, 0.5])
    r = sg.HyperRect([0.0], [0.0])  # degenerate boxes are fine
    assert r.width[0] == 0.0


def test_inflate_examples():
    r = sg.HyperRect([0.0, 0.0], [1.0, 1.0])
    assert r.inflate(0.5) == sg.HyperRect([-0.5, -0.5], [1.5, 1.5])
    assert r.inflate(0.0) == r
    r2 = sg.HyperRect([2.6, -0.1], [2.7, 0.1]).inflate(0.05)
    assert np.allclose(r2.lo, [2.55, -0.15]) and np.allclose(r2.hi, [2.75, 0.15])
    with pytest.raises(ValueError):
        r.inflate(-0.1)


def test_corners():
    r = sg.HyperRect([0.0, 2.0], [1.0, 3.0])
    got = {tuple(c) for c in r.corners()}
    assert got == {(0, 2), (0, 3), (1, 2), (1, 3)}


# -- quantizer --------------------------------------------------------------------


def test_quantize_examples(di_grid):
    assert tuple(di_grid.multi_index(di_grid.quantize([0.0, -6.0]))) == (0, 0)
    # top face of the domain belongs to the last cell
    assert tuple(di_grid.multi_index(di_grid.quantize([6.0, 6.0]))) == (79, 159)
    q = di_grid.quantize([2.2, 3.2])
    assert tuple(di_grid.multi_index(q)) == (29, 122)
    assert q == floor_quantize(di_grid, [2.2, 3.2])


def test_quantize_outside(di_grid):
    assert di_grid.quantize([6.1, 0.0]) == OVERFLOW
    assert di_grid.quantize([-0.001, 0.0]) == OVERFLOW
    assert di_grid.quantize([3.0, 6.5]) == OVERFLOW


def test_quantize_matches_floor_oracle(di_grid):
    rng = np.random.default_rng(0)
    X = di_grid.domain.sample(rng, 2000)
    got = di_grid.quantize_many(X)
    for x, q in zip(X, got):
        assert q == floor_quantize(di_grid, x)


def test_quantize_periodic_wraps():
    grid = sg.UniformGrid(
        sg.HyperRect([-np.pi], [np.pi]), [30], periodic=[True]
    )
    q1 = grid.quantize([0.3])
    assert grid.quantize([0.3 + 2 * np.pi]) == q1
    assert grid.quantize([0.3 - 4 * np.pi]) == q1
    # never overflow on a fully periodic axis
    assert grid.quantize([100.0]) != OVERFLOW


def test_partition_property(di_grid):
    rng = np.random.default_rng(1)
    X = di_grid.domain.sample(rng, 500)
    for x in X:
        b = di_grid.cell_bounds(di_grid.quantize(x))
        assert b.contains_point(x, tol=1e-12)


def test_halfopen_cells_disjoint():
    grid = sg.UniformGrid(sg.HyperRect([0.0, 0.0], [1.0, 1.0]), [4, 4])
    # sample points land in exactly one cell under the half-open convention
    rng = np.random.default_rng(2)
    for x in grid.domain.sample(rng, 300):
        hits = 0
        for q in range(grid.n_cells):
            b = grid.cell_bounds(q)
            if np.all(x >= b.lo) and np.all(
                (x < b.hi) | (b.hi == grid.domain.hi)
            ):
                hits += 1
        assert hits == 1


# -- cell bounds -------------------------------------------------------------------


def test_cell_bounds_examples(di_grid):
    g1 = sg.UniformGrid(sg.HyperRect([0.0], [1.0]), [10])
    assert g1.cell_bounds(0) == sg.HyperRect([0.0], [0.1])
    q = di_grid.flat_index([29, 122])
    b = di_grid.cell_bounds(q)
    assert np.allclose(b.lo, [2.175, 3.15])
    assert np.allclose(b.hi, [2.25, 3.225])
    gp = sg.UniformGrid(sg.HyperRect([-np.pi], [np.pi]), [30], periodic=[True])
    b0 = gp.cell_bounds(0)
    assert np.allclose(b0.lo, [-np.pi]) and np.allclose(b0.hi, [-np.pi + 2 * np.pi / 30])


def test_cell_bounds_overflow_errors(di_grid):
    with pytest.raises(ValueError, match="overflow"):
        di_grid.cell_bounds(OVERFLOW)


# -- covering blocks ----------------------------------------------------------------


def test_covering_block_closure_rule():
    grid = sg.UniformGrid(sg.HyperRect([0.0], [1.0]), [10])
    blk = grid.covering_block(sg.HyperRect([0.10], [0.14]))
    assert blk.to_set(grid) == {0, 1}  # touching the 0.1 face includes cell 0
    blk = grid.covering_block(sg.HyperRect([0.11], [0.14]))
    assert blk.to_set(grid) == {1}
    blk = grid.covering_block(sg.HyperRect([0.95], [1.05]))
    assert blk.to_set(grid) == {9, OVERFLOW}
    assert blk.overflow


def test_covering_block_matches_brute_force():
    rng = np.random.default_rng(3)
    grid = sg.UniformGrid(sg.HyperRect([0.0, -1.0], [2.0, 1.0]), [20, 10])
    for _ in range(200):
        lo = rng.uniform([-0.2, -1.2], [2.0, 1.0])
        hi = lo + rng.uniform(0, 0.5, size=2)
        r = sg.HyperRect(lo, hi)
        blk = grid.covering_block(r)
        assert blk.to_set(grid) - {OVERFLOW} == brute_force_cover(grid, r)
        exits = not grid.domain.contains_rect(r)
        assert blk.overflow == exits


def test_covering_block_periodic_wrap():
    grid = sg.UniformGrid(sg.HyperRect([-np.pi], [np.pi]), [30], periodic=[True])
    h = 2 * np.pi / 30
    # box straddling the seam wraps, no overflow
    r = sg.HyperRect([np.pi - 0.6 * h], [np.pi + 1.2 * h])
    blk = grid.covering_block(r)
    assert not blk.overflow
    cells = set(int(c) for c in blk.cells(grid))
    assert cells == {29, 0, 1}
    # a box longer than the circle covers everything
    r_full = sg.HyperRect([0.0], [2 * np.pi + 0.1])
    assert grid.covering_block(r_full).n_cells(grid) == 30


# -- block margins -----------------------------------------------------------------


def test_block_margin_1d_examples():
    grid = sg.UniformGrid(sg.HyperRect([0.0], [1.0]), [10])
    r = sg.HyperRect([0.11], [0.14])
    blk = grid.covering_block(r)
    assert grid.block_margin(r, blk) == pytest.approx(0.01, abs=1e-12)
    r_touch = sg.HyperRect([0.10], [0.14])
    blk1 = sg.covering_block(grid, sg.HyperRect([0.11], [0.14]))
    assert grid.block_margin(r_touch, blk1) == 0.0


def test_block_margin_2d_binary_search_oracle():
    grid = sg.UniformGrid(sg.HyperRect([0.0, 0.0], [1.0, 1.0]), [10, 10])
    r = sg.HyperRect([0.11, 0.32], [0.14, 0.33])
    blk = grid.covering_block(r)
    assert blk.to_set(grid) == {grid.flat_index([1, 3])}
    region = sg.HyperRect([0.1, 0.3], [0.2, 0.4])
    expect = margin_binary_search(r, region)
    assert expect == pytest.approx(0.01, abs=1e-9)
    assert grid.block_margin(r, blk) == pytest.approx(expect, abs=1e-9)


def test_block_margin_random_vs_oracle():
    rng = np.random.default_rng(4)
    grid = sg.UniformGrid(sg.HyperRect([0.0, 0.0], [1.0, 1.0]), [10, 10])
    for _ in range(100):
        lo = rng.uniform(0.05, 0.8, size=2)
        hi = lo + rng.uniform(0.001, 0.15, size=2)
        r = sg.HyperRect(lo, hi)
        blk = grid.covering_block(r)
        if blk.overflow:
            continue
        region = sg.HyperRect(
            grid.domain.lo + blk.lo_idx * grid.h,
            grid.domain.lo + (blk.hi_idx + 1) * grid.h,
        )
        expect = margin_binary_search(r, region)
        assert grid.block_margin(r, blk) == pytest.approx(expect, abs=1e-9)


def test_block_margin_self_cover_positive():
    # geometric margin positivity: a box is strictly inside its own cover
    rng = np.random.default_rng(5)
    grid = sg.UniformGrid(sg.HyperRect([0.0, 0.0], [1.0, 1.0]), [13, 7])
    for _ in range(300):
        lo = rng.uniform(0.1, 0.8, size=2)
        hi = lo + rng.uniform(0, 0.15, size=2)
        r = sg.HyperRect(lo, hi)
        assert grid.block_margin(r, grid.covering_block(r)) > 0


def test_block_margin_monotone_in_block():
    grid = sg.UniformGrid(sg.HyperRect([0.0], [1.0]), [10])
    r = sg.HyperRect([0.31], [0.37])
    small = grid.covering_block(r)
    bigger = sg.CellBlock(
        lo_idx=small.lo_idx - 1,
        hi_idx=small.hi_idx + 1,
        exits_lo=small.exits_lo,
        exits_hi=small.exits_hi,
        overflow=False,
        empty=False,
    )
    assert grid.block_margin(r, small) <= grid.block_margin(r, bigger)


def test_block_margin_consistency_at_threshold():
    # inflating by 0.99 margin stays coverable by the same block,
    # inflating by 1.01 margin does not
    rng = np.random.default_rng(6)
    grid = sg.UniformGrid(sg.HyperRect([0.0, 0.0], [1.0, 1.0]), [10, 10])
    checked = 0
    for _ in range(200):
        lo = rng.uniform(0.15, 0.7, size=2)
        hi = lo + rng.uniform(0.0, 0.12, size=2)
        r = sg.HyperRect(lo, hi)
        blk = grid.covering_block(r)
        if blk.overflow:
            continue
        m = grid.block_margin(r, blk)
        assert m > 0
        inner = grid.covering_block(r.inflate(0.99 * m))
        assert inner.to_set(grid) <= blk.to_set(grid)
        outer = grid.covering_block(r.inflate(1.01 * m))
        assert not (outer.to_set(grid) <= blk.to_set(grid))
        checked += 1
    assert checked > 100


def test_block_margin_unbounded_cases():
    grid = sg.UniformGrid(sg.HyperRect([0.0], [1.0]), [10])
    r = sg.HyperRect([0.45], [0.55])
    whole = sg.CellBlock(
        lo_idx=np.array([0]),
        hi_idx=np.array([9]),
        exits_lo=np.array([True]),
        exits_hi=np.array([True]),
        overflow=True,
        empty=False,
    )
    assert grid.block_margin(r, whole) == np.inf
    # overflow on one side only: that side is unconstrained
    blk = sg.CellBlock(
        lo_idx=np.array([3]),
        hi_idx=np.array([9]),
        exits_lo=np.array([False]),
        exits_hi=np.array([True]),
        overflow=True,
        empty=False,
    )
    assert grid.block_margin(r, blk) == pytest.approx(0.45 - 0.3, abs=1e-12)


def test_block_margin_periodic_full_turn():
    grid = sg.UniformGrid(sg.HyperRect([-np.pi], [np.pi]), [30], periodic=[True])
    r = sg.HyperRect([0.0], [7.0])  # longer than the circle
    blk = grid.covering_block(r)
    assert grid.block_margin(r, blk) == np.inf


def test_flat_multi_index_bijection(di_grid):
    rng = np.random.default_rng(7)
    qs = rng.integers(0, di_grid.n_cells, size=200)
    multi = di_grid.multi_index(qs)
    back = di_grid.flat_index(multi)
    assert np.array_equal(back, qs)
