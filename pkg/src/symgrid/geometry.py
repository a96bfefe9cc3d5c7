"""Axis-aligned interval geometry, uniform grids, and inflation margins.

Boxes are closed on both sides. Grids carry a half-open cell convention
[a, b) with the top face of the domain assigned to the last cell, so the
point-to-cell map is total and single valued on the domain. A single
overflow symbol stands for the whole complement of the domain.

Face coincidences are decided on integer cell indices with a relative
snapping tolerance (``TIE_REL_TOL`` of one cell width). A box whose face
lies within that tolerance of a grid face is treated as touching it, so
closure-intersection tests never hinge on raw floating point comparisons.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Flat id of the overflow symbol (everything outside the grid domain).
OVERFLOW = -1

# Face snapping tolerance, relative to one cell width.
TIE_REL_TOL = 1e-9


class HyperRect:
    """Closed axis-aligned box [lo, hi] in R^n."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-D arrays of equal length")
        if np.any(hi < lo):
            raise ValueError(f"invalid box: hi < lo ({lo} .. {hi})")
        self.lo = lo
        self.hi = hi

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def contains_point(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_rect(self, other: "HyperRect", tol: float = 0.0) -> bool:
        return bool(
            np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol)
        )

    def intersects(self, other: "HyperRect") -> bool:
        """Closed-set intersection test; shared boundary points count."""
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def inflate(self, eps: float) -> "HyperRect":
        """Minkowski sum with the closed infinity-norm ball of radius eps."""
        if eps < 0:
            raise ValueError("inflation radius must be nonnegative")
        return HyperRect(self.lo - eps, self.hi + eps)

    def corners(self) -> np.ndarray:
        """All 2^n corner points, shape (2^n, n)."""
        pairs = [(self.lo[d], self.hi[d]) for d in range(self.dim)]
        return np.array(list(itertools.product(*pairs)), dtype=float)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n points drawn uniformly from the box, shape (n, dim)."""
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, HyperRect)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        parts = ", ".join(
            f"[{lo:.6g}, {hi:.6g}]" for lo, hi in zip(self.lo, self.hi)
        )
        return f"HyperRect({parts})"


def inflate(r: HyperRect, eps: float) -> HyperRect:
    """Functional form of :meth:`HyperRect.inflate`."""
    return r.inflate(eps)


@dataclass(frozen=True)
class CellBlock:
    """Rectangular set of grid cells, optionally including the overflow symbol.

    Per-dimension index intervals [lo_idx, hi_idx] are inclusive. On a
    periodic dimension the interval may run past counts-1; cell ids wrap
    modulo counts, and a fully covered turn is canonicalized to
    [0, counts-1]. ``exits_lo`` / ``exits_hi`` record the sides on which
    the generating box left the domain. ``empty`` marks blocks whose cell
    part is empty (the box lies entirely outside the domain in some
    non-periodic dimension).
    """

    lo_idx: np.ndarray
    hi_idx: np.ndarray
    exits_lo: np.ndarray
    exits_hi: np.ndarray
    overflow: bool
    empty: bool

    def spans(self) -> np.ndarray:
        return self.hi_idx - self.lo_idx + 1

    def n_cells(self, grid: "UniformGrid") -> int:
        if self.empty:
            return 0
        return int(np.prod(self.spans()))

    def cells(self, grid: "UniformGrid") -> np.ndarray:
        """Flat ids of all cells in the block (overflow not included)."""
        if self.empty:
            return np.empty(0, dtype=np.int64)
        ranges = [
            np.arange(self.lo_idx[d], self.hi_idx[d] + 1) % grid.counts[d]
            for d in range(grid.dim)
        ]
        grids = np.meshgrid(*ranges, indexing="ij")
        multi = np.stack([g.ravel() for g in grids], axis=-1)
        return grid.flat_index(multi)

    def to_set(self, grid: "UniformGrid") -> set:
        s = set(int(q) for q in self.cells(grid))
        if self.overflow:
            s.add(OVERFLOW)
        return s

    def contains_cell(self, grid: "UniformGrid", q: int) -> bool:
        if q == OVERFLOW:
            return self.overflow
        if self.empty:
            return False
        idx = grid.multi_index(q)
        for d in range(grid.dim):
            if grid.periodic[d]:
                if (idx[d] - self.lo_idx[d]) % grid.counts[d] > (
                    self.hi_idx[d] - self.lo_idx[d]
                ):
                    return False
            else:
                if not (self.lo_idx[d] <= idx[d] <= self.hi_idx[d]):
                    return False
        return True


class UniformGrid:
    """Uniform partition of a box domain into cells, plus one overflow symbol.

    Cells are half-open boxes [lo + i*h, lo + (i+1)*h) except that the top
    face of the domain belongs to the last cell. ``periodic`` flags mark
    wraparound dimensions (an angle, for instance); points on those axes
    are wrapped into the domain before quantization, and cell blocks may
    wrap around the seam.
    """

    __slots__ = ("domain", "counts", "periodic", "h", "_strides")

    def __init__(self, domain: HyperRect, counts, periodic=None):
        self.domain = domain
        counts = np.atleast_1d(np.asarray(counts, dtype=np.int64)).copy()
        if counts.shape != (domain.dim,):
            raise ValueError("counts must give one cell count per dimension")
        if np.any(counts < 1):
            raise ValueError("cell counts must be positive")
        if np.any(domain.width <= 0):
            raise ValueError("grid domain must have positive width")
        if periodic is None:
            periodic = np.zeros(domain.dim, dtype=bool)
        else:
            periodic = np.atleast_1d(np.asarray(periodic, dtype=bool)).copy()
            if periodic.shape != (domain.dim,):
                raise ValueError("periodic must give one flag per dimension")
        self.counts = counts
        self.periodic = periodic
        self.h = domain.width / counts
        # row-major strides for the flat-index bijection
        strides = np.ones(domain.dim, dtype=np.int64)
        for d in range(domain.dim - 2, -1, -1):
            strides[d] = strides[d + 1] * counts[d + 1]
        self._strides = strides

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.counts))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, UniformGrid)
            and self.domain == other.domain
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.periodic, other.periodic)
        )

    def __hash__(self):
        return hash(
            (self.domain, self.counts.tobytes(), self.periodic.tobytes())
        )

    def __repr__(self) -> str:
        return (
            f"UniformGrid({self.domain!r}, counts={self.counts.tolist()}, "
            f"periodic={self.periodic.tolist()})"
        )

    # -- index bijection ---------------------------------------------------

    def flat_index(self, multi) -> np.ndarray | int:
        """Row-major flat id(s) of multi-index array(s), shape (..., n)."""
        multi = np.asarray(multi, dtype=np.int64)
        flat = np.sum(multi * self._strides, axis=-1)
        if flat.ndim == 0:
            return int(flat)
        return flat

    def multi_index(self, q) -> np.ndarray:
        """Multi-index of flat id(s); inverse of :meth:`flat_index`."""
        q = np.asarray(q, dtype=np.int64)
        if np.any(q < 0) or np.any(q >= self.n_cells):
            raise ValueError("flat index out of range (overflow has no index)")
        out = (q[..., None] // self._strides) % self.counts
        return out

    # -- points ------------------------------------------------------------

    def wrap_point(self, x) -> np.ndarray:
        """Wrap periodic coordinates into [lo, lo + width)."""
        x = np.asarray(x, dtype=float).copy()
        for d in np.flatnonzero(self.periodic):
            lo = self.domain.lo[d]
            w = self.domain.width[d]
            x[..., d] = lo + np.mod(x[..., d] - lo, w)
        return x

    def quantize(self, x) -> int:
        """Cell containing x, or OVERFLOW for points outside the domain."""
        return int(self.quantize_many(np.asarray(x, dtype=float)[None, :])[0])

    def quantize_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorized quantizer; X has shape (..., n), result (...,)."""
        X = self.wrap_point(X)
        t = (X - self.domain.lo) / self.h
        idx = np.floor(t + TIE_REL_TOL).astype(np.int64)
        tol = TIE_REL_TOL * self.h
        outside = np.zeros(X.shape[:-1], dtype=bool)
        for d in range(self.dim):
            if self.periodic[d]:
                continue
            outside |= X[..., d] < self.domain.lo[d] - tol[d]
            outside |= X[..., d] > self.domain.hi[d] + tol[d]
        np.clip(idx, 0, self.counts - 1, out=idx)
        flat = self.flat_index(idx)
        flat = np.where(outside, OVERFLOW, flat)
        return flat

    def cell_bounds(self, q: int) -> HyperRect:
        """Closed box of cell q. The overflow symbol has no box."""
        if q == OVERFLOW:
            raise ValueError("overflow state has no box")
        idx = self.multi_index(q)
        lo = self.domain.lo + idx * self.h
        return HyperRect(lo, lo + self.h)

    def cell_bounds_many(self, qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays for flat ids qs, each shaped (..., n)."""
        idx = self.multi_index(qs)
        lo = self.domain.lo + idx * self.h
        return lo, lo + self.h

    def cell_center(self, q: int) -> np.ndarray:
        b = self.cell_bounds(q)
        return b.center

    def all_cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays of every cell in flat order, shape (N, n)."""
        return self.cell_bounds_many(np.arange(self.n_cells))

    # -- blocks and margins --------------------------------------------------

    def covering_block(self, r: HyperRect) -> CellBlock:
        """All cells whose closed box intersects the closed box r.

        Boundary touching counts. The overflow flag is set exactly when r
        reaches the domain boundary or beyond in a non-periodic dimension
        (the closure of the outside region touches r). Periodic dimensions
        wrap instead of overflowing.
        """
        raw_lo, raw_hi = _raw_ranges(self, r.lo[None, :], r.hi[None, :])
        lo_idx, hi_idx, ex_lo, ex_hi, empty = _normalize_ranges(self, raw_lo, raw_hi)
        overflow = bool(ex_lo[0].any() or ex_hi[0].any())
        return CellBlock(
            lo_idx=lo_idx[0],
            hi_idx=hi_idx[0],
            exits_lo=ex_lo[0],
            exits_hi=ex_hi[0],
            overflow=overflow,
            empty=bool(empty[0]),
        )

    def block_margin(self, r: HyperRect, block: CellBlock) -> float:
        """Largest inflation of r that stays inside the block's region interior.

        The region is the union of the block's closed cells plus, when the
        overflow flag is set, the whole complement of the domain. Returns
        the supremum of eps >= 0 with inflate(r, eps) inside the region's
        interior, 0 when r itself is not strictly inside, and +inf when
        the region's complement is empty.

        For rectangular blocks this is the per-dimension minimum of the two
        gaps between r's faces and the block's outer faces; a side whose
        block face coincides with the domain face contributes +inf when the
        overflow region belongs to the block, and a fully covered periodic
        dimension contributes +inf gaps.
        """
        m = _block_margins(
            self,
            r.lo[None, :],
            r.hi[None, :],
            block.lo_idx[None, :],
            block.hi_idx[None, :],
            np.asarray([block.overflow]),
            np.asarray([block.empty]),
        )
        return float(m[0])


# -- shared low-level index machinery (also used batched by the abstraction) --


def _raw_ranges(grid: UniformGrid, lo: np.ndarray, hi: np.ndarray):
    """Unclipped index ranges of cells whose closures meet [lo, hi].

    lo, hi: (..., n) face coordinates. Index k covers [k, k+1] in units of
    t = (x - domain.lo) / h; the closed covering range is
    [ceil(t_lo) - 1, floor(t_hi)] with faces snapped to integers within
    TIE_REL_TOL, so a box touching a face captures the neighbor cell too.
    """
    t_lo = (lo - grid.domain.lo) / grid.h
    t_hi = (hi - grid.domain.lo) / grid.h
    raw_lo = np.ceil(t_lo - TIE_REL_TOL).astype(np.int64) - 1
    raw_hi = np.floor(t_hi + TIE_REL_TOL).astype(np.int64)
    return raw_lo, raw_hi


def _normalize_ranges(grid: UniformGrid, raw_lo: np.ndarray, raw_hi: np.ndarray):
    """Clip/wrap raw ranges into stored form plus exit and empty flags.

    Periodic dimensions wrap: the stored interval starts in [0, counts) and
    may extend past counts-1; a span of counts or more becomes the whole
    turn [0, counts-1]. Non-periodic dimensions clip to the domain with
    per-side exit flags; a range entirely outside marks the block empty.
    """
    counts = grid.counts
    lo_idx = raw_lo.copy()
    hi_idx = raw_hi.copy()
    exits_lo = np.zeros(raw_lo.shape, dtype=bool)
    exits_hi = np.zeros(raw_hi.shape, dtype=bool)
    empty = np.zeros(raw_lo.shape[:-1], dtype=bool)
    for d in range(grid.dim):
        c = counts[d]
        if grid.periodic[d]:
            span = raw_hi[..., d] - raw_lo[..., d] + 1
            full = span >= c
            start = np.mod(raw_lo[..., d], c)
            lo_idx[..., d] = np.where(full, 0, start)
            hi_idx[..., d] = np.where(full, c - 1, start + span - 1)
        else:
            exits_lo[..., d] = raw_lo[..., d] < 0
            exits_hi[..., d] = raw_hi[..., d] > c - 1
            empty |= (raw_hi[..., d] < 0) | (raw_lo[..., d] > c - 1)
            lo_idx[..., d] = np.clip(raw_lo[..., d], 0, c - 1)
            hi_idx[..., d] = np.clip(raw_hi[..., d], 0, c - 1)
    return lo_idx, hi_idx, exits_lo, exits_hi, empty


def _block_margins(
    grid: UniformGrid,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    lo_idx: np.ndarray,
    hi_idx: np.ndarray,
    overflow: np.ndarray,
    empty: np.ndarray,
    per_dim_out: np.ndarray | None = None,
):
    """Batched inflation margins of boxes against rectangular blocks.

    Shapes: box_lo/box_hi/lo_idx/hi_idx (..., n); overflow/empty (...,).
    When ``per_dim_out`` is given (shape (..., n)) the per-dimension gap
    minima are written into it (reporting aid; +inf where unconstrained).

    An empty block with overflow reduces to the pure outside region, whose
    margin is the separation distance between the box and the domain.
    """
    t_lo = (box_lo - grid.domain.lo) / grid.h
    t_hi = (box_hi - grid.domain.lo) / grid.h
    margin = np.full(box_lo.shape[:-1], np.inf)
    for d in range(grid.dim):
        c = grid.counts[d]
        h = grid.h[d]
        if grid.periodic[d]:
            span = hi_idx[..., d] - lo_idx[..., d] + 1
            rel = np.mod(t_lo[..., d] - lo_idx[..., d], c)
            width = t_hi[..., d] - t_lo[..., d]
            gap_lo = rel * h
            gap_hi = (span - rel - width) * h
            full = span >= c
            gap_lo = np.where(full, np.inf, gap_lo)
            gap_hi = np.where(full, np.inf, gap_hi)
        else:
            gap_lo = (t_lo[..., d] - lo_idx[..., d]) * h
            gap_hi = (hi_idx[..., d] + 1 - t_hi[..., d]) * h
            # q0 in the block makes a side unbounded exactly when the block
            # face on that side is the domain face.
            gap_lo = np.where(overflow & (lo_idx[..., d] == 0), np.inf, gap_lo)
            gap_hi = np.where(overflow & (hi_idx[..., d] == c - 1), np.inf, gap_hi)
        both = np.minimum(gap_lo, gap_hi)
        if per_dim_out is not None:
            per_dim_out[..., d] = both
        margin = np.minimum(margin, both)

    if np.any(empty):
        # Cell part empty: the block is {q0} (when overflow) and the margin
        # is how far the box sits from the domain, else there is no region.
        sep = np.full(box_lo.shape[:-1], -np.inf)
        for d in range(grid.dim):
            if grid.periodic[d]:
                continue
            sep = np.maximum(sep, grid.domain.lo[d] - box_hi[..., d])
            sep = np.maximum(sep, box_lo[..., d] - grid.domain.hi[d])
        sep = np.where(overflow, sep, 0.0)
        margin = np.where(empty, sep, margin)
        if per_dim_out is not None:
            per_dim_out[empty] = np.inf

    return np.maximum(margin, 0.0)


# -- functional forms matching the operation names -----------------------------


def quantize(grid: UniformGrid, x) -> int:
    return grid.quantize(x)


def cell_bounds(grid: UniformGrid, q: int) -> HyperRect:
    return grid.cell_bounds(q)


def covering_block(grid: UniformGrid, r: HyperRect) -> CellBlock:
    return grid.covering_block(r)


def block_margin(grid: UniformGrid, r: HyperRect, block: CellBlock) -> float:
    return grid.block_margin(r, block)
