"""Inflation margins of symbolic models.

Every pair (cell, input) of a closure-built abstraction carries slack: the
cached reach box sits strictly inside the interior of its successor
region, so it can be inflated by a positive amount before any transition
would change. This module computes that largest admissible inflation per
pair, the global minimum over all pairs (a single budget valid
everywhere), and per-state fields for reporting.

Margins are evaluated on rectangular successor blocks (optionally with
the outside symbol); arbitrary unions of cells are rejected, since the
construction only ever queries successor sets and user-supplied
rectangular regions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .geometry import OVERFLOW, CellBlock, HyperRect, _block_margins
from .abstraction import SymbolicModel


class InconsistentAbstractionError(RuntimeError):
    """Raised when a margin comes out nonpositive, which the closure
    construction makes impossible for a sound abstraction."""


def eta(model: SymbolicModel, q: int, v: int, A) -> float:
    """Largest inflation of the (q, v) reach box staying inside region A.

    A may be a CellBlock or a collection of flat cell ids (OVERFLOW, -1,
    marks the outside symbol); id collections must form a rectangular
    block. Returns 0 when the reach box is not strictly inside the region,
    +inf when the region covers everything.
    """
    if q == OVERFLOW:
        raise ValueError("overflow state has no margin")
    if not isinstance(A, CellBlock):
        A = block_from_cells(model, A)
    return model.grid.block_margin(model.reach_box(q, v), A)


def block_from_cells(model: SymbolicModel, cells) -> CellBlock:
    """Canonicalize a collection of flat cell ids into a rectangular block.

    Raises when the set is not exactly a full index rectangle (wrapped
    periodic arrangements are not reconstructed from raw id sets).
    """
    ids = sorted(set(int(c) for c in cells))
    overflow = OVERFLOW in ids
    if overflow:
        ids.remove(OVERFLOW)
    grid = model.grid
    if not ids:
        return CellBlock(
            lo_idx=np.zeros(grid.dim, dtype=np.int64),
            hi_idx=np.full(grid.dim, -1, dtype=np.int64),
            exits_lo=np.zeros(grid.dim, dtype=bool),
            exits_hi=np.zeros(grid.dim, dtype=bool),
            overflow=overflow,
            empty=True,
        )
    multi = grid.multi_index(np.asarray(ids))
    lo = multi.min(axis=0)
    hi = multi.max(axis=0)
    if int(np.prod(hi - lo + 1)) != len(ids):
        raise ValueError("cell set is not a rectangular block")
    return CellBlock(
        lo_idx=lo,
        hi_idx=hi,
        exits_lo=np.zeros(grid.dim, dtype=bool),
        exits_hi=np.zeros(grid.dim, dtype=bool),
        overflow=overflow,
        empty=False,
    )


@dataclass
class MarginTable:
    """Margins of every (cell, input) pair of a model.

    ``values[q, v]`` is the largest admissible inflation of the cached
    reach box of (q, v) within its own successor region; +inf encodes an
    unconstrained pair. The minimum over the table is the uniform budget
    valid for every pair at once.
    """

    model: SymbolicModel
    values: np.ndarray  # (N, M), > 0 everywhere
    declared_delta: float | None

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.values.shape[1]

    def uniform(self) -> float:
        return float(self.values.min())

    def argmin_pair(self) -> tuple[int, int]:
        """(q, v) attaining the uniform margin; lowest flat index on ties."""
        flat = int(np.argmin(self.values))
        return flat // self.n_inputs, flat % self.n_inputs

    def interior_mask(self) -> np.ndarray:
        """(N, M) mask of pairs whose successor set stays inside the domain."""
        return ~self.model.overflow.T

    def summary(self, unsafe_regions: list[HyperRect] | None = None) -> dict:
        """Headline statistics, overall and per dimension.

        Per-dimension gaps with an unbounded side are replaced by the
        distance to the nearest configured unsafe region in that dimension
        when regions are given, and dropped otherwise.
        """
        vals = self.values
        finite = vals[np.isfinite(vals)]
        interior = vals[self.interior_mask()]
        gaps = self.per_dim_gaps(unsafe_regions)
        per_dim = []
        for d in range(self.model.grid.dim):
            g = gaps[..., d]
            g = g[np.isfinite(g)]
            per_dim.append(
                {
                    "min": float(g.min()) if g.size else None,
                    "max": float(g.max()) if g.size else None,
                    "mean": float(g.mean()) if g.size else None,
                }
            )
        return {
            "uniform_margin": self.uniform(),
            "argmin_pair": list(self.argmin_pair()),
            "n_pairs": int(vals.size),
            "min": float(finite.min()),
            "max": float(finite.max()),
            "mean": float(finite.mean()),
            "interior_min": float(interior.min()) if interior.size else None,
            "interior_max": float(interior.max()) if interior.size else None,
            "n_interior_pairs": int(interior.size),
            "per_dimension": per_dim,
        }

    def per_dim_gaps(
        self, unsafe_regions: list[HyperRect] | None = None
    ) -> np.ndarray:
        """Per-dimension gap minima, shape (N, M, n). Reporting aid.

        The pair margin is the minimum of this array over the last axis.
        Unbounded sides yield +inf; when ``unsafe_regions`` is given those
        entries are replaced by the axis distance from the reach box to the
        nearest region, a finite stand-in for "nothing nearby constrains
        this direction".
        """
        model = self.model
        M, N, n = model.reach_lo.shape
        out = np.empty((M, N, n))
        _block_margins(
            model.grid,
            model.reach_lo,
            model.reach_hi,
            model.blk_lo.astype(np.int64),
            model.blk_hi.astype(np.int64),
            model.overflow,
            model.empty,
            per_dim_out=out,
        )
        gaps = np.transpose(out, (1, 0, 2))
        if unsafe_regions:
            inf_mask = ~np.isfinite(gaps)
            if inf_mask.any():
                lo = np.transpose(model.reach_lo, (1, 0, 2))
                hi = np.transpose(model.reach_hi, (1, 0, 2))
                dist = np.full_like(gaps, np.inf)
                for reg in unsafe_regions:
                    d = np.maximum(reg.lo - hi, lo - reg.hi)
                    dist = np.minimum(dist, np.maximum(d, 0.0))
                gaps = np.where(inf_mask, dist, gaps)
        return gaps

    def to_csv(self, path) -> None:
        """Rows: cell multi-index, input index, margin value."""
        grid = self.model.grid
        multi = grid.multi_index(np.arange(self.n_states))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"q{d}" for d in range(grid.dim)] + ["v", "margin"])
            for q in range(self.n_states):
                row_prefix = [int(i) for i in multi[q]]
                for v in range(self.n_inputs):
                    w.writerow(row_prefix + [v, repr(float(self.values[q, v]))])

    def save_summary(self, path, unsafe_regions=None) -> None:
        with open(path, "w") as f:
            json.dump(self.summary(unsafe_regions), f, indent=2, sort_keys=True)
            f.write("\n")


def margin_table(model: SymbolicModel) -> MarginTable:
    """Margins of every pair (q, v) against its own successor block.

    Raises :class:`InconsistentAbstractionError` if any value fails to be
    strictly positive, which would mean the abstraction and its reach
    cache disagree.
    """
    vals = _block_margins(
        model.grid,
        model.reach_lo,
        model.reach_hi,
        model.blk_lo.astype(np.int64),
        model.blk_hi.astype(np.int64),
        model.overflow,
        model.empty,
    )
    vals = vals.T.copy()  # (N, M)
    if not np.all(vals > 0):
        bad = np.argwhere(vals <= 0)
        raise InconsistentAbstractionError(
            f"margin positivity violated at (q, v) = {tuple(bad[0])}; "
            "abstraction inconsistent"
        )
    return MarginTable(model=model, values=vals, declared_delta=model.declared_delta)


def uniform_margin(table: MarginTable) -> tuple[float, tuple[int, int]]:
    """Global minimum margin and the (q, v) pair attaining it."""
    return table.uniform(), table.argmin_pair()


def state_margin_field(table: MarginTable, controller) -> dict[int, float]:
    """Per controlled cell, the best margin over its enabled inputs.

    Cells without enabled inputs are absent. Unbounded pair margins are
    skipped in the maximization (they never witness a finite budget); a
    cell whose enabled inputs are all unbounded reports +inf.
    """
    field: dict[int, float] = {}
    enabled = controller.enabled
    for q in np.flatnonzero(enabled.any(axis=1)):
        vals = table.values[q, enabled[q]]
        finite = vals[np.isfinite(vals)]
        field[int(q)] = float(finite.max()) if finite.size else float("inf")
    return field
