"""Finite symbolic models of control systems over uniform grids.

The abstract transition relation follows the closure-intersection rule:
cell q' is a successor of (q, v) when the closed reach box of q under v
touches the closed box of q'. Successor sets are stored as rectangular
index blocks (one interval per dimension), never as explicit lists, so a
multi-million-pair model stays within a few hundred megabytes. The
overflow symbol has every state as successor; that set is virtual and
only expanded on demand.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .geometry import (
    OVERFLOW,
    CellBlock,
    HyperRect,
    UniformGrid,
    _normalize_ranges,
    _raw_ranges,
)
from .systems import InputGrid, SystemSpec, make_system
from .reachability import make_reach_operator

FORMAT_VERSION = 1


@dataclass
class SymbolicModel:
    """Finite transition system with cached reach boxes.

    Arrays are indexed [input, cell]: ``reach_lo``/``reach_hi`` hold the
    closed reach boxes, ``blk_lo``/``blk_hi`` the successor index blocks,
    ``exits_lo``/``exits_hi`` the per-side domain exits, ``overflow`` the
    pairs that can reach the outside symbol and ``empty`` the pairs whose
    reach box lies entirely outside the domain.
    """

    sys: SystemSpec
    grid: UniformGrid
    inputs: InputGrid
    reach_kind: str
    declared_delta: float | None
    reach_lo: np.ndarray
    reach_hi: np.ndarray
    blk_lo: np.ndarray
    blk_hi: np.ndarray
    exits_lo: np.ndarray
    exits_hi: np.ndarray
    overflow: np.ndarray
    empty: np.ndarray
    initial: np.ndarray

    @property
    def n_states(self) -> int:
        return self.grid.n_cells

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    def reach_box(self, q: int, v: int) -> HyperRect:
        """Cached closed reach box of pair (q, v)."""
        if q == OVERFLOW:
            raise ValueError("overflow state has no reach box")
        return HyperRect(self.reach_lo[v, q], self.reach_hi[v, q])

    def successor_block(self, q: int, v: int) -> CellBlock:
        """Successor set of (q, v) as a cell block. q0 maps to everything."""
        if q == OVERFLOW:
            return CellBlock(
                lo_idx=np.zeros(self.grid.dim, dtype=np.int64),
                hi_idx=self.grid.counts - 1,
                exits_lo=np.ones(self.grid.dim, dtype=bool),
                exits_hi=np.ones(self.grid.dim, dtype=bool),
                overflow=True,
                empty=False,
            )
        return CellBlock(
            lo_idx=self.blk_lo[v, q].astype(np.int64),
            hi_idx=self.blk_hi[v, q].astype(np.int64),
            exits_lo=self.exits_lo[v, q],
            exits_hi=self.exits_hi[v, q],
            overflow=bool(self.overflow[v, q]),
            empty=bool(self.empty[v, q]),
        )

    def successors(self, q: int, v: int) -> np.ndarray:
        """Flat ids of all successors; OVERFLOW appears as -1 when present."""
        block = self.successor_block(q, v)
        cells = block.cells(self.grid)
        if block.overflow:
            return np.concatenate([[OVERFLOW], cells])
        return cells

    def enabled_inputs(self, q: int) -> np.ndarray:
        """Input indices with a nonempty successor set at q.

        Under the closure construction every input of every state is
        enabled (q0 included); controlled sub-models restrict this.
        """
        return np.arange(self.n_inputs)

    def transition_count(self) -> int:
        """Total number of transitions, q0's virtual fan-out excluded."""
        spans = (self.blk_hi.astype(np.int64) - self.blk_lo + 1).prod(axis=-1)
        spans = np.where(self.empty, 0, spans)
        return int(spans.sum() + self.overflow.sum())

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Write the model to a single .npz: JSON header plus raw arrays."""
        header = {
            "format_version": FORMAT_VERSION,
            "system": {
                "kind": self.sys.kind,
                "tau": self.sys.tau,
                "domain": [self.sys.domain.lo.tolist(), self.sys.domain.hi.tolist()],
                "input_set": [
                    self.sys.input_set.lo.tolist(),
                    self.sys.input_set.hi.tolist(),
                ],
                "disturbance_set": [
                    self.sys.disturbance_set.lo.tolist(),
                    self.sys.disturbance_set.hi.tolist(),
                ],
                "periodic": self.sys.periodic.tolist(),
            },
            "grid_counts": self.grid.counts.tolist(),
            "input_counts": list(self.inputs.counts),
            "reach_kind": self.reach_kind,
            "declared_delta": self.declared_delta,
        }
        np.savez_compressed(
            path,
            header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            reach_lo=self.reach_lo,
            reach_hi=self.reach_hi,
            blk_lo=self.blk_lo,
            blk_hi=self.blk_hi,
            exits_lo=np.packbits(self.exits_lo),
            exits_hi=np.packbits(self.exits_hi),
            overflow=np.packbits(self.overflow),
            empty=np.packbits(self.empty),
            initial=np.packbits(self.initial),
        )

    @classmethod
    def load(cls, path) -> "SymbolicModel":
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            if header["format_version"] != FORMAT_VERSION:
                raise ValueError("unsupported model file version")
            s = header["system"]
            sys = make_system(
                s["kind"],
                s["tau"],
                HyperRect(*s["domain"]),
                HyperRect(*s["input_set"]),
                HyperRect(*s["disturbance_set"]),
                s["periodic"],
            )
            grid = UniformGrid(sys.domain, header["grid_counts"], sys.periodic)
            inputs = InputGrid(sys.input_set, tuple(header["input_counts"]))
            M, N, n = len(inputs), grid.n_cells, grid.dim
            model = cls(
                sys=sys,
                grid=grid,
                inputs=inputs,
                reach_kind=header["reach_kind"],
                declared_delta=header["declared_delta"],
                reach_lo=z["reach_lo"],
                reach_hi=z["reach_hi"],
                blk_lo=z["blk_lo"],
                blk_hi=z["blk_hi"],
                exits_lo=np.unpackbits(z["exits_lo"], count=M * N * n)
                .astype(bool)
                .reshape(M, N, n),
                exits_hi=np.unpackbits(z["exits_hi"], count=M * N * n)
                .astype(bool)
                .reshape(M, N, n),
                overflow=np.unpackbits(z["overflow"], count=M * N)
                .astype(bool)
                .reshape(M, N),
                empty=np.unpackbits(z["empty"], count=M * N)
                .astype(bool)
                .reshape(M, N),
                initial=np.unpackbits(z["initial"], count=N).astype(bool),
            )
        return model


def build_abstraction(
    sys: SystemSpec,
    grid: UniformGrid,
    inputs: InputGrid,
    reach,
    initial_region: HyperRect | None = None,
) -> SymbolicModel:
    """Construct the symbolic model of ``sys`` on ``grid`` under ``inputs``.

    ``reach`` is a reach operator instance or a kind name. Reach boxes are
    evaluated on closed cell boxes, matching the closure-intersection
    transition rule. Construction is deterministic: results depend only on
    the arguments, never on scheduling.

    Initial abstract states default to every cell; with ``initial_region``
    they are the cells fully contained in that box.
    """
    if grid.domain != sys.domain or not np.array_equal(grid.periodic, sys.periodic):
        raise ValueError("grid domain must match the system domain")
    if not sys.input_set.contains_rect(inputs.box):
        raise ValueError("input grid must lie inside the system input set")
    if isinstance(reach, str):
        reach = make_reach_operator(reach, sys)

    N, M, n = grid.n_cells, len(inputs), grid.dim
    cell_lo, cell_hi = grid.all_cell_bounds()

    reach_lo = np.empty((M, N, n))
    reach_hi = np.empty((M, N, n))
    blk_lo = np.empty((M, N, n), dtype=np.int16)
    blk_hi = np.empty((M, N, n), dtype=np.int16)
    exits_lo = np.empty((M, N, n), dtype=bool)
    exits_hi = np.empty((M, N, n), dtype=bool)
    overflow = np.empty((M, N), dtype=bool)
    empty = np.empty((M, N), dtype=bool)

    if np.any(grid.counts >= np.iinfo(np.int16).max // 2):
        raise ValueError("cell counts too large for block index storage")

    for v in range(M):
        lo, hi = reach.reach_many(cell_lo, cell_hi, inputs[v])
        reach_lo[v] = lo
        reach_hi[v] = hi
        raw_lo, raw_hi = _raw_ranges(grid, lo, hi)
        lo_idx, hi_idx, ex_lo, ex_hi, emp = _normalize_ranges(grid, raw_lo, raw_hi)
        blk_lo[v] = lo_idx
        blk_hi[v] = hi_idx
        exits_lo[v] = ex_lo
        exits_hi[v] = ex_hi
        overflow[v] = ex_lo.any(axis=-1) | ex_hi.any(axis=-1)
        empty[v] = emp

    if initial_region is None:
        initial = np.ones(N, dtype=bool)
    else:
        tol = 1e-12
        initial = np.all(cell_lo >= initial_region.lo - tol, axis=-1) & np.all(
            cell_hi <= initial_region.hi + tol, axis=-1
        )

    return SymbolicModel(
        sys=sys,
        grid=grid,
        inputs=inputs,
        reach_kind=reach.kind,
        declared_delta=reach.declared_delta,
        reach_lo=reach_lo,
        reach_hi=reach_hi,
        blk_lo=blk_lo,
        blk_hi=blk_hi,
        exits_lo=exits_lo,
        exits_hi=exits_hi,
        overflow=overflow,
        empty=empty,
        initial=initial,
    )


def successors(model: SymbolicModel, q: int, v: int) -> np.ndarray:
    return model.successors(q, v)


def enabled_inputs(model: SymbolicModel, q: int) -> np.ndarray:
    return model.enabled_inputs(q)
