"""Controller synthesis on symbolic models and refinement to the plant.

Safety uses the greatest fixed point (keep a pair only while its whole
successor block stays in the candidate set, with the outside symbol
always losing). Sequential objectives go through a deterministic finite
automaton over region labels and a least fixed point on the product of
cells and automaton states; the resulting policy is memoryful, indexed by
the automaton state.

Block containment checks run on summed-area tables of the winning set, so
each sweep touches every pair once regardless of block sizes. Sweeps are
set-monotone, hence order-independent and deterministic.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .geometry import OVERFLOW, TIE_REL_TOL, HyperRect, UniformGrid
from .abstraction import SymbolicModel


# -- controllers ---------------------------------------------------------------


@dataclass
class Controller:
    """Set-valued feedback on abstract states: q -> set of input indices."""

    grid: UniformGrid
    enabled: np.ndarray  # (N, M) bool

    @property
    def domain_mask(self) -> np.ndarray:
        return self.enabled.any(axis=1)

    @property
    def domain_size(self) -> int:
        return int(self.domain_mask.sum())

    def enabled_inputs(self, q: int) -> np.ndarray:
        if q == OVERFLOW:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.enabled[q])

    def to_csv(self, path) -> None:
        multi = self.grid.multi_index(np.arange(self.enabled.shape[0]))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"q{d}" for d in range(self.grid.dim)] + ["enabled"])
            for q in np.flatnonzero(self.domain_mask):
                vs = "|".join(str(v) for v in np.flatnonzero(self.enabled[q]))
                w.writerow([int(i) for i in multi[q]] + [vs])

    @classmethod
    def from_csv(cls, grid: UniformGrid, n_inputs: int, path) -> "Controller":
        enabled = np.zeros((grid.n_cells, n_inputs), dtype=bool)
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for row in r:
                q = grid.flat_index([int(x) for x in row[: grid.dim]])
                for v in row[grid.dim].split("|"):
                    enabled[q, int(v)] = True
        return cls(grid=grid, enabled=enabled)


@dataclass
class DeterministicController:
    """Single-input feedback on abstract states; -1 marks cells outside."""

    grid: UniformGrid
    chosen: np.ndarray  # (N,) int

    @property
    def domain_mask(self) -> np.ndarray:
        return self.chosen >= 0

    def input_index(self, q: int) -> int | None:
        if q == OVERFLOW or self.chosen[q] < 0:
            return None
        return int(self.chosen[q])

    def to_csv(self, path) -> None:
        multi = self.grid.multi_index(np.arange(self.chosen.size))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"q{d}" for d in range(self.grid.dim)] + ["chosen"])
            for q in np.flatnonzero(self.chosen >= 0):
                w.writerow([int(i) for i in multi[q]] + [int(self.chosen[q])])

    @classmethod
    def from_csv(cls, grid: UniformGrid, path) -> "DeterministicController":
        chosen = np.full(grid.n_cells, -1, dtype=np.int32)
        with open(path, newline="") as f:
            r = csv.reader(f)
            next(r)
            for row in r:
                q = grid.flat_index([int(x) for x in row[: grid.dim]])
                chosen[q] = int(row[grid.dim])
        return cls(grid=grid, chosen=chosen)


class ControlledModel:
    """A symbolic model restricted to a controller's enabled inputs."""

    def __init__(self, model: SymbolicModel, controller: Controller):
        self.model = model
        self.controller = controller

    def enabled_inputs(self, q: int) -> np.ndarray:
        return self.controller.enabled_inputs(q)

    def successors(self, q: int, v: int) -> np.ndarray:
        if q != OVERFLOW and not self.controller.enabled[q, v]:
            raise ValueError(f"input {v} not enabled at state {q}")
        return self.model.successors(q, v)


# -- summed-area machinery for block containment -------------------------------


def _field_table(grid: UniformGrid, field: np.ndarray) -> np.ndarray:
    """Zero-padded summed-area table of a boolean cell field.

    Periodic axes are tiled twice so wrapped blocks read as contiguous
    ranges.
    """
    F = field.reshape(tuple(grid.counts)).astype(np.int64)
    for d in np.flatnonzero(grid.periodic):
        F = np.concatenate([F, F], axis=d)
    for ax in range(F.ndim):
        F = F.cumsum(axis=ax)
    return np.pad(F, [(1, 0)] * F.ndim)


def _blocks_all_true(
    grid: UniformGrid, table: np.ndarray, lo_idx: np.ndarray, hi_idx: np.ndarray
) -> np.ndarray:
    """For each block (rows of lo_idx/hi_idx), is the field true on it all?

    Index intervals follow the stored block convention (periodic entries
    may run past counts-1 into the tiled copy).
    """
    n = grid.dim
    lo = lo_idx.astype(np.int64)
    hi = hi_idx.astype(np.int64)
    total = np.zeros(lo.shape[0], dtype=np.int64)
    for picks in itertools.product((0, 1), repeat=n):
        sign = 1
        coords = []
        for d, pick in enumerate(picks):
            if pick:
                coords.append(hi[:, d] + 1)
            else:
                coords.append(lo[:, d])
                sign = -sign
        total += sign * table[tuple(coords)]
    volume = (hi - lo + 1).prod(axis=1)
    return total == volume


# -- safety ---------------------------------------------------------------------


def cell_mask_inside(grid: UniformGrid, region: HyperRect) -> np.ndarray:
    """Cells fully contained in a closed region (face-aligned cells count)."""
    lo, hi = grid.all_cell_bounds()
    tol = TIE_REL_TOL * grid.h
    return np.all(lo >= region.lo - tol, axis=1) & np.all(
        hi <= region.hi + tol, axis=1
    )


def maximal_safety_controller(model: SymbolicModel, safe) -> Controller:
    """Greatest fixed point of the safety game on the abstraction.

    ``safe`` is a cell mask or a box (cells fully inside count as safe).
    A pair (q, v) survives while its whole successor block stays in the
    current candidate set; reaching the outside symbol loses. States with
    no surviving input are removed until stable. The result is maximal:
    every controller enforcing the same invariant is pointwise contained
    in it.
    """
    grid = model.grid
    if isinstance(safe, HyperRect):
        safe_mask = cell_mask_inside(grid, safe)
    else:
        safe_mask = np.asarray(safe, dtype=bool).copy()
    N, M = model.n_states, model.n_inputs
    W = safe_mask.copy()
    valid = np.zeros((N, M), dtype=bool)
    while True:
        table = _field_table(grid, W)
        for v in range(M):
            inside = _blocks_all_true(grid, table, model.blk_lo[v], model.blk_hi[v])
            valid[:, v] = inside & ~model.overflow[v] & ~model.empty[v]
        valid &= W[:, None]
        alive = valid.any(axis=1)
        if np.array_equal(alive, W):
            break
        W = alive
    return Controller(grid=grid, enabled=valid)


# -- labeled regions and automata ------------------------------------------------


def label_cells(grid: UniformGrid, rules) -> np.ndarray:
    """Assign one label id per cell from an ordered rule list.

    ``rules`` is a sequence of (label_id, region, mode); mode "touch"
    labels every cell whose closed box meets the closed region (the
    conservative choice for regions that must be avoided), mode "inside"
    only cells fully contained (the sound choice for regions that must be
    reached). First matching rule wins; unmatched cells get label 0.
    """
    lo, hi = grid.all_cell_bounds()
    tol = TIE_REL_TOL * grid.h
    labels = np.zeros(grid.n_cells, dtype=np.int16)
    assigned = np.zeros(grid.n_cells, dtype=bool)
    for label_id, region, mode in rules:
        if mode == "touch":
            hit = np.all(lo <= region.hi + tol, axis=1) & np.all(
                hi >= region.lo - tol, axis=1
            )
        elif mode == "inside":
            hit = np.all(lo >= region.lo - tol, axis=1) & np.all(
                hi <= region.hi + tol, axis=1
            )
        else:
            raise ValueError(f"unknown labeling mode {mode!r}")
        hit &= ~assigned
        labels[hit] = label_id
        assigned |= hit
    return labels


@dataclass(frozen=True)
class SpecDFA:
    """Deterministic automaton over region labels, total on its alphabet.

    Accepting states are absorbing (satisfaction by finite prefix); the
    rejecting sink is absorbing as well.
    """

    table: np.ndarray  # (S, L) int
    initial: int
    accepting: frozenset
    rejecting: frozenset
    label_names: tuple

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.int16)
        object.__setattr__(self, "table", t)
        S, L = t.shape
        if L != len(self.label_names):
            raise ValueError("one column per label name required")
        if np.any(t < 0) or np.any(t >= S):
            raise ValueError("transition table is not total")
        for s in self.accepting | self.rejecting:
            if not np.all(t[s] == s):
                raise ValueError("accepting and rejecting states must be absorbing")

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    def step(self, s: int, label_id: int) -> int:
        return int(self.table[s, label_id])

    def run(self, label_ids) -> int:
        s = self.initial
        for lab in label_ids:
            s = self.step(s, int(lab))
        return s


# Label ids for the sequential-reach template below.
LBL_OTHER, LBL_OPT_A, LBL_OPT_B, LBL_GOAL, LBL_AVOID = range(5)


def sequential_reach_dfa() -> SpecDFA:
    """Visit exactly one of two option regions, then the goal, never the hazard.

    Visiting the goal before any option is a no-op; visiting the second
    option after the first (before the goal) rejects, as does the hazard
    anywhere before acceptance.
    """
    S0, SA, SB, ACC, REJ = range(5)
    table = np.array(
        [
            #  other  opt_a  opt_b  goal  avoid
            [S0, SA, SB, S0, REJ],
            [SA, SA, REJ, ACC, REJ],
            [SB, REJ, SB, ACC, REJ],
            [ACC, ACC, ACC, ACC, ACC],
            [REJ, REJ, REJ, REJ, REJ],
        ],
        dtype=np.int16,
    )
    return SpecDFA(
        table=table,
        initial=S0,
        accepting=frozenset({ACC}),
        rejecting=frozenset({REJ}),
        label_names=("other", "opt_a", "opt_b", "goal", "avoid"),
    )


def region_labeling(grid: UniformGrid, regions: dict) -> np.ndarray:
    """Cell labels for the sequential-reach template.

    ``regions`` maps the keys opt_a, opt_b, goal, avoid to boxes. The
    hazard labels by touch and takes priority; reach regions label by full
    containment.
    """
    rules = [
        (LBL_AVOID, regions["avoid"], "touch"),
        (LBL_OPT_A, regions["opt_a"], "inside"),
        (LBL_OPT_B, regions["opt_b"], "inside"),
        (LBL_GOAL, regions["goal"], "inside"),
    ]
    return label_cells(grid, rules)


# -- product game -----------------------------------------------------------------


@dataclass
class ProductPolicy:
    """Winning set and memoryful input choice on cells x automaton states.

    ``choice[q, s]`` is the input recorded when (q, s) entered the winning
    set, which makes every closed-loop play make progress toward
    acceptance; -1 marks losing pairs.
    """

    grid: UniformGrid
    dfa: SpecDFA
    labels: np.ndarray  # (N,) label ids
    winning: np.ndarray  # (N, S) bool
    choice: np.ndarray  # (N, S) int16

    def after_label(self, s: int, q: int) -> int:
        return self.dfa.step(s, int(self.labels[q]))

    def initial_product_state(self, q: int) -> int:
        """Automaton state after reading the label of the start cell."""
        return self.after_label(self.dfa.initial, q)

    def is_winning(self, q: int, s: int) -> bool:
        return bool(self.winning[q, s])

    def input_index(self, q: int, s: int) -> int | None:
        if q == OVERFLOW:
            return None
        v = int(self.choice[q, s])
        return v if v >= 0 else None

    def controller_for(self, s: int) -> Controller:
        """Projection to one automaton state as a set-valued controller."""
        N = self.winning.shape[0]
        M = int(self.choice.max()) + 1 if self.choice.max() >= 0 else 1
        enabled = np.zeros((N, M), dtype=bool)
        rows = np.flatnonzero(self.choice[:, s] >= 0)
        enabled[rows, self.choice[rows, s]] = True
        return Controller(grid=self.grid, enabled=enabled)

    def to_csv(self, path) -> None:
        multi = self.grid.multi_index(np.arange(self.winning.shape[0]))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"q{d}" for d in range(self.grid.dim)] + ["dfa_state", "chosen"])
            qs, ss = np.nonzero(self.choice >= 0)
            for q, s in zip(qs, ss):
                w.writerow(
                    [int(i) for i in multi[q]] + [int(s), int(self.choice[q, s])]
                )


def cosafe_controller(
    model: SymbolicModel, dfa: SpecDFA, labels: np.ndarray
) -> ProductPolicy:
    """Least fixed point of reachability-to-acceptance on the product game.

    A pair (q, s) wins when some input keeps the whole successor block
    inside the winning set under the label-updated automaton state, with
    the outside symbol and the rejecting sink losing. The input recorded
    at first insertion is kept, so the policy always makes progress.
    """
    grid = model.grid
    N, M, S = model.n_states, model.n_inputs, dfa.n_states
    labels = np.asarray(labels)
    winning = np.zeros((N, S), dtype=bool)
    for s in dfa.accepting:
        winning[:, s] = True
    choice = np.full((N, S), -1, dtype=np.int16)
    # successor automaton state per (s, cell): reading the cell's label
    next_state = dfa.table[:, labels]  # (S, N)
    live = [s for s in range(S) if s not in dfa.accepting and s not in dfa.rejecting]
    cell_ids = np.arange(N)
    while True:
        changed = False
        for s in live:
            target = winning[cell_ids, next_state[s]]
            table = _field_table(grid, target)
            pending = ~winning[:, s]
            if not pending.any():
                continue
            for v in range(M):
                ok = (
                    _blocks_all_true(grid, table, model.blk_lo[v], model.blk_hi[v])
                    & pending
                    & ~model.overflow[v]
                    & ~model.empty[v]
                )
                if ok.any():
                    winning[ok, s] = True
                    choice[ok, s] = v
                    pending &= ~ok
                    changed = True
        if not changed:
            break
    return ProductPolicy(
        grid=grid, dfa=dfa, labels=labels, winning=winning, choice=choice
    )


# -- refinement and determinization ------------------------------------------------


@dataclass
class ConcreteController:
    """Feedback on plant states obtained by quantizing into an abstract one.

    For any perturbation strictly below the pairwise margin, closed-loop
    plant runs quantize to plays of the controlled abstraction, so the
    abstract guarantee carries over to the plant.
    """

    grid: UniformGrid
    source: object  # Controller or DeterministicController

    def __call__(self, x) -> np.ndarray:
        q = self.grid.quantize(x)
        if q == OVERFLOW:
            return np.empty(0, dtype=np.int64)
        if isinstance(self.source, DeterministicController):
            v = self.source.input_index(q)
            return np.empty(0, dtype=np.int64) if v is None else np.array([v])
        return self.source.enabled_inputs(q)

    def input_index(self, x) -> int | None:
        vs = self(x)
        return int(vs[0]) if vs.size else None


def refine(controller, grid: UniformGrid) -> ConcreteController:
    """Compose an abstract controller with the quantizer."""
    return ConcreteController(grid=grid, source=controller)


def determinize_max_margin(controller: Controller, table) -> DeterministicController:
    """Pick, per state, the enabled input with the largest margin.

    Ties break toward the lowest input index, making the result
    deterministic and invariant under positive rescaling of the margins.
    """
    vals = np.where(controller.enabled, table.values, -np.inf)
    chosen = np.where(
        controller.domain_mask, np.argmax(vals, axis=1), -1
    ).astype(np.int32)
    return DeterministicController(grid=controller.grid, chosen=chosen)
