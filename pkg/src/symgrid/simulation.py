"""Closed-loop simulation, relation validation, and margin falsification.

Runs are reproducible: every random draw comes from a generator seeded by
(seed, run-index), and the logged disturbances and perturbations replay
to the same trajectory bit for bit.

The falsifier is constructive. For an exact reach operator every box face
is attained by a corner of cell x disturbance-set, so a state sitting at
that corner maps onto the binding face; pushing the image past the block
boundary by slightly more than the pair's margin lands in a cell that is
not a successor, which breaks the simulation relation. The closed-loop
attack reuses the same geometry step by step: cross when the budget
reaches past the nearest non-successor face, otherwise steer the state
onto the next extremizing corner.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .geometry import OVERFLOW
from .systems import PerturbationMap, SystemSpec
from .abstraction import SymbolicModel
from .margins import MarginTable
from .synthesis import Controller, DeterministicController, ProductPolicy
from .reachability import ExactLinearReach

COMPLETED = "completed"
LEFT_CONTROLLER = "left_controller_domain"
LEFT_DOMAIN = "left_X"


@dataclass(frozen=True)
class SimPolicy:
    """Disturbance choice, perturbation budget, horizon and seed of one run."""

    disturbance: str  # "zero" | "uniform_random" | "corner"
    perturbation: PerturbationMap
    horizon: int
    seed: int = 0

    def __post_init__(self):
        if self.disturbance not in ("zero", "uniform_random", "corner"):
            raise ValueError(f"unknown disturbance policy {self.disturbance!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


@dataclass
class Trajectory:
    """One closed-loop run: states, choices, draws, and how it ended."""

    states: np.ndarray  # (T+1, n)
    input_indices: np.ndarray  # (T,)
    inputs: np.ndarray  # (T, p)
    disturbances: np.ndarray  # (T, q)
    perturbations: np.ndarray  # (T, n)
    status: str
    stop_step: int | None
    seed: int
    policy: dict
    dfa_states: np.ndarray | None = None  # (T+1,), state after each quantized cell
    verdict: str | None = None
    consistent: np.ndarray | None = None  # per-step abstract consistency
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.input_indices.shape[0]

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        p = self.inputs.shape[1] if self.inputs.size else 1
        qd = self.disturbances.shape[1] if self.disturbances.size else 1
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            header = (
                ["step"]
                + [f"x{d}" for d in range(n)]
                + ["v"]
                + [f"u{d}" for d in range(p)]
                + [f"d{d}" for d in range(qd)]
                + [f"p{d}" for d in range(n)]
                + ["dfa_state", "status"]
            )
            w.writerow(header)
            T = len(self)
            for k in range(self.states.shape[0]):
                row = [k] + [repr(float(x)) for x in self.states[k]]
                if k < T:
                    row += [int(self.input_indices[k])]
                    row += [repr(float(u)) for u in self.inputs[k]]
                    row += [repr(float(d)) for d in self.disturbances[k]]
                    row += [repr(float(pp)) for pp in self.perturbations[k]]
                else:
                    row += [""] + [""] * (p + qd + n)
                has_dfa = self.dfa_states is not None and k < len(self.dfa_states)
                row += [
                    int(self.dfa_states[k]) if has_dfa else "",
                    self.status if k == self.states.shape[0] - 1 else "",
                ]
                w.writerow(row)


def _run_rng(seed: int, run_index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, run_index])


def _draw_disturbance(sys: SystemSpec, kind: str, rng) -> np.ndarray:
    D = sys.disturbance_set
    if kind == "zero":
        return np.zeros(sys.q)
    if kind == "uniform_random":
        return rng.uniform(D.lo, D.hi)
    # extreme corner, one independent side per dimension
    return np.where(rng.integers(0, 2, size=sys.q) == 1, D.hi, D.lo)


class _Selector:
    """Uniform lookup interface over the controller flavors."""

    def __init__(self, controller, table: MarginTable | None, dfa=None, labels=None):
        self.controller = controller
        self.table = table
        self.tracks_dfa = isinstance(controller, ProductPolicy)
        if self.tracks_dfa:
            self.dfa = controller.dfa
            self.labels = controller.labels
        else:
            self.dfa = dfa
            self.labels = labels

    def pick(self, q: int, s: int | None):
        if q == OVERFLOW:
            return None
        c = self.controller
        if isinstance(c, ProductPolicy):
            return c.input_index(q, s)
        if isinstance(c, DeterministicController):
            return c.input_index(q)
        if isinstance(c, Controller):
            vs = c.enabled_inputs(q)
            if vs.size == 0:
                return None
            if self.table is None:
                return int(vs[0])
            # argmax-determinize on the fly
            vals = self.table.values[q, vs]
            return int(vs[int(np.argmax(vals))])
        raise TypeError("unsupported controller type")


def simulate_closed_loop(
    sys: SystemSpec,
    model: SymbolicModel,
    controller,
    x0,
    policy: SimPolicy,
    table: MarginTable | None = None,
    run_index: int = 0,
) -> Trajectory:
    """Run the quantized feedback loop from x0 under a simulation policy.

    At every step the state is quantized, an input looked up (deterministic
    controller, product policy, or a set-valued controller determinized on
    the fly by largest margin), a disturbance drawn, a perturbation drawn
    within its declared budget, and the plant stepped. A run stops at the
    horizon, on leaving the controller domain, or on leaving the working
    domain; with a product policy the automaton verdict is recorded and a
    run stops as satisfied once it accepts.
    """
    x = np.asarray(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError("x0 dimension mismatch")
    pmap = policy.perturbation
    if pmap.mode in ("scaled", "adversarial") and table is None:
        table = pmap.table
    sel = _Selector(controller, table)
    rng = _run_rng(policy.seed, run_index)
    attack = None
    if pmap.mode == "adversarial":
        attack = _Attack(model, table, sel, pmap.rho)

    states = [x.copy()]
    vs, us, ds, ps, cons = [], [], [], [], []
    dfa_states = None
    s = None
    if sel.tracks_dfa:
        dfa_states = []
    status, stop_step, verdict = COMPLETED, None, None

    for k in range(policy.horizon):
        q = model.grid.quantize(x)
        if q == OVERFLOW:
            status, stop_step = LEFT_DOMAIN, k
            break
        if sel.tracks_dfa:
            s = (
                sel.controller.initial_product_state(q)
                if k == 0
                else sel.controller.after_label(s, q)
            )
            dfa_states.append(s)
            if s in sel.dfa.accepting:
                verdict = "accepting"
                break
            if s in sel.dfa.rejecting:
                verdict = "rejected"
                status, stop_step = LEFT_CONTROLLER, k
                break
        v = sel.pick(q, s)
        if v is None:
            status, stop_step = LEFT_CONTROLLER, k
            break
        u = model.inputs[v]
        d = _draw_disturbance(sys, policy.disturbance, rng)
        y = sys.step(x, u, d)
        bound = pmap.bound(q, v)
        if pmap.mode == "none":
            p = np.zeros(sys.n)
        elif pmap.mode == "adversarial":
            p = attack.perturbation(x, q, v, y, bound)
        else:
            p = rng.uniform(-bound, bound, size=sys.n)
        x = sys.wrap(y + p)
        q_next = model.grid.quantize(x)
        cons.append(
            model.successor_block(q, v).contains_cell(model.grid, int(q_next))
        )
        vs.append(v)
        us.append(np.asarray(u, dtype=float))
        ds.append(d)
        ps.append(p)
        states.append(x.copy())
    else:
        # horizon exhausted; classify the final state
        q = model.grid.quantize(x)
        if q == OVERFLOW:
            status, stop_step = LEFT_DOMAIN, policy.horizon
        if sel.tracks_dfa and q != OVERFLOW:
            s = sel.controller.after_label(s, q) if dfa_states else sel.controller.initial_product_state(q)
            dfa_states.append(s)
            verdict = "accepting" if s in sel.dfa.accepting else (
                "rejected" if s in sel.dfa.rejecting else "undecided"
            )

    T = len(vs)
    return Trajectory(
        states=np.asarray(states),
        input_indices=np.asarray(vs, dtype=np.int64),
        inputs=np.asarray(us) if us else np.empty((0, sys.p)),
        disturbances=np.asarray(ds) if ds else np.empty((0, sys.q)),
        perturbations=np.asarray(ps) if ps else np.empty((0, sys.n)),
        status=status,
        stop_step=stop_step,
        seed=policy.seed,
        policy={"disturbance": policy.disturbance, **pmap.describe(),
                "horizon": policy.horizon, "run_index": run_index},
        dfa_states=np.asarray(dfa_states, dtype=np.int64) if dfa_states is not None else None,
        verdict=verdict,
        consistent=np.asarray(cons, dtype=bool) if cons else np.empty(0, dtype=bool),
    )


# -- Monte-Carlo validation of the simulation relation ---------------------------


@dataclass
class AltSimReport:
    """Outcome of sampling the one-step simulation-relation condition."""

    samples: int
    violations: int
    rho: float
    seed: int
    witnesses: list

    @property
    def passed(self) -> bool:
        return self.violations == 0


def check_alt_simulation(
    model: SymbolicModel,
    sys: SystemSpec,
    table: MarginTable,
    rho: float,
    samples: int,
    seed: int = 0,
    batch: int = 200_000,
) -> AltSimReport:
    """Sample (x, v, d, p) with ||p|| <= rho * margin(Q(x), v) and check that
    the perturbed image quantizes into the successor block of (Q(x), v).

    With rho < 1 the margin guarantee makes every sample pass; counting
    violations therefore validates the implementation end to end.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    rng = np.random.default_rng([seed, 9151])
    grid = model.grid
    N = grid.n_cells
    M = model.n_inputs
    done = 0
    violations = 0
    witnesses = []
    uvecs = model.inputs.vectors
    while done < samples:
        m = min(batch, samples - done)
        X = sys.domain.sample(rng, m)
        qs = grid.quantize_many(X)
        inside = qs != OVERFLOW
        X, qs = X[inside], qs[inside]
        m_eff = X.shape[0]
        vs = rng.integers(0, M, size=m_eff)
        D = rng.uniform(
            sys.disturbance_set.lo, sys.disturbance_set.hi, size=(m_eff, sys.q)
        )
        bounds = rho * table.values[qs, vs]
        P = rng.uniform(-1.0, 1.0, size=(m_eff, sys.n)) * bounds[:, None]
        Y = np.empty((m_eff, sys.n))
        for v in range(M):
            rows = vs == v
            if rows.any():
                Y[rows] = sys.step_many(X[rows], uvecs[v], D[rows])
        Xp = sys.wrap(Y + P)
        qn = grid.quantize_many(Xp)
        ok = _in_successor_block(model, qs, vs, qn)
        bad = ~ok
        violations += int(bad.sum())
        if bad.any() and len(witnesses) < 10:
            for i in np.flatnonzero(bad)[: 10 - len(witnesses)]:
                witnesses.append(
                    {
                        "x": X[i].tolist(),
                        "v": int(vs[i]),
                        "d": D[i].tolist(),
                        "p": P[i].tolist(),
                        "landed": int(qn[i]),
                    }
                )
        done += m
    return AltSimReport(
        samples=samples, violations=violations, rho=rho, seed=seed, witnesses=witnesses
    )


def _in_successor_block(model, qs, vs, q_next) -> np.ndarray:
    """Vectorized membership of landed cells in successor blocks."""
    grid = model.grid
    lo = model.blk_lo[vs, qs].astype(np.int64)
    hi = model.blk_hi[vs, qs].astype(np.int64)
    ov = model.overflow[vs, qs]
    emp = model.empty[vs, qs]
    out = q_next == OVERFLOW
    ok = np.where(out, ov, True)
    in_cells = ~out
    if in_cells.any():
        idx = grid.multi_index(np.where(out, 0, q_next))
        member = np.ones(qs.shape[0], dtype=bool)
        for d in range(grid.dim):
            if grid.periodic[d]:
                member &= (idx[:, d] - lo[:, d]) % grid.counts[d] <= hi[:, d] - lo[:, d]
            else:
                member &= (lo[:, d] <= idx[:, d]) & (idx[:, d] <= hi[:, d])
        member &= ~emp
        ok = np.where(in_cells, member, ok)
    return ok


# -- constructive falsification ----------------------------------------------------


def _binding_face(model: SymbolicModel, table: MarginTable, q: int, v: int):
    """Dimension and side of the smallest finite gap of pair (q, v)."""
    box = model.reach_box(q, v)
    block = model.successor_block(q, v)
    grid = model.grid
    best = (None, None, np.inf)
    for d in range(grid.dim):
        c, h = grid.counts[d], grid.h[d]
        t_lo = (box.lo[d] - grid.domain.lo[d]) / h
        t_hi = (box.hi[d] - grid.domain.lo[d]) / h
        if grid.periodic[d]:
            span = block.hi_idx[d] - block.lo_idx[d] + 1
            if span >= c:
                continue
            rel = np.mod(t_lo - block.lo_idx[d], c)
            pairs = [("lo", rel * h), ("hi", (span - rel - (t_hi - t_lo)) * h)]
        else:
            g_lo = (t_lo - block.lo_idx[d]) * h
            g_hi = (block.hi_idx[d] + 1 - t_hi) * h
            if block.overflow and block.lo_idx[d] == 0:
                g_lo = np.inf
            if block.overflow and block.hi_idx[d] == c - 1:
                g_hi = np.inf
            pairs = [("lo", g_lo), ("hi", g_hi)]
        for side, g in pairs:
            if g < best[2]:
                best = (d, side, g)
    return best


def adversarial_escape_witness(
    model: SymbolicModel, table: MarginTable, q: int, v: int
):
    """A concrete one-step break of the simulation relation at pair (q, v).

    Requires an exact reach operator (declared delta 0) and a finite
    margin. Returns a dict with the state z in cell q, the extremizing
    disturbance corner, a perturbation of norm margin * (1 + 1e-6), and
    the landed non-successor cell; raises if the crossing cannot be
    verified by quantization.
    """
    if model.declared_delta != 0.0:
        raise ValueError("witness construction needs an exact reach operator")
    m = float(table.values[q, v])
    if not np.isfinite(m):
        raise ValueError("no finite escape direction")
    grid = model.grid
    reach = ExactLinearReach(model.sys)
    dim, side, gap = _binding_face(model, table, q, v)
    pick_hi, d_corner = reach.extremal_args(model.inputs[v], dim, side)
    cell = grid.cell_bounds(q)
    nudge = 1e-10 * grid.h
    z = np.where(pick_hi, cell.hi - nudge, cell.lo + nudge)
    y = model.sys.step(z, model.inputs[v], d_corner)
    p = np.zeros(grid.dim)
    p[dim] = -m * (1 + 1e-6) if side == "lo" else m * (1 + 1e-6)
    landed_x = model.sys.wrap(y + p)
    landed = grid.quantize(landed_x)
    block = model.successor_block(q, v)
    if block.contains_cell(grid, int(landed)):
        raise RuntimeError(
            f"witness construction failed for pair ({q}, {v}): "
            "perturbed image stayed in the successor block"
        )
    return {
        "q": int(q),
        "v": int(v),
        "margin": m,
        "dim": int(dim),
        "side": side,
        "z": z,
        "d": d_corner,
        "p": p,
        "image": y,
        "landed_state": landed_x,
        "landed_cell": int(landed),
    }


def falsify_beyond_margin(
    model: SymbolicModel,
    sys: SystemSpec,
    table: MarginTable,
    rho_bar: float,
    n_pairs: int,
    seed: int = 0,
) -> AltSimReport:
    """Directed sampling past the margin: witness construction at sampled pairs.

    Scales each witness perturbation to rho_bar times the pair margin and
    counts how many sampled pairs yield a verified violation (at least one
    must, by the sharpness of exact margins).
    """
    if rho_bar <= 1.0:
        raise ValueError("rho_bar must exceed 1")
    rng = np.random.default_rng([seed, 40427])
    finite = np.argwhere(np.isfinite(table.values))
    pick = rng.choice(finite.shape[0], size=min(n_pairs, finite.shape[0]), replace=False)
    violations = 0
    witnesses = []
    for row in finite[pick]:
        q, v = int(row[0]), int(row[1])
        try:
            w = adversarial_escape_witness(model, table, q, v)
        except RuntimeError:
            continue
        # rescale the crossing perturbation to the requested budget
        p = w["p"] * (rho_bar / (1 + 1e-6))
        landed = model.grid.quantize(sys.wrap(np.asarray(w["image"]) + p))
        if not model.successor_block(q, v).contains_cell(model.grid, int(landed)):
            violations += 1
            if len(witnesses) < 10:
                witnesses.append({"q": q, "v": v, "p": p.tolist()})
    return AltSimReport(
        samples=int(len(pick)),
        violations=violations,
        rho=rho_bar,
        seed=seed,
        witnesses=witnesses,
    )


# -- closed-loop adversarial attack -------------------------------------------------


def find_escape_start(
    model: SymbolicModel,
    table: MarginTable,
    controller: DeterministicController,
    rho_bar: float = 1.01,
):
    """A start state primed for a closed-loop escape past the margin.

    Scans controlled cells for one whose chosen input's binding face
    borders uncontrolled territory (or the outside), so that crossing it
    ends the run rather than merely breaking the relation. Returns a dict
    with the extremizing-corner start state, or None when no such cell
    exists. Candidates are ranked by the width of the crossing window
    relative to the disturbance-induced jitter on that axis, which makes
    randomized escapes likely rather than marginal.
    """
    if model.declared_delta != 0.0:
        raise ValueError("escape-start search needs an exact reach operator")
    grid = model.grid
    reach = ExactLinearReach(model.sys)
    _, _, E = model.sys.affine()
    jitter = np.abs(E) @ model.sys.disturbance_set.width
    dom = controller.domain_mask
    nudge = 1e-10 * grid.h
    best = None
    for q in np.flatnonzero(dom):
        v = controller.input_index(int(q))
        dim, side, gap = _binding_face(model, table, int(q), v)
        if not np.isfinite(gap):
            continue
        pick_hi, d_corner = reach.extremal_args(model.inputs[v], dim, side)
        cell = grid.cell_bounds(int(q))
        z = np.where(pick_hi, cell.hi - nudge, cell.lo + nudge)
        y = model.sys.step(z, model.inputs[v], d_corner)
        p = np.zeros(grid.dim)
        p[dim] = -gap * (1 + 1e-6) if side == "lo" else gap * (1 + 1e-6)
        landing = model.sys.wrap(y + p)
        qn = grid.quantize(landing)
        exits = qn == OVERFLOW or controller.input_index(int(qn)) is None
        if not exits:
            continue
        window = (rho_bar - 1.0) * gap / max(jitter[dim], 1e-300)
        if best is None or window > best["window"]:
            best = {
                "x0": z,
                "q": int(q),
                "v": int(v),
                "dim": int(dim),
                "side": side,
                "gap": float(gap),
                "window": float(window),
            }
    return best


class _Attack:
    """Step-wise perturbation chooser for budgets past the margin.

    Given the drawn image y of the current step, cross the nearest
    non-successor face outright when the budget reaches it; otherwise try
    to park the next state on the extremizing corner of a neighboring
    controlled cell so the following step can cross; otherwise push
    toward the nearest face.
    """

    def __init__(self, model: SymbolicModel, table: MarginTable, selector, rho_bar: float):
        if model.declared_delta != 0.0:
            raise ValueError("adversarial runs need an exact reach operator")
        self.model = model
        self.table = table
        self.sel = selector
        self.rho = rho_bar
        self.reach = ExactLinearReach(model.sys)

    def _face_distances(self, q: int, v: int, y: np.ndarray):
        """(distance, dim, side, face) of every finite block face from y."""
        model, grid = self.model, self.model.grid
        block = model.successor_block(q, v)
        out = []
        for d in range(grid.dim):
            c, h = grid.counts[d], grid.h[d]
            if grid.periodic[d]:
                span = block.hi_idx[d] - block.lo_idx[d] + 1
                if span >= c:
                    continue
                lo_face = grid.domain.lo[d] + block.lo_idx[d] * h
                hi_face = grid.domain.lo[d] + (block.hi_idx[d] + 1) * h
                w = grid.domain.width[d]
                dist_lo = np.mod(y[d] - lo_face, w)
                dist_hi = np.mod(hi_face - y[d], w)
                out.append((dist_lo, d, "lo", lo_face))
                out.append((dist_hi, d, "hi", hi_face))
            else:
                if not (block.overflow and block.lo_idx[d] == 0):
                    face = grid.domain.lo[d] + block.lo_idx[d] * h
                    out.append((y[d] - face, d, "lo", face))
                if not (block.overflow and block.hi_idx[d] == c - 1):
                    face = grid.domain.lo[d] + (block.hi_idx[d] + 1) * h
                    out.append((face - y[d], d, "hi", face))
        return out

    def _is_exit(self, point: np.ndarray) -> bool:
        """Does this point fall outside the controller's reach entirely?"""
        q = self.model.grid.quantize(point)
        return q == OVERFLOW or self.sel.pick(int(q), None) is None

    def _crossing(self, y, budget, dist, d, side) -> np.ndarray:
        grid = self.model.grid
        slack = min(0.5 * (budget - dist), 0.4 * grid.h[d])
        p = np.zeros(grid.dim)
        p[d] = -(dist + slack) if side == "lo" else dist + slack
        return p

    def perturbation(self, x, q, v, y, budget) -> np.ndarray:
        grid = self.model.grid
        n = grid.dim
        faces = self._face_distances(q, v, y)
        if not faces:
            return np.zeros(n)
        faces.sort(key=lambda t: (t[0], t[1], t[2]))
        crossable = [f for f in faces if f[0] <= budget * (1 - 1e-9)]
        # crossing that also leaves the controller domain ends the run
        for dist, d, side, _face in crossable:
            p = self._crossing(y, budget, dist, d, side)
            if self._is_exit(self.model.sys.wrap(y + p)):
                return p
        target = self._placement_target(y, budget)
        if target is not None:
            return target - y
        if crossable:
            # break the relation even if the landing stays controlled
            dist, d, side, _face = crossable[0]
            return self._crossing(y, budget, dist, d, side)
        # steer toward the nearest face bordering uncontrolled cells, if any
        for dist, d, side, _face in faces:
            probe = y.copy()
            probe[d] += -(dist + 0.5 * grid.h[d]) if side == "lo" else dist + 0.5 * grid.h[d]
            if self._is_exit(self.model.sys.wrap(probe)):
                p = np.zeros(n)
                p[d] = -budget if side == "lo" else budget
                return p
        dist, d, side, _face = faces[0]
        p = np.zeros(n)
        p[d] = -budget if side == "lo" else budget
        return p

    def _placement_target(self, y: np.ndarray, budget: float):
        """A reachable point parked on an extremizing corner, if any."""
        if self.sel.tracks_dfa:
            return None
        grid = self.model.grid
        n = grid.dim
        lo_i = np.ceil((y - budget - grid.domain.lo) / grid.h).astype(np.int64)
        hi_i = np.floor((y + budget - grid.domain.lo) / grid.h).astype(np.int64)
        ranges = [range(int(lo_i[d]), int(hi_i[d]) + 1) for d in range(n)]
        nudge = 1e-9 * grid.h
        fallback = None
        for corner_idx in itertools.product(*ranges):
            corner = grid.domain.lo + np.asarray(corner_idx) * grid.h
            # the 2^n cells sharing this corner
            for offs in itertools.product((0, -1), repeat=n):
                cell_idx = np.asarray(corner_idx) + np.asarray(offs)
                if np.any(cell_idx < 0) or np.any(cell_idx >= grid.counts):
                    continue
                qn = grid.flat_index(cell_idx)
                vn = self.sel.pick(int(qn), None)
                if vn is None:
                    continue
                dim, side, gap = _binding_face(self.model, self.table, int(qn), vn)
                if not np.isfinite(gap):
                    continue
                ibudget = self.rho * float(self.table.values[qn, vn])
                if ibudget <= gap:
                    continue
                pick_hi, _ = self.reach.extremal_args(self.model.inputs[vn], dim, side)
                cell = grid.cell_bounds(int(qn))
                z = np.where(pick_hi, cell.hi - nudge, cell.lo + nudge)
                if np.max(np.abs(z - corner)) > 2 * np.max(nudge) + 1e-12:
                    continue  # corner is not the extremizing one for this cell
                if np.max(np.abs(z - y)) > budget * (1 - 1e-9):
                    continue
                # where would next step's crossing land?
                box = self.model.reach_box(int(qn), vn)
                probe = box.center.copy()
                h = grid.h[dim]
                if side == "lo":
                    probe[dim] = box.lo[dim] - gap - 0.25 * h
                else:
                    probe[dim] = box.hi[dim] + gap + 0.25 * h
                if self._is_exit(self.model.sys.wrap(probe)):
                    return z
                if fallback is None:
                    fallback = z
        return fallback
