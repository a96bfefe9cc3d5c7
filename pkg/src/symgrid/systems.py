"""Discrete-time control systems, input discretization, perturbation budgets.

Two concrete plants are built in: a sampled double integrator (affine in
state, input and disturbance) and a unicycle-type mobile robot whose
heading lives on a periodic axis. Dynamics are pure functions; batched
variants evaluate whole arrays of states at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .geometry import HyperRect

DYNAMICS_KINDS = ("double_integrator", "unicycle", "affine")


@dataclass(frozen=True)
class SystemSpec:
    """A named discrete-time plant x' = f(x, u, d) with its domains.

    ``domain`` is the working region of the state space, ``input_set`` and
    ``disturbance_set`` the admissible input/disturbance boxes, ``tau`` the
    sampling period, ``periodic`` the per-state-dimension wraparound flags.
    Kind "affine" takes explicit ``matrices`` (A, B, E) with
    x' = A x + B u + E d; it mostly serves small synthetic plants.
    """

    kind: str
    tau: float
    domain: HyperRect
    input_set: HyperRect
    disturbance_set: HyperRect
    periodic: np.ndarray
    matrices: tuple | None = None

    def __post_init__(self):
        if self.kind not in DYNAMICS_KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if self.tau <= 0:
            raise ValueError("sampling period must be positive")
        per = np.atleast_1d(np.asarray(self.periodic, dtype=bool))
        if per.shape != (self.domain.dim,):
            raise ValueError("periodic must give one flag per state dimension")
        object.__setattr__(self, "periodic", per)
        if self.kind == "double_integrator":
            ok = self.n == 2 and self.p == 1 and self.q == 2
        elif self.kind == "unicycle":
            ok = self.n == 3 and self.p == 2 and self.q == 3
        else:
            if self.matrices is None:
                raise ValueError("affine dynamics need matrices (A, B, E)")
            A, B, E = (np.asarray(m, dtype=float) for m in self.matrices)
            object.__setattr__(self, "matrices", (A, B, E))
            ok = (
                A.shape == (self.n, self.n)
                and B.shape == (self.n, self.p)
                and E.shape == (self.n, self.q)
            )
        if not ok:
            raise ValueError(f"dimension mismatch for {self.kind!r}")

    @property
    def n(self) -> int:
        return self.domain.dim

    @property
    def p(self) -> int:
        return self.input_set.dim

    @property
    def q(self) -> int:
        return self.disturbance_set.dim

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Wrap periodic state coordinates into [lo, lo + width)."""
        x = np.asarray(x, dtype=float).copy()
        for d in np.flatnonzero(self.periodic):
            lo = self.domain.lo[d]
            w = self.domain.width[d]
            x[..., d] = lo + np.mod(x[..., d] - lo, w)
        return x

    def step(self, x, u, d) -> np.ndarray:
        """One step of the dynamics; periodic coordinates come back wrapped."""
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        d = np.asarray(d, dtype=float)
        if x.shape[-1] != self.n or u.shape != (self.p,) or d.shape[-1] != self.q:
            raise ValueError("dimension mismatch in step")
        return self._step_impl(x, u, d)

    def step_many(self, X: np.ndarray, u: np.ndarray, D: np.ndarray) -> np.ndarray:
        """Batched step: X (..., n), one input vector u, D (..., q)."""
        return self.step(X, u, D)

    def _step_impl(self, x, u, d):
        tau = self.tau
        if self.kind == "double_integrator":
            out = np.stack(
                [
                    x[..., 0]
                    + tau * x[..., 1]
                    + 0.5 * tau * tau * (u[0] + d[..., 0]),
                    x[..., 1] + tau * (u[0] + d[..., 1]),
                ],
                axis=-1,
            )
        elif self.kind == "unicycle":
            out = np.stack(
                [
                    x[..., 0] + tau * (u[0] * np.cos(x[..., 2]) + d[..., 0]),
                    x[..., 1] + tau * (u[0] * np.sin(x[..., 2]) + d[..., 1]),
                    x[..., 2] + tau * (u[1] + d[..., 2]),
                ],
                axis=-1,
            )
        else:
            A, B, E = self.matrices
            out = x @ A.T + B @ u + d @ E.T
        if self.periodic.any():
            out = self.wrap(out)
        return out

    # -- structure hooks used by the reachability operators -------------------

    def affine(self):
        """(A, B, E) with x' = A x + B u + E d, or raise for nonlinear kinds."""
        if self.kind == "affine":
            return self.matrices
        if self.kind != "double_integrator":
            raise ValueError(f"{self.kind!r} dynamics are not affine")
        tau = self.tau
        A = np.array([[1.0, tau], [0.0, 1.0]])
        B = np.array([[0.5 * tau * tau], [tau]])
        E = np.array([[0.5 * tau * tau, 0.0], [0.0, tau]])
        return A, B, E

    def growth_matrices(self, u: np.ndarray):
        """(L, b): |f(x,u,d) - f(c,u,d_c)| <= L |x - c| + b componentwise.

        Bounds hold over the whole domain. For the unicycle the heading
        coupling is bounded by tau * u1 (|cos|, |sin| <= 1) and b collects
        the disturbance half-width contribution.
        """
        if self.kind != "unicycle":
            raise ValueError(f"no growth matrices available for {self.kind!r}")
        tau = self.tau
        u = np.atleast_1d(np.asarray(u, dtype=float))
        L = np.array(
            [
                [1.0, 0.0, tau * abs(u[0])],
                [0.0, 1.0, tau * abs(u[0])],
                [0.0, 0.0, 1.0],
            ]
        )
        b = tau * self.disturbance_set.half_width
        return L, b


def double_integrator(
    tau: float = 0.5,
    domain: HyperRect | None = None,
    input_set: HyperRect | None = None,
    disturbance_set: HyperRect | None = None,
) -> SystemSpec:
    """Sampled double integrator: position and velocity under bounded thrust."""
    return SystemSpec(
        kind="double_integrator",
        tau=tau,
        domain=domain or HyperRect([0.0, -6.0], [6.0, 6.0]),
        input_set=input_set or HyperRect([-1.0], [1.0]),
        disturbance_set=disturbance_set or HyperRect([-0.01, -0.01], [0.01, 0.01]),
        periodic=np.array([False, False]),
    )


def unicycle(
    tau: float = 1.0,
    domain: HyperRect | None = None,
    input_set: HyperRect | None = None,
    disturbance_set: HyperRect | None = None,
) -> SystemSpec:
    """Unicycle robot: planar position plus heading on [-pi, pi)."""
    return SystemSpec(
        kind="unicycle",
        tau=tau,
        domain=domain or HyperRect([0.0, 0.0, -np.pi], [10.0, 10.0, np.pi]),
        input_set=input_set or HyperRect([0.25, -1.0], [1.0, 1.0]),
        disturbance_set=disturbance_set
        or HyperRect([-0.05, -0.05, -0.05], [0.05, 0.05, 0.05]),
        periodic=np.array([False, False, True]),
    )


def make_system(kind: str, tau: float, domain, input_set, disturbance_set, periodic) -> SystemSpec:
    return SystemSpec(
        kind=kind,
        tau=tau,
        domain=domain,
        input_set=input_set,
        disturbance_set=disturbance_set,
        periodic=np.asarray(periodic, dtype=bool),
    )


def step(sys: SystemSpec, x, u, d) -> np.ndarray:
    """Functional form of :meth:`SystemSpec.step`."""
    return sys.step(x, u, d)


def perturbed_step(sys: SystemSpec, x, u, d, p, bound: float | None = None) -> np.ndarray:
    """step(x, u, d) + p, with an optional budget check on ||p||_inf.

    The relative slack on the check absorbs float noise only; a genuinely
    oversized perturbation raises.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (sys.n,):
        raise ValueError("perturbation dimension mismatch")
    if bound is not None:
        if np.max(np.abs(p)) > bound * (1 + 1e-12) + 1e-300:
            raise ValueError("perturbation budget violated")
    return sys.wrap(sys.step(x, u, d) + p)


@dataclass(frozen=True)
class InputGrid:
    """Finite input set: uniform values per input dimension, endpoints included.

    A count of 1 collapses that dimension to the midpoint of its interval.
    Vectors are enumerated row-major, matching flat input indices.
    """

    box: HyperRect
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) != self.box.dim:
            raise ValueError("need one input count per input dimension")
        if any(c < 1 for c in counts):
            raise ValueError("input counts must be positive")
        object.__setattr__(self, "counts", counts)

    @property
    def vectors(self) -> np.ndarray:
        """All input vectors, shape (M, p)."""
        axes = []
        for d, c in enumerate(self.counts):
            lo, hi = self.box.lo[d], self.box.hi[d]
            if c == 1:
                axes.append(np.array([0.5 * (lo + hi)]))
            else:
                axes.append(np.linspace(lo, hi, c))
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def __len__(self) -> int:
        return int(np.prod(self.counts))

    def __getitem__(self, i: int) -> np.ndarray:
        return self.vectors[i]


@dataclass(frozen=True)
class PerturbationMap:
    """Per-step perturbation budget tied to the margin table.

    Modes: ``none`` (no perturbation), ``scaled`` (rho * margin, rho < 1,
    stays below every admissible budget), ``uniform`` (a constant bound),
    and ``adversarial`` (rho_bar * margin with rho_bar > 1, deliberately
    past the admissible budget).
    """

    mode: str
    rho: float = 0.0
    constant: float = 0.0
    table: Any = None  # MarginTable when mode needs it

    def __post_init__(self):
        if self.mode not in ("none", "scaled", "uniform", "adversarial"):
            raise ValueError(f"unknown perturbation mode {self.mode!r}")
        if self.mode == "scaled" and not (0.0 <= self.rho < 1.0):
            raise ValueError("scaled mode needs rho in [0, 1)")
        if self.mode == "adversarial" and not self.rho > 1.0:
            raise ValueError("adversarial mode needs rho > 1")
        if self.mode in ("scaled", "adversarial") and self.table is None:
            raise ValueError(f"{self.mode} mode needs a margin table")
        if self.mode == "uniform" and self.constant < 0:
            raise ValueError("uniform bound must be nonnegative")

    def bound(self, q: int, v: int) -> float:
        if self.mode == "none":
            return 0.0
        if self.mode == "uniform":
            return self.constant
        return self.rho * float(self.table.values[q, v])

    def describe(self) -> dict:
        d = {"mode": self.mode}
        if self.mode in ("scaled", "adversarial"):
            d["rho"] = self.rho
        if self.mode == "uniform":
            d["constant"] = self.constant
        return d
