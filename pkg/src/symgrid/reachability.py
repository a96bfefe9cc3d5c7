"""One-step reach set over-approximation operators.

Every operator maps (cell box, input vector) to a closed box containing
f(cell, u, D), the image of the whole cell under every disturbance in D.
``declared_delta`` states how far beyond the true image the box may reach:
0 for the exact interval hull of an affine map, unknown (None) for the
growth-bound operator.
"""

from __future__ import annotations

import numpy as np

from .geometry import HyperRect
from .systems import SystemSpec


class ExactLinearReach:
    """Exact interval hull of an affine image (tightness delta = 0).

    For x' = A x + B u + E d with box-valued x and d, the image's interval
    hull is center +- half-width with center mapped through the dynamics
    and half-widths through the absolute-value matrices. Each output face
    is attained by a corner of cell x D, which is what makes the margin
    sharpness results exercisable on affine plants.
    """

    kind = "exact_linear"
    declared_delta = 0.0

    def __init__(self, sys: SystemSpec):
        self.sys = sys
        self.A, self.B, self.E = sys.affine()
        self._absA = np.abs(self.A)
        self._absE = np.abs(self.E)
        self._d_center = sys.disturbance_set.center
        self._d_half = sys.disturbance_set.half_width

    def reach_many(self, cell_lo: np.ndarray, cell_hi: np.ndarray, u: np.ndarray):
        """Batched boxes: cell_lo/cell_hi (..., n) -> (lo, hi) same shape."""
        c = 0.5 * (cell_lo + cell_hi)
        r = 0.5 * (cell_hi - cell_lo)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        center = c @ self.A.T + self.B @ u + self.E @ self._d_center
        half = r @ self._absA.T + self._absE @ self._d_half
        return center - half, center + half

    def reach(self, cell: HyperRect, u) -> HyperRect:
        lo, hi = self.reach_many(cell.lo[None, :], cell.hi[None, :], u)
        return HyperRect(lo[0], hi[0])

    def extremal_args(self, u, dim: int, side: str):
        """Cell-corner selector and disturbance corner attaining a box face.

        Returns (pick_hi, d_corner): pick_hi[j] tells whether the cell's
        upper bound in state dimension j extremizes output ``dim`` on the
        requested side ("lo" minimizes, "hi" maximizes).
        """
        if side not in ("lo", "hi"):
            raise ValueError("side must be 'lo' or 'hi'")
        a = self.A[dim]
        e = self.E[dim]
        want_max = side == "hi"
        pick_hi = (a > 0) if want_max else (a < 0)
        D = self.sys.disturbance_set
        d_corner = np.where((e > 0) == want_max, D.hi, D.lo)
        return pick_hi, d_corner


class GrowthBoundReach:
    """Growth-bound box around the center image (tightness unknown).

    The box is f(c, u, d_center) +- (L r + b) where c, r are the cell
    center and half-width and (L, b) come from componentwise Jacobian
    bounds of the dynamics over the whole domain. Sound by construction,
    not exact, so its declared delta is unknown and sharpness claims do
    not apply.
    """

    kind = "growth_bound"
    declared_delta = None

    def __init__(self, sys: SystemSpec):
        self.sys = sys
        sys.growth_matrices(sys.input_set.center)  # fail fast if unsupported
        self._d_center = sys.disturbance_set.center

    def reach_many(self, cell_lo: np.ndarray, cell_hi: np.ndarray, u: np.ndarray):
        c = 0.5 * (cell_lo + cell_hi)
        r = 0.5 * (cell_hi - cell_lo)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        L, b = self.sys.growth_matrices(u)
        center = self.sys.step_many(c, u, np.broadcast_to(self._d_center, c.shape[:-1] + (self.sys.q,)))
        half = r @ L.T + b
        return center - half, center + half

    def reach(self, cell: HyperRect, u) -> HyperRect:
        lo, hi = self.reach_many(cell.lo[None, :], cell.hi[None, :], u)
        return HyperRect(lo[0], hi[0])


def make_reach_operator(kind: str, sys: SystemSpec):
    if kind == "exact_linear":
        return ExactLinearReach(sys)
    if kind == "growth_bound":
        return GrowthBoundReach(sys)
    raise ValueError(f"unknown reach operator kind {kind!r}")


def reach_exact_linear(sys: SystemSpec, cell: HyperRect, u) -> HyperRect:
    """Functional form; errors out for dynamics that are not affine."""
    return ExactLinearReach(sys).reach(cell, u)


def reach_growth_bound(sys: SystemSpec, cell: HyperRect, u) -> HyperRect:
    """Functional form; errors out when no growth matrices exist."""
    return GrowthBoundReach(sys).reach(cell, u)
