"""Inequality constraint blocks (h(v) >= 0 rows) and the dynamics equality.

Every inequality block is owned by one agent: its multiplier entries live in
that agent's dual block and its transposed Jacobian enters only that agent's
stationarity rows.  Rows are stage-separable.  State-based blocks skip stage 0
(the initial state is data, not a decision variable), control-based blocks
cover every stage.

Row order inside a block is stage-major; within a stage the order is the
natural field order documented on each class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import GameConfigError


@dataclass(frozen=True)
class ControlBox:
    """Per-dimension control bounds; rows (u_d - lo_d, hi_d - u_d), finite only.

    Within a stage rows are ordered dimension-major, lower bound before upper.
    """

    owner: int
    low: tuple
    high: tuple
    kind: str = field(default="ControlBox", init=False)
    state_based: bool = field(default=False, init=False)

    def __post_init__(self):
        for lo, hi in zip(self.low, self.high):
            if lo > hi:
                raise GameConfigError(f"empty control box [{lo}, {hi}]")

    def _finite_rows(self):
        rows = []
        for d, (lo, hi) in enumerate(zip(self.low, self.high)):
            if np.isfinite(lo):
                rows.append((d, -1.0, lo))   # u_d - lo >= 0
            if np.isfinite(hi):
                rows.append((d, 1.0, hi))    # hi - u_d >= 0
        return rows

    @property
    def rows_per_stage(self):
        return len(self._finite_rows())

    def stage_range(self, T):
        return range(0, T)

    def n_rows(self, T):
        return self.rows_per_stage * T

    def values(self, xs, u_own):
        rows = self._finite_rows()
        S = len(u_own)
        out = np.empty((S, len(rows)))
        for k, (d, sign, bound) in enumerate(rows):
            out[:, k] = (u_own[:, d] - bound) if sign < 0 else (bound - u_own[:, d])
        return out.ravel()

    def jac_blocks(self, xs, u_own):
        rows = self._finite_rows()
        S = len(u_own)
        Ju = np.zeros((S, len(rows), u_own.shape[1]))
        for k, (d, sign, _) in enumerate(rows):
            Ju[:, k, d] = -sign
        return None, Ju

    def curvature(self, xs, lam):
        return None


@dataclass(frozen=True)
class VelocityBox:
    """Bounds on velocity state components, rows like ControlBox, stages 1..T-1."""

    owner: int
    low: tuple
    high: tuple
    vel_idx: tuple
    kind: str = field(default="VelocityBox", init=False)
    state_based: bool = field(default=True, init=False)

    def __post_init__(self):
        for lo, hi in zip(self.low, self.high):
            if lo > hi:
                raise GameConfigError(f"empty velocity box [{lo}, {hi}]")

    def _finite_rows(self):
        rows = []
        for d, (lo, hi) in enumerate(zip(self.low, self.high)):
            if np.isfinite(lo):
                rows.append((self.vel_idx[d], -1.0, lo))
            if np.isfinite(hi):
                rows.append((self.vel_idx[d], 1.0, hi))
        return rows

    @property
    def rows_per_stage(self):
        return len(self._finite_rows())

    def stage_range(self, T):
        return range(1, T)

    def n_rows(self, T):
        return self.rows_per_stage * (T - 1)

    def values(self, xs, u_own):
        rows = self._finite_rows()
        x = xs[1:]
        out = np.empty((len(x), len(rows)))
        for k, (j, sign, bound) in enumerate(rows):
            out[:, k] = (x[:, j] - bound) if sign < 0 else (bound - x[:, j])
        return out.ravel()

    def jac_blocks(self, xs, u_own):
        rows = self._finite_rows()
        S = len(xs) - 1
        Jx = np.zeros((S, len(rows), xs.shape[1]))
        for k, (j, sign, _) in enumerate(rows):
            Jx[:, k, j] = -sign
        return Jx, None

    def curvature(self, xs, lam):
        return None


@dataclass(frozen=True)
class CollisionSeparation:
    """||p_own - p_other||^2 - margin * d_min >= 0, one row per stage 1..T-1."""

    owner: int
    other: int
    d_min: float
    margin: float
    pos_idx: tuple
    other_pos_idx: tuple
    kind: str = field(default="CollisionSeparation", init=False)
    state_based: bool = field(default=True, init=False)

    rows_per_stage: int = field(default=1, init=False)

    def stage_range(self, T):
        return range(1, T)

    def n_rows(self, T):
        return T - 1

    def _diff(self, xs):
        return xs[1:, list(self.pos_idx)] - xs[1:, list(self.other_pos_idx)]

    def values(self, xs, u_own):
        d = self._diff(xs)
        return np.sum(d * d, axis=1) - self.margin * self.d_min

    def jac_blocks(self, xs, u_own):
        d = self._diff(xs)
        S = len(xs) - 1
        Jx = np.zeros((S, 1, xs.shape[1]))
        for k, (a, b) in enumerate(zip(self.pos_idx, self.other_pos_idx)):
            Jx[:, 0, a] = 2.0 * d[:, k]
            Jx[:, 0, b] = -2.0 * d[:, k]
        return Jx, None

    def curvature(self, xs, lam):
        S = len(xs) - 1
        n = xs.shape[1]
        K = np.zeros((S, n, n))
        lam = lam.reshape(S, 1)[:, 0]
        for a, b in zip(self.pos_idx, self.other_pos_idx):
            K[:, a, a] += 2.0 * lam
            K[:, b, b] += 2.0 * lam
            K[:, a, b] += -2.0 * lam
            K[:, b, a] += -2.0 * lam
        return K


@dataclass(frozen=True)
class CircleBound:
    """Disk obstacle or container on a position: side=+1 keeps the point out
    (row = ||p - c||^2 - r^2), side=-1 keeps it in (row = r^2 - ||p - c||^2)."""

    center: tuple
    radius: float
    side: int = 1

    def __post_init__(self):
        if self.side not in (1, -1):
            raise GameConfigError(f"circle side must be +1 or -1, got {self.side}")
        if self.radius <= 0:
            raise GameConfigError(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class SigmoidWall:
    """Legal half-region bounded by a sigmoid curve.

    With axis = 0 the curve is y = offset + amplitude * sigmoid(sharpness *
    (x - shift)); side=+1 keeps p above the curve (row = p_y - curve(p_x)),
    side=-1 below.  axis = 1 swaps the roles of x and y.  amplitude = 0 gives
    a straight wall at ``offset``.
    """

    axis: int
    side: int
    offset: float
    amplitude: float = 0.0
    sharpness: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.axis not in (0, 1):
            raise GameConfigError(f"wall axis must be 0 or 1, got {self.axis}")
        if self.side not in (1, -1):
            raise GameConfigError(f"wall side must be +1 or -1, got {self.side}")

    def curve(self, q):
        return self.offset + self.amplitude * expit(self.sharpness * (q - self.shift))

    def curve_d1(self, q):
        s = expit(self.sharpness * (q - self.shift))
        return self.amplitude * self.sharpness * s * (1.0 - s)

    def curve_d2(self, q):
        s = expit(self.sharpness * (q - self.shift))
        return self.amplitude * self.sharpness ** 2 * s * (1.0 - s) * (1.0 - 2.0 * s)


@dataclass(frozen=True)
class RoadRegion:
    """Keeps the owner's position inside a drivable region described by corner
    circles and sigmoid road-side walls.  Rows per stage: circles then walls,
    in declaration order; stages 1..T-1."""

    owner: int
    pos_idx: tuple
    circles: tuple = ()
    walls: tuple = ()
    kind: str = field(default="RoadRegion", init=False)
    state_based: bool = field(default=True, init=False)

    @property
    def rows_per_stage(self):
        return len(self.circles) + len(self.walls)

    def stage_range(self, T):
        return range(1, T)

    def n_rows(self, T):
        return self.rows_per_stage * (T - 1)

    def values(self, xs, u_own):
        p = xs[1:, list(self.pos_idx)]
        cols = []
        for c in self.circles:
            d = p - np.asarray(c.center, float)
            cols.append(c.side * (np.sum(d * d, axis=1) - c.radius ** 2))
        for w in self.walls:
            q, r = p[:, w.axis], p[:, 1 - w.axis]
            cols.append(w.side * (r - w.curve(q)))
        return np.stack(cols, axis=1).ravel()

    def jac_blocks(self, xs, u_own):
        p = xs[1:, list(self.pos_idx)]
        S = len(p)
        Jx = np.zeros((S, self.rows_per_stage, xs.shape[1]))
        k = 0
        for c in self.circles:
            d = p - np.asarray(c.center, float)
            for a in range(2):
                Jx[:, k, self.pos_idx[a]] = c.side * 2.0 * d[:, a]
            k += 1
        for w in self.walls:
            q = p[:, w.axis]
            Jx[:, k, self.pos_idx[1 - w.axis]] = w.side
            Jx[:, k, self.pos_idx[w.axis]] = -w.side * w.curve_d1(q)
            k += 1
        return Jx, None

    def curvature(self, xs, lam):
        p = xs[1:, list(self.pos_idx)]
        S = len(p)
        n = xs.shape[1]
        K = np.zeros((S, n, n))
        lam = lam.reshape(S, self.rows_per_stage)
        k = 0
        for c in self.circles:
            coef = lam[:, k] * c.side * 2.0
            for a in range(2):
                K[:, self.pos_idx[a], self.pos_idx[a]] += coef
            k += 1
        for w in self.walls:
            q = p[:, w.axis]
            j = self.pos_idx[w.axis]
            K[:, j, j] += lam[:, k] * (-w.side) * w.curve_d2(q)
            k += 1
        return K


INEQUALITY_KINDS = {
    "ControlBox": ControlBox,
    "VelocityBox": VelocityBox,
    "CollisionSeparation": CollisionSeparation,
    "RoadRegion": RoadRegion,
}
