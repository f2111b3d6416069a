"""Stage cost terms.

Every term evaluates against the *joint* state vector and the owner agent's
control vector; position/velocity coordinates are addressed through explicit
joint-state indices fixed at construction time, so a term is self-contained
once built.  Learnable parameters live in a flat global theta vector; a term
that exposes a parameter stores the start index of its slice (``theta_index``)
and falls back to its stored value when unlinked.

Terms accumulate raw (undiscounted) gradients and Hessian blocks into caller
buffers; discount weighting happens in the transcription layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import GameConfigError


def softplus(s, kappa):
    """Overflow-safe (1/kappa) * log(1 + exp(kappa * s))."""
    t = kappa * np.asarray(s, float)
    return (np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))) / kappa


@dataclass(frozen=True)
class GoalQuadratic:
    """w * ||p - goal||^2 on the owner's position coordinates."""

    weight: float
    goal: tuple
    pos_idx: tuple
    theta_index: Optional[int] = None
    kind: str = field(default="GoalQuadratic", init=False)

    def _goal(self, theta):
        if self.theta_index is None:
            return np.asarray(self.goal, float)
        return np.asarray(theta[self.theta_index:self.theta_index + 2], float)

    @property
    def theta_size(self):
        return 0 if self.theta_index is None else 2

    def value_batch(self, xs, us, theta):
        d = xs[:, list(self.pos_idx)] - self._goal(theta)
        return self.weight * np.sum(d * d, axis=1)

    def add_grad_batch(self, xs, us, theta, gx, gu):
        d = xs[:, list(self.pos_idx)] - self._goal(theta)
        gx[:, list(self.pos_idx)] += 2.0 * self.weight * d

    def add_hess_batch(self, xs, us, theta, Hxx, Huu, Hxu):
        for a in self.pos_idx:
            Hxx[:, a, a] += 2.0 * self.weight

    def add_hess_theta_batch(self, xs, us, theta, Hxt, Hut):
        if self.theta_index is None:
            return
        for k, a in enumerate(self.pos_idx):
            Hxt[:, a, self.theta_index + k] += -2.0 * self.weight


@dataclass(frozen=True)
class ControlQuadratic:
    """w * ||u||^2 on the owner's control vector."""

    weight: float
    kind: str = field(default="ControlQuadratic", init=False)
    theta_index: Optional[int] = field(default=None, init=False)

    @property
    def theta_size(self):
        return 0

    def value_batch(self, xs, us, theta):
        return self.weight * np.sum(us * us, axis=1)

    def add_grad_batch(self, xs, us, theta, gx, gu):
        gu += 2.0 * self.weight * us

    def add_hess_batch(self, xs, us, theta, Hxx, Huu, Hxu):
        m = Huu.shape[1]
        for a in range(m):
            Huu[:, a, a] += 2.0 * self.weight

    def add_hess_theta_batch(self, xs, us, theta, Hxt, Hut):
        return


@dataclass(frozen=True)
class CollisionHinge:
    """Penalty w * softplus_kappa(margin * d_min - ||p_own - p_other||^2).

    The softplus-smoothed form is what the solver differentiates; the exact
    hinge max(0, .) is kept as a reference evaluator for tests and reporting.
    """

    weight: float
    d_min: float
    margin: float
    pos_idx: tuple
    other_pos_idx: tuple
    kappa: float = 50.0
    kind: str = field(default="CollisionHinge", init=False)
    theta_index: Optional[int] = field(default=None, init=False)

    def __post_init__(self):
        if self.kappa <= 0:
            raise GameConfigError(f"kappa must be positive, got {self.kappa}")

    @property
    def theta_size(self):
        return 0

    def _slack(self, xs):
        d = xs[:, list(self.pos_idx)] - xs[:, list(self.other_pos_idx)]
        return self.margin * self.d_min - np.sum(d * d, axis=1), d

    def value_batch(self, xs, us, theta):
        s, _ = self._slack(xs)
        return self.weight * softplus(s, self.kappa)

    def value_batch_unsmoothed(self, xs, us, theta):
        s, _ = self._slack(xs)
        return self.weight * np.maximum(s, 0.0)

    def add_grad_batch(self, xs, us, theta, gx, gu):
        s, d = self._slack(xs)
        sig = expit(self.kappa * s)
        coef = self.weight * sig
        for k, (a, b) in enumerate(zip(self.pos_idx, self.other_pos_idx)):
            gx[:, a] += coef * (-2.0 * d[:, k])
            gx[:, b] += coef * (2.0 * d[:, k])

    def add_hess_batch(self, xs, us, theta, Hxx, Huu, Hxu):
        s, d = self._slack(xs)
        sig = expit(self.kappa * s)
        curv = self.weight * self.kappa * sig * (1.0 - sig)
        lin = self.weight * sig
        idx = list(self.pos_idx) + list(self.other_pos_idx)
        # ds/dp over (own, other) coordinates
        grad_s = np.concatenate([-2.0 * d, 2.0 * d], axis=1)  # (S, 4)
        for a_pos, a in enumerate(idx):
            for b_pos, b in enumerate(idx):
                Hxx[:, a, b] += curv * grad_s[:, a_pos] * grad_s[:, b_pos]
        # d2s/dp2: -2I on own and other diagonal blocks, +2I cross blocks
        for k in range(len(self.pos_idx)):
            a, b = self.pos_idx[k], self.other_pos_idx[k]
            Hxx[:, a, a] += lin * (-2.0)
            Hxx[:, b, b] += lin * (-2.0)
            Hxx[:, a, b] += lin * 2.0
            Hxx[:, b, a] += lin * 2.0

    def add_hess_theta_batch(self, xs, us, theta, Hxt, Hut):
        return


@dataclass(frozen=True)
class LaneCenterQuadratic:
    """w * sum_axes (p[axis] - center_t[axis])^2 against a per-stage reference."""

    weight: float
    centers: tuple  # ((x, y) per stage), length >= horizon
    pos_idx: tuple
    axes: tuple = (0, 1)
    kind: str = field(default="LaneCenterQuadratic", init=False)
    theta_index: Optional[int] = field(default=None, init=False)

    @property
    def theta_size(self):
        return 0

    def _centers(self, n_stages):
        c = np.asarray(self.centers, float)
        if len(c) < n_stages:
            raise GameConfigError(
                f"lane reference has {len(c)} samples, needs >= {n_stages}")
        return c[:n_stages]

    def value_batch(self, xs, us, theta):
        c = self._centers(len(xs))
        out = np.zeros(len(xs))
        for a in self.axes:
            d = xs[:, self.pos_idx[a]] - c[:, a]
            out += d * d
        return self.weight * out

    def add_grad_batch(self, xs, us, theta, gx, gu):
        c = self._centers(len(xs))
        for a in self.axes:
            gx[:, self.pos_idx[a]] += 2.0 * self.weight * (xs[:, self.pos_idx[a]] - c[:, a])

    def add_hess_batch(self, xs, us, theta, Hxx, Huu, Hxu):
        for a in self.axes:
            Hxx[:, self.pos_idx[a], self.pos_idx[a]] += 2.0 * self.weight

    def add_hess_theta_batch(self, xs, us, theta, Hxt, Hut):
        return


@dataclass(frozen=True)
class VelocityTracking:
    """w * (v - target)^2 on a scalar longitudinal-speed state."""

    weight: float
    target: float
    v_idx: int
    theta_index: Optional[int] = None
    kind: str = field(default="VelocityTracking", init=False)

    def _target(self, theta):
        if self.theta_index is None:
            return self.target
        return float(theta[self.theta_index])

    @property
    def theta_size(self):
        return 0 if self.theta_index is None else 1

    def value_batch(self, xs, us, theta):
        d = xs[:, self.v_idx] - self._target(theta)
        return self.weight * d * d

    def add_grad_batch(self, xs, us, theta, gx, gu):
        gx[:, self.v_idx] += 2.0 * self.weight * (xs[:, self.v_idx] - self._target(theta))

    def add_hess_batch(self, xs, us, theta, Hxx, Huu, Hxu):
        Hxx[:, self.v_idx, self.v_idx] += 2.0 * self.weight

    def add_hess_theta_batch(self, xs, us, theta, Hxt, Hut):
        if self.theta_index is not None:
            Hxt[:, self.v_idx, self.theta_index] += -2.0 * self.weight


COST_KINDS = {
    "GoalQuadratic": GoalQuadratic,
    "ControlQuadratic": ControlQuadratic,
    "CollisionHinge": CollisionHinge,
    "LaneCenterQuadratic": LaneCenterQuadratic,
    "VelocityTracking": VelocityTracking,
}
