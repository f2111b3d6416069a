"""Per-agent dynamics models (explicit Euler, fixed step).

Both models carry 4 physical states.  Bounds declared here are *not* enforced
by ``step``; scenario builders translate them into inequality constraint
blocks so the solver treats them through multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GameConfigError

_INF_BOUNDS = (-np.inf, np.inf)


@dataclass(frozen=True)
class DoubleIntegrator2D:
    """Planar double integrator: state (px, py, vx, vy), control (ax, ay)."""

    control_low: tuple = _INF_BOUNDS
    control_high: tuple = _INF_BOUNDS
    velocity_low: tuple = _INF_BOUNDS
    velocity_high: tuple = _INF_BOUNDS

    state_dim: int = field(default=4, init=False)
    control_dim: int = field(default=2, init=False)
    kind: str = field(default="DoubleIntegrator2D", init=False)

    def step(self, x, u, dt):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        out = x.copy()
        out[0] += dt * x[2]
        out[1] += dt * x[3]
        out[2] += dt * u[0]
        out[3] += dt * u[1]
        return out

    def step_batch(self, xs, us, dt):
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        out = xs.copy()
        out[:, 0] += dt * xs[:, 2]
        out[:, 1] += dt * xs[:, 3]
        out[:, 2:4] += dt * us
        return out

    def jacobians(self, x, u, dt):
        A = np.eye(4)
        A[0, 2] = dt
        A[1, 3] = dt
        B = np.zeros((4, 2))
        B[2, 0] = dt
        B[3, 1] = dt
        return A, B

    def jacobians_batch(self, xs, us, dt):
        S = len(xs)
        A, B = self.jacobians(None, None, dt)
        return np.broadcast_to(A, (S, 4, 4)), np.broadcast_to(B, (S, 4, 2))

    def hessian_contraction(self, x, u, mu, dt):
        """Sum_k mu[k] * second derivatives of f_k; identically zero (linear)."""
        return np.zeros((4, 4)), np.zeros((4, 2)), np.zeros((2, 2))

    @property
    def is_linear(self):
        return True


@dataclass(frozen=True)
class KinematicBicycle:
    """Kinematic bicycle: state (px, py, v, psi), control (accel, steer).

    px' = px + dt*v*cos(psi); py' = py + dt*v*sin(psi);
    v'  = v + dt*a;           psi' = psi + dt*v*tan(steer)/wheelbase.
    """

    wheelbase: float = 2.7
    control_low: tuple = _INF_BOUNDS
    control_high: tuple = _INF_BOUNDS

    state_dim: int = field(default=4, init=False)
    control_dim: int = field(default=2, init=False)
    kind: str = field(default="KinematicBicycle", init=False)

    def __post_init__(self):
        if self.wheelbase <= 0:
            raise GameConfigError(f"wheelbase must be positive, got {self.wheelbase}")

    def step(self, x, u, dt):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        px, py, v, psi = x
        a, steer = u
        return np.array([
            px + dt * v * np.cos(psi),
            py + dt * v * np.sin(psi),
            v + dt * a,
            psi + dt * v * np.tan(steer) / self.wheelbase,
        ])

    def step_batch(self, xs, us, dt):
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        v, psi = xs[:, 2], xs[:, 3]
        out = np.empty_like(xs)
        out[:, 0] = xs[:, 0] + dt * v * np.cos(psi)
        out[:, 1] = xs[:, 1] + dt * v * np.sin(psi)
        out[:, 2] = v + dt * us[:, 0]
        out[:, 3] = psi + dt * v * np.tan(us[:, 1]) / self.wheelbase
        return out

    def jacobians(self, x, u, dt):
        v, psi = x[2], x[3]
        steer = u[1]
        c, s = np.cos(psi), np.sin(psi)
        sec2 = 1.0 + np.tan(steer) ** 2
        A = np.eye(4)
        A[0, 2] = dt * c
        A[0, 3] = -dt * v * s
        A[1, 2] = dt * s
        A[1, 3] = dt * v * c
        A[3, 2] = dt * np.tan(steer) / self.wheelbase
        B = np.zeros((4, 2))
        B[2, 0] = dt
        B[3, 1] = dt * v * sec2 / self.wheelbase
        return A, B

    def jacobians_batch(self, xs, us, dt):
        S = len(xs)
        v, psi = xs[:, 2], xs[:, 3]
        steer = us[:, 1]
        c, s = np.cos(psi), np.sin(psi)
        tan = np.tan(steer)
        sec2 = 1.0 + tan ** 2
        A = np.tile(np.eye(4), (S, 1, 1))
        A[:, 0, 2] = dt * c
        A[:, 0, 3] = -dt * v * s
        A[:, 1, 2] = dt * s
        A[:, 1, 3] = dt * v * c
        A[:, 3, 2] = dt * tan / self.wheelbase
        B = np.zeros((S, 4, 2))
        B[:, 2, 0] = dt
        B[:, 3, 1] = dt * v * sec2 / self.wheelbase
        return A, B

    def hessian_contraction(self, x, u, mu, dt):
        """Sum_k mu[k] * Hess f_k, split into (xx, xu, uu) blocks."""
        v, psi = x[2], x[3]
        steer = u[1]
        c, s = np.cos(psi), np.sin(psi)
        tan = np.tan(steer)
        sec2 = 1.0 + tan ** 2
        Hxx = np.zeros((4, 4))
        # f0 = px + dt v cos(psi): d2/dv dpsi = -dt s, d2/dpsi2 = -dt v c
        # f1 = py + dt v sin(psi): d2/dv dpsi =  dt c, d2/dpsi2 = -dt v s
        Hxx[2, 3] = Hxx[3, 2] = dt * (-mu[0] * s + mu[1] * c)
        Hxx[3, 3] = dt * (-mu[0] * v * c - mu[1] * v * s)
        Hxu = np.zeros((4, 2))
        # f3 = psi + dt v tan(steer)/L: d2/dv dsteer = dt sec2 / L
        Hxu[2, 1] = mu[3] * dt * sec2 / self.wheelbase
        Huu = np.zeros((2, 2))
        # f3: d2/dsteer2 = dt v * 2 sec2 tan / L
        Huu[1, 1] = mu[3] * dt * v * 2.0 * sec2 * tan / self.wheelbase
        return Hxx, Hxu, Huu

    @property
    def is_linear(self):
        return False


DYNAMICS_KINDS = {
    "DoubleIntegrator2D": DoubleIntegrator2D,
    "KinematicBicycle": KinematicBicycle,
}
