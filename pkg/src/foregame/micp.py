"""Damped semismooth Newton solver for the transcribed complementarity system.

The complementarity conditions 0 <= z  perp  h(v) >= 0 are folded into the
root-finding problem Phi(v) = [c(v); phi(z, h(v))] = 0 with the
Fischer-Burmeister function phi(a, b) = a + b - sqrt(a^2 + b^2).  Newton
steps on Phi use an element of the generalized Jacobian (both partial
derivatives taken as 1 at the origin kink) with Armijo backtracking on the
merit 0.5 * ||R Phi||^2, where R rescales every Jacobian row to unit infinity
norm.  Row scaling cancels out of the Newton direction itself but keeps the
factorization and the merit well-posed when strong discounting leaves
late-stage stationarity rows many orders of magnitude below the rest.

When the Newton direction is unusable (singular factorization, non-finite
entries, or no merit decrease along it), the step falls back to
Levenberg-Marquardt on the equilibrated system: (J'J + lambda I) d = -J'Phi
with escalating lambda.  That direction is a guaranteed descent direction for
the merit, so the rescue only gives up at a stationary point of the merit
itself ("stalled").

A progress watchdog (``stall_window`` > 0) also reports "stalled" when the
residual improves by less than the factor ``stall_ratio`` over the last
``stall_window`` iterations.  Iterates parked at a merit-stationary point
that fails the multiplier sign test (the usual outcome of chasing an
equilibrium branch past its fold) otherwise burn the whole iteration budget
making no progress.  Disabled by default; long parameter sweeps switch it on
for throughput.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

from .transcription import KktResidual, MicpProblem

def multiplier_floor(tol):
    """Most negative multiplier value a converged iterate may carry.

    The Fischer-Burmeister residual alone already forces z >= -tol (up to a
    sqrt(2) factor); asking for a tenth of that keeps multipliers essentially
    nonnegative without rejecting iterates whose merit function has hit the
    floating-point noise floor.
    """
    return -max(0.1 * tol, 1e-12)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 200
    residual_tolerance: float = 1e-8
    fb_epsilon: float = 0.0
    armijo_coefficient: float = 1e-4
    armijo_ratio: float = 0.5
    max_backtracks: int = 40
    damping_initial: float = 1e-8
    damping_max: float = 1e8
    stall_window: int = 0          # 0 disables the progress watchdog
    stall_ratio: float = 0.95
    trace_file: Optional[str] = None


@dataclass
class MicpSolution:
    v: np.ndarray
    converged: bool
    iterations: int
    residual_inf: float
    kkt: KktResidual
    status: str
    trace: list = field(default_factory=list)


def fischer_burmeister(a, b, eps=0.0):
    """Elementwise a + b - sqrt(a^2 + b^2 + eps^2)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return a + b - np.sqrt(a * a + b * b + eps * eps)


def fb_jacobian_coefficients(a, b, eps=0.0):
    """(d phi/da, d phi/db); both taken as 1 at the non-smooth origin."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    r = np.sqrt(a * a + b * b + eps * eps)
    safe = np.where(r > 0.0, r, 1.0)
    da = np.where(r > 0.0, 1.0 - a / safe, 1.0)
    db = np.where(r > 0.0, 1.0 - b / safe, 1.0)
    return da, db


def warm_start(problem: MicpProblem, previous) -> np.ndarray:
    """Initial iterate from a previous solution: copy the primal-dual point
    and clip inequality multipliers at zero."""
    v = (previous.v if isinstance(previous, MicpSolution) else np.asarray(previous, float)).copy()
    if v.shape != (problem.layout.total,):
        raise ValueError(
            f"warm start has size {v.shape}, layout needs ({problem.layout.total},)")
    v[problem.layout.eta_r:] = np.maximum(v[problem.layout.eta_r:], 0.0)
    return v


def _phi(problem, v, theta, gamma, eps):
    c = problem.residual_c(v, theta, gamma)
    h = problem.residual_h(v, theta, gamma)
    z = v[problem.layout.eta_r:]
    return np.concatenate([c, fischer_burmeister(z, h, eps)])


def _phi_jacobian(problem, v, theta, gamma, eps):
    eta_r = problem.layout.eta_r
    h = problem.residual_h(v, theta, gamma)
    z = v[eta_r:]
    J = problem.jac_v(v, theta, gamma)
    if len(h):
        da, db = fb_jacobian_coefficients(z, h, eps)
        J[eta_r:] *= db[:, None]
        J[eta_r:, eta_r:][np.diag_indices(len(h))] += da
    return J


def _converged(problem, v, phi, theta, gamma, tol):
    res = float(np.max(np.abs(phi))) if len(phi) else 0.0
    if res > tol:
        return False, res
    z = v[problem.layout.eta_r:]
    if len(z) and float(np.min(z)) < multiplier_floor(tol):
        return False, res
    kkt = problem.kkt_residual(v, theta, gamma)
    return kkt.max <= tol, res


def _armijo(problem, theta, gamma, eps, config, v, d, scale, merit_s, slope):
    """Backtrack along d until the equilibrated merit satisfies the Armijo
    condition.  Returns (accepted, step, v_new, phi_new)."""
    t = 1.0
    for _ in range(config.max_backtracks + 1):
        v_new = v + t * d
        phi_new = _phi(problem, v_new, theta, gamma, eps)
        merit_new = 0.5 * float(np.sum((phi_new * scale) ** 2))
        if np.isfinite(merit_new) and \
                merit_new <= merit_s + config.armijo_coefficient * t * slope:
            return True, t, v_new, phi_new
        t *= config.armijo_ratio
    return False, 0.0, None, None


def solve_micp(problem: MicpProblem, theta=None, gamma=None, v0=None,
               config: SolverConfig = SolverConfig()) -> MicpSolution:
    """Solve the transcribed game to a KKT point.

    The default start is a zero-control rollout with zero equality multipliers
    and unit inequality multipliers; pass ``v0`` (see ``warm_start``) to
    continue from a nearby solution.
    """
    v = problem.initial_point() if v0 is None else np.asarray(v0, float).copy()
    if v.shape != (problem.layout.total,):
        raise ValueError(f"v0 has shape {v.shape}, expected ({problem.layout.total},)")
    eps = config.fb_epsilon
    tol = config.residual_tolerance
    trace = []
    status = "max_iterations"
    n = len(v)

    phi = _phi(problem, v, theta, gamma, eps)
    it = 0
    while True:
        done, res_inf = _converged(problem, v, phi, theta, gamma, tol)
        if done:
            status = "converged"
            trace.append((it, res_inf, 0.0, 0.0))
            break
        if not np.isfinite(res_inf):
            status = "diverged"
            trace.append((it, res_inf, 0.0, 0.0))
            break
        if it >= config.max_iterations:
            trace.append((it, res_inf, 0.0, 0.0))
            break
        if (config.stall_window > 0 and it >= config.stall_window
                and res_inf > config.stall_ratio
                * trace[it - config.stall_window][1]):
            # parked: the residual is no longer shrinking at a useful rate,
            # which in practice means a merit-stationary point that fails the
            # multiplier sign test; converging runs improve far faster
            status = "stalled"
            trace.append((it, res_inf, 0.0, 0.0))
            break

        J = _phi_jacobian(problem, v, theta, gamma, eps)
        scale = 1.0 / np.maximum(np.max(np.abs(J), axis=1), 1e-12)
        Js = J * scale[:, None]
        phis = phi * scale
        grad_s = Js.T @ phis
        merit_s = 0.5 * float(phis @ phis)

        # Fast path: undamped Newton step on the equilibrated system.
        accepted = False
        lam_used = 0.0
        try:
            d = lu_solve(lu_factor(Js, check_finite=False), -phis,
                         check_finite=False)
        except (LinAlgError, ValueError):
            d = None
        if d is not None and np.all(np.isfinite(d)):
            slope = float(grad_s @ d)
            if slope < 0.0:
                accepted, t, v_new, phi_new = _armijo(
                    problem, theta, gamma, eps, config, v, d, scale, merit_s, slope)

        if not accepted:
            # Levenberg-Marquardt rescue: (Js'Js + lam I) d = -Js' phis is a
            # descent direction for the equilibrated merit for any lam > 0.
            A = Js.T @ Js
            diag_max = max(float(np.max(np.diagonal(A))), 1e-12)
            lam = config.damping_initial * diag_max
            lam_cap = config.damping_max * diag_max
            while lam <= lam_cap:
                try:
                    B = A.copy()
                    B.flat[::n + 1] += lam
                    d = cho_solve(cho_factor(B, check_finite=False), -grad_s,
                                  check_finite=False)
                except (LinAlgError, ValueError):
                    d = None
                if d is not None and np.all(np.isfinite(d)):
                    slope = float(grad_s @ d)
                    if slope < 0.0:
                        accepted, t, v_new, phi_new = _armijo(
                            problem, theta, gamma, eps, config,
                            v, d, scale, merit_s, slope)
                        if accepted:
                            lam_used = lam
                            break
                lam *= 100.0
            if not accepted:
                status = "stalled"
                trace.append((it, res_inf, 0.0, lam_cap))
                break

        trace.append((it, res_inf, t, lam_used))
        v = v_new
        phi = phi_new
        it += 1

    kkt = problem.kkt_residual(v, theta, gamma)
    res_inf = float(np.max(np.abs(phi))) if len(phi) else 0.0
    if config.trace_file:
        with open(config.trace_file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual_inf", "step_length", "damping"])
            w.writerows(trace)
    return MicpSolution(
        v=v, converged=(status == "converged"), iterations=it,
        residual_inf=res_inf, kkt=kkt, status=status, trace=trace,
    )
