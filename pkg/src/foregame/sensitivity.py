"""Differentiating equilibrium solutions with respect to (theta, gamma).

At a solved point the equations that pin down the solution are the
stationarity/equality rows plus the *active* inequality rows; multipliers of
inactive rows are locked at zero.  Differentiating that reduced square system
implicitly gives d v / d (theta, gamma); inactive multiplier rows of the
result are exactly zero.

Weakly active rows (h and z both near zero) are kept on the active side.  A
singular reduced matrix falls back to the least-squares pseudoinverse and the
result is flagged, since ties between duplicated active constraints make the
strict system rank deficient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .observation import ObservationSequence
from .transcription import MicpProblem

DEFAULT_ACTIVE_TOL = 1e-7


@dataclass
class ActiveSetPartition:
    active: np.ndarray        # boolean mask over inequality rows
    weak: np.ndarray          # subset of active where the multiplier is also ~0
    act_tol: float

    @property
    def inactive(self):
        return ~self.active

    @property
    def strict(self):
        return not bool(np.any(self.weak))

    @property
    def num_active(self):
        return int(np.count_nonzero(self.active))


def partition_active(problem: MicpProblem, v, theta=None, gamma=None,
                     act_tol=DEFAULT_ACTIVE_TOL) -> ActiveSetPartition:
    """Split inequality rows by activity at a solution."""
    h = problem.residual_h(v, theta, gamma)
    z = v[problem.layout.eta_r:]
    active = h <= act_tol
    weak = active & (z <= act_tol)
    return ActiveSetPartition(active=active, weak=weak, act_tol=act_tol)


@dataclass
class SensitivityResult:
    dv: np.ndarray            # (eta_r + eta_z, theta_dim + N)
    partition: ActiveSetPartition
    condition_estimate: float
    used_lstsq: bool

    def dstates(self, layout):
        """Sensitivities of the decision states, reshaped (T-1, n, n_params)."""
        blk = self.dv[layout.x_slice(), :]
        return blk.reshape(layout.T - 1, layout.n, -1)


def _condition_estimate(M, lu_piv):
    """Cheap deterministic estimate of cond_1(M) from a few probe solves."""
    norm_m = np.linalg.norm(M, 1)
    n = M.shape[0]
    probes = [np.ones(n), np.tile([1.0, -1.0], n)[:n]]
    e = np.zeros(n)
    e[0] = 1.0
    probes.append(e)
    inv_norm = 0.0
    for w in probes:
        sol = lu_solve(lu_piv, w)
        inv_norm = max(inv_norm, np.linalg.norm(sol, 1) / np.linalg.norm(w, 1))
    return float(norm_m * inv_norm)


def solution_sensitivity(problem: MicpProblem, v, theta=None, gamma=None,
                         act_tol=DEFAULT_ACTIVE_TOL) -> SensitivityResult:
    """d v / d (theta, gamma) at a converged solution.

    Solves the implicit-function system of the active rows for all parameter
    directions at once; rows of inactive multipliers are returned as exact
    zeros.
    """
    L = problem.layout
    part = partition_active(problem, v, theta, gamma, act_tol)
    act = np.flatnonzero(part.active)
    keep_cols = np.concatenate([np.arange(L.eta_r), L.eta_r + act])
    keep_rows = keep_cols   # same count: c rows + active h rows

    J = problem.jac_v(v, theta, gamma)
    G = problem.jac_params(v, theta, gamma)
    M = J[np.ix_(keep_rows, keep_cols)]
    rhs = -G[keep_rows, :]

    # Rescale rows to unit infinity norm before factoring.  The solution of a
    # square system is unchanged, but strong discounting otherwise leaves
    # late-stage rows many orders of magnitude below the rest and the
    # conditioning test would reject a perfectly solvable system.
    scale = 1.0 / np.maximum(np.max(np.abs(M), axis=1), 1e-12)
    M = M * scale[:, None]
    rhs = rhs * scale[:, None]

    used_lstsq = False
    cond = np.inf
    try:
        lu_piv = lu_factor(M)
        sol = lu_solve(lu_piv, rhs)
        if not np.all(np.isfinite(sol)):
            raise LinAlgError("non-finite solve")
        cond = _condition_estimate(M, lu_piv)
    except (LinAlgError, ValueError):
        sol = None
    if sol is None or cond > 1e14:
        sol = scipy.linalg.lstsq(M, rhs, lapack_driver="gelsy")[0]
        used_lstsq = True
        warnings.warn("reduced sensitivity system is singular; "
                      "using least-squares pseudoinverse", RuntimeWarning)

    dv = np.zeros((L.total, G.shape[1]))
    dv[keep_cols, :] = sol
    return SensitivityResult(dv=dv, partition=part,
                             condition_estimate=float(cond), used_lstsq=used_lstsq)


# -- fitting objective ---------------------------------------------------------


def inverse_objective(states, obs: ObservationSequence) -> float:
    """Covariance-weighted squared mismatch between predicted outputs and
    observations, summed over the observed stages."""
    states = np.asarray(states, float)
    T_obs = len(obs)
    if T_obs > len(states):
        raise ValueError(f"{T_obs} observations for a {len(states)}-stage trajectory")
    pred = states[:T_obs, list(obs.model.indices)]
    r = pred - obs.values
    return float(obs.model.weight() * np.sum(r * r))


def objective_state_gradient(states, obs: ObservationSequence) -> np.ndarray:
    """d inverse_objective / d states, shape like ``states`` (zero rows beyond
    the observed range)."""
    states = np.asarray(states, float)
    g = np.zeros_like(states)
    T_obs = len(obs)
    idx = list(obs.model.indices)
    r = states[:T_obs, idx] - obs.values
    g[:T_obs, idx] = 2.0 * obs.model.weight() * r
    return g


def inverse_gradient(problem: MicpProblem, v, obs: ObservationSequence,
                     theta=None, gamma=None, sens: SensitivityResult = None,
                     act_tol=DEFAULT_ACTIVE_TOL):
    """Gradient of the fitting objective w.r.t. (theta, gamma) by chaining the
    equilibrium sensitivity through the observation mismatch.

    Returns (gradient, sensitivity_result); pass ``sens`` to reuse a
    factorization already computed at this solution.
    """
    if sens is None:
        sens = solution_sensitivity(problem, v, theta, gamma, act_tol)
    L = problem.layout
    traj = problem.extract_trajectory(v)
    g_states = objective_state_gradient(traj.states, obs)
    # stage 0 is data: its mismatch is constant in the parameters
    w = g_states[1:].ravel()
    grad = sens.dv[L.x_slice(), :].T @ w
    return grad, sens
