"""Recovering cost parameters and discount factors from observed play.

Plain projected gradient descent: at each outer iteration the game is
re-solved at the current (theta, gamma) (warm-started from the previous
solution), the fitting objective and its implicit gradient are evaluated, and
both parameter blocks take an explicit step; gamma is projected onto
[gamma_min, gamma_max].  A step whose inner solve fails is retried with a
halved
learning rate a bounded number of times.  When every shortened step still
raises the objective (the landscape folds where the active set or the
equilibrium branch changes), a short ladder of longer probe steps looks for
the far side of the fold before the least-bad short move is taken.

The gamma-related knobs:

* ``gamma_mode="learn"`` updates gamma from its gradient, ``"one"`` freezes
  every agent at gamma = 1 (the undiscounted baseline used for comparisons).
* ``gamma_fixed_mask`` pins a subset of agents while learning the rest (an
  ego whose own objective is known, say).
* ``gamma_regularizer`` adds c * ||1 - gamma||^2 to the fitted objective,
  biasing ill-identified discount factors toward patience.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GameConfigError, NonConvergence
from .game import GameDefinition
from .micp import MicpSolution, SolverConfig, solve_micp, warm_start
from .observation import ObservationSequence
from .sensitivity import inverse_gradient, inverse_objective
from .transcription import transcribe

GAMMA_MODES = ("learn", "one")


@dataclass(frozen=True)
class InverseConfig:
    max_iterations: int = 500
    tolerance: float = 1e-4            # on the accepted (theta, gamma) step norm
    learning_rate: float = 1e-2
    gamma_mode: str = "learn"
    gamma_regularizer: float = 0.0
    gamma_min: float = 0.0
    gamma_max: float = 2.0
    normalize_gradient: bool = True
    adapt_step: bool = True            # halve on objective increase, regrow after
    step_growth: float = 1.3
    max_step_retries: int = 5
    act_tol: float = 1e-7
    escape_steps: tuple = (2.0, 8.0, 32.0)
    dedupe: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    gamma_fixed_mask: Optional[tuple] = None

    def __post_init__(self):
        if self.gamma_mode not in GAMMA_MODES:
            raise GameConfigError(f"gamma_mode must be one of {GAMMA_MODES}")
        if self.max_iterations < 1:
            raise GameConfigError("max_iterations must be >= 1")
        if self.learning_rate <= 0:
            raise GameConfigError("learning_rate must be positive")
        if not 0.0 <= self.gamma_min <= self.gamma_max:
            raise GameConfigError(
                "gamma_min must lie in [0, gamma_max], got "
                f"{self.gamma_min}")


@dataclass
class InverseResult:
    theta: np.ndarray
    gamma: np.ndarray
    converged: bool
    iterations: int
    objective: float
    regularized_objective: float
    status: str
    history: list
    solution: MicpSolution

    def save_iteration_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            ncomp = len(self.gamma)
            w.writerow(["k", "objective", "regularized_objective"]
                       + [f"gamma_{i}" for i in range(ncomp)]
                       + ["grad_theta_norm", "grad_gamma_norm",
                          "inner_iterations", "step"])
            for row in self.history:
                w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def regularized_objective(p_value, gamma, c_gamma):
    """p_value + c_gamma * ||1 - gamma||^2."""
    g = np.asarray(gamma, float)
    return float(p_value + c_gamma * np.sum((1.0 - g) ** 2))


def _anchored_start(problem, observations):
    """Initial iterate whose states agree with the observations on the
    observed coordinates; everything else comes from the zero-control rollout.

    Games of this kind can carry several equilibria at the same parameters,
    and warm starts track whichever branch they began on.  Anchoring the
    start to the data pulls the solver toward the branch the observations
    actually came from.
    """
    L = problem.layout
    v = problem.initial_point()
    vals = np.asarray(observations.values, float)
    n_obs = min(len(vals), L.T)
    if n_obs < 2:
        return v
    idx = list(observations.model.indices)
    xs = v[L.x_slice()].reshape(L.T - 1, L.n)
    xs[: n_obs - 1, idx] = vals[1:n_obs]
    v[L.x_slice()] = xs.ravel()
    return v


def infer(game: GameDefinition, observations: ObservationSequence,
          theta0=None, gamma0=None, config: InverseConfig = InverseConfig()
          ) -> InverseResult:
    """Fit (theta, gamma) so the game's equilibrium tracks the observations.

    Raises NonConvergence if the very first equilibrium solve fails; later
    failures shrink the step and, if persistent, return the best iterate with
    ``status="inner_failure"``.
    """
    problem = transcribe(game, dedupe=config.dedupe)
    N = game.dims.num_agents
    K = game.theta_dim

    theta = np.array(game.theta if theta0 is None else theta0, float)
    if theta.shape != (K,):
        raise GameConfigError(f"theta0 must have shape ({K},)")
    if config.gamma_mode == "one":
        gamma = np.ones(N)
    else:
        gamma = np.array(game.gammas() if gamma0 is None else gamma0, float)
    if gamma.shape != (N,):
        raise GameConfigError(f"gamma0 must have shape ({N},)")
    if np.any(gamma < 0):
        raise GameConfigError("gamma0 must be nonnegative")

    fixed = np.zeros(N, bool)
    if config.gamma_mode == "one":
        fixed[:] = True
    elif config.gamma_fixed_mask is not None:
        fixed = np.asarray(config.gamma_fixed_mask, bool)
        if fixed.shape != (N,):
            raise GameConfigError(f"gamma_fixed_mask must have shape ({N},)")

    v_anchor = _anchored_start(problem, observations)
    sol = solve_micp(problem, theta=theta, gamma=gamma, v0=v_anchor.copy(),
                     config=config.solver)
    if not sol.converged:
        sol = solve_micp(problem, theta=theta, gamma=gamma, config=config.solver)
    if not sol.converged:
        raise NonConvergence(
            "equilibrium solve failed at the initial parameters",
            iterations=sol.iterations, residual=sol.residual_inf)

    c_gamma = config.gamma_regularizer
    history = []
    status = "max_iterations"
    converged = False
    scale = 1.0
    it = 0
    for k in range(config.max_iterations):
        it = k + 1
        traj = problem.extract_trajectory(sol.v)
        p_val = inverse_objective(traj.states, observations)
        p_reg = regularized_objective(p_val, gamma, c_gamma)
        grad, _ = inverse_gradient(problem, sol.v, observations,
                                   theta=theta, gamma=gamma,
                                   act_tol=config.act_tol)
        g_theta = grad[:K]
        g_gamma = grad[K:] + 2.0 * c_gamma * (gamma - 1.0)
        g_gamma[fixed] = 0.0

        g = np.concatenate([g_theta, g_gamma])
        if config.normalize_gradient:
            norm = float(np.linalg.norm(g))
            if norm > 1.0:
                g = g / norm
        step = config.learning_rate * scale
        if step <= config.tolerance:
            # the step budget has shrunk below the convergence granularity,
            # so no acceptable move can exceed the stopping threshold
            status = "converged"
            converged = True
            break

        def p_reg_at(solution, gamma_val):
            states = problem.extract_trajectory(solution.v).states
            return regularized_objective(
                inverse_objective(states, observations), gamma_val, c_gamma)

        def try_step(step_len):
            """Candidate point one step of ``step_len`` downhill, with the
            best converged equilibrium found there (or None)."""
            theta_new = theta - step_len * g[:K]
            gamma_new = gamma.copy()
            upd = np.maximum(config.gamma_min, gamma - step_len * g[K:])
            gamma_new[~fixed] = np.minimum(upd, config.gamma_max)[~fixed]
            candidates = []
            sol_new = solve_micp(problem, theta=theta_new, gamma=gamma_new,
                                 v0=warm_start(problem, sol), config=config.solver)
            if sol_new.converged:
                candidates.append(sol_new)
            # warm starts track the current equilibrium branch; when tracking
            # fails, or the objective jumps by far more than a line-search
            # overshoot would explain, look for the data-consistent branch
            if (not candidates
                    or p_reg_at(candidates[0], gamma_new) > 2.0 * p_reg + 1e-9):
                sol_a = solve_micp(problem, theta=theta_new, gamma=gamma_new,
                                   v0=v_anchor.copy(), config=config.solver)
                if sol_a.converged:
                    candidates.append(sol_a)
            if not candidates:
                sol_c = solve_micp(problem, theta=theta_new, gamma=gamma_new,
                                   config=config.solver)
                if sol_c.converged:
                    candidates.append(sol_c)
            if not candidates:
                return None
            sol_best = min(candidates, key=lambda s: p_reg_at(s, gamma_new))
            return (theta_new, gamma_new, sol_best,
                    p_reg_at(sol_best, gamma_new))

        drift_bound = 2.0 * p_reg + 1e-9
        accepted = None
        solver_failed = True
        for attempt in range(config.max_step_retries + 1):
            cand = try_step(step)
            if cand is not None:
                solver_failed = False
                # a mildly uphill move is kept as a fallback so folds can be
                # crossed, but a candidate far above the current objective is
                # a different equilibrium branch, not a step worth taking
                if not config.adapt_step or cand[3] <= drift_bound:
                    accepted = cand
                if not config.adapt_step or cand[3] <= p_reg:
                    if attempt == 0:
                        scale = min(1.0, scale * config.step_growth)
                    break
            # solver failure, or an uphill move: try a shorter step
            step *= 0.5
            scale *= 0.5
        if (config.adapt_step
                and (accepted is None or accepted[3] > p_reg)):
            # every backtracked step went uphill, so the descent direction
            # points across a fold in the equilibrium landscape: short steps
            # climb the near side.  Probe a few long steps to look for the
            # far slope before settling for the least-bad short move.
            for mult in config.escape_steps:
                cand = try_step(config.learning_rate * mult)
                if cand is not None and cand[3] < p_reg:
                    accepted = cand
                    step = config.learning_rate * mult
                    scale = 1.0
                    break
        history.append((
            k, p_val, p_reg,
            *[float(x) for x in gamma],
            float(np.linalg.norm(g_theta)), float(np.linalg.norm(g_gamma)),
            sol.iterations, step,
        ))
        if accepted is None and solver_failed:
            status = "inner_failure"
            break
        if accepted is None:
            # every reachable equilibrium sat far above the current
            # objective: refuse to move and retry with the shrunken step
            continue
        theta_new, gamma_new, sol_new, _ = accepted
        dstep = math.hypot(float(np.linalg.norm(theta_new - theta)),
                           float(np.linalg.norm(gamma_new - gamma)))
        theta, gamma, sol = theta_new, gamma_new, sol_new
        if dstep <= config.tolerance:
            status = "converged"
            converged = True
            break

    traj = problem.extract_trajectory(sol.v)
    p_final = inverse_objective(traj.states, observations)
    return InverseResult(
        theta=theta, gamma=gamma, converged=converged, iterations=it,
        objective=p_final,
        regularized_objective=regularized_objective(p_final, gamma, c_gamma),
        status=status, history=history, solution=sol,
    )
