"""Receding-horizon planning against an agent whose intent is estimated online.

The ego vehicle repeatedly (1) observes the other agent's position through
noise, (2) refits the other agent's goal and discount factor from a sliding
window of recent observations, (3) solves a short planning game under the
fitted model, and (4) applies the first control of its own plan.  The other
agent follows a scripted constant-velocity crossing path (optionally braking
when the ego gets close), so estimation quality and plan safety can be judged
against known motion.

The window grows from the second observation instead of waiting until it is
full, and each refit starts from a constant-velocity extrapolation of the
smoothed recent track (a motion prior the game fit then refines).  Both keep
the intent estimate from lagging a moving agent, which otherwise steers the
plan toward where the agent used to be heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import ControlBox
from .costs import CollisionHinge, ControlQuadratic, GoalQuadratic
from .discounting import DiscountSpec
from .dynamics import DoubleIntegrator2D
from .errors import NonConvergence
from .game import AgentObjective, GameDefinition, GameDimensions
from .inverse import InverseConfig, infer
from .micp import SolverConfig, solve_micp, warm_start
from .observation import ObservationModel, ObservationSequence, _stage_normals
from .transcription import transcribe


@dataclass(frozen=True)
class RhConfig:
    steps: int = 50
    dt: float = 0.1
    plan_horizon: int = 16
    window: int = 10                  # observation frames kept = window + 1
    noise_std: float = 0.1
    ego_start: tuple = (0.0, 0.0, 0.0, 0.0)
    ego_goal: tuple = (10.0, 0.0)
    other_start: tuple = (7.0, 3.0)
    other_velocity: tuple = (0.0, -2.4)
    goal_weight: float = 1.0
    control_weight: float = 0.1
    hinge_weight: float = 30.0
    d_min: float = 1.0
    margin: float = 6.25              # squared-distance hinge threshold factor
    hinge_kappa: float = 8.0          # gentle smoothing keeps plans trackable
    accel_limit: float = 6.0
    plan_control_boxes: bool = False  # soft limits in-plan; commands are clipped
    est_iterations: int = 8
    est_rate: float = 0.15
    est_regularizer: float = 1e-3
    est_lookahead: float = 1.0        # seconds of motion prior for the goal
    est_gamma_floor: float = 0.25    # gamma = 0 nulls the fitted agent's KKT
    reactive_braking: bool = True
    brake_radius: float = 2.0
    brake_factor: float = 0.3
    solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(max_iterations=80))


@dataclass
class RhResult:
    ego_states: np.ndarray       # (steps + 1, 4)
    other_states: np.ndarray     # (steps + 1, 4)
    controls: np.ndarray         # (steps, 2) applied ego accelerations
    estimates: np.ndarray        # (steps, 3): goal_x, goal_y, gamma of other
    distances: np.ndarray        # (steps + 1,) center distances
    min_distance: float
    initial_goal_distance: float
    final_goal_distance: float
    plan_failures: int
    estimation_failures: int


def _pair_game(cfg: RhConfig, x1, theta_other, gamma_other, horizon,
               with_boxes) -> GameDefinition:
    """Two double integrators: ego (agent 0, known objective, undiscounted)
    and the modelled other agent (goal learnable through theta)."""
    dims = GameDimensions(num_agents=2, horizon=horizon, dt=cfg.dt,
                          state_dims=(4, 4), control_dims=(2, 2))
    pos = [(0, 1), (4, 5)]
    hinge = lambda i: CollisionHinge(
        weight=cfg.hinge_weight, d_min=cfg.d_min, margin=cfg.margin,
        kappa=cfg.hinge_kappa, pos_idx=pos[i], other_pos_idx=pos[1 - i])
    objectives = [
        AgentObjective(
            discount=DiscountSpec(gamma=1.0, horizon=horizon),
            terms=[GoalQuadratic(weight=cfg.goal_weight, goal=cfg.ego_goal,
                                 pos_idx=pos[0]),
                   ControlQuadratic(weight=cfg.control_weight), hinge(0)]),
        AgentObjective(
            discount=DiscountSpec(gamma=float(gamma_other), horizon=horizon),
            terms=[GoalQuadratic(weight=cfg.goal_weight,
                                 goal=tuple(theta_other), pos_idx=pos[1],
                                 theta_index=0),
                   ControlQuadratic(weight=cfg.control_weight), hinge(1)]),
    ]
    a = cfg.accel_limit
    boxes = [ControlBox(owner=i, low=(-a, -a), high=(a, a)) for i in range(2)] \
        if with_boxes else []
    return GameDefinition(
        dims=dims, dynamics=[DoubleIntegrator2D(), DoubleIntegrator2D()],
        objectives=objectives, constraints=boxes, x1=np.asarray(x1, float),
        theta=np.asarray(theta_other, float))


def _track_velocity(points, dt):
    """Least-squares constant velocity of a short noisy track (n, 2)."""
    t = np.arange(len(points)) * dt
    t = t - t.mean()
    return (t @ (points - points.mean(axis=0))) / float(t @ t)


def run_receding_horizon(seed=0, config: RhConfig = RhConfig()) -> RhResult:
    cfg = config
    ego = np.array(cfg.ego_start, float)
    other = np.array(list(cfg.other_start) + list(cfg.other_velocity), float)
    model = DoubleIntegrator2D()
    goal = np.asarray(cfg.ego_goal, float)

    ego_log = [ego.copy()]
    other_log = [other.copy()]
    controls = np.zeros((cfg.steps, 2))
    estimates = np.zeros((cfg.steps, 3))
    obs_pos = []                    # noisy other positions, one per step
    sigma = float(cfg.noise_std)

    theta_hat = None
    gamma_hat = 1.0
    plan_sol = None
    pending = None                  # (controls array, age) fallback plan
    plan_failures = 0
    estimation_failures = 0

    obs_model = ObservationModel("PositionOnly", (0, 1, 4, 5), sigma ** 2, 8)

    for k in range(cfg.steps):
        y = other[0:2] + sigma * _stage_normals(seed, k, 2)
        obs_pos.append(y)
        if theta_hat is None:
            theta_hat = y.copy()

        # refit the other agent's goal and discount on the sliding window,
        # which grows from the second observation until it reaches full size
        W = min(cfg.window, k)
        v_smooth = None
        if W >= 2:
            o = np.array(obs_pos[k - W:k + 1])
            v_smooth = _track_velocity(o, cfg.dt)
            x1_w = np.concatenate([ego_log[k - W], o[0], v_smooth])
            theta_prior = o[-1] + cfg.est_lookahead * v_smooth
            win_game = _pair_game(cfg, x1_w, theta_prior, gamma_hat, W + 1,
                                  with_boxes=False)
            ego_pos = np.array([s[0:2] for s in ego_log[k - W:k + 1]])
            win_obs = ObservationSequence(
                model=obs_model, values=np.hstack([ego_pos, o]))
            try:
                fit = infer(win_game, win_obs, theta0=theta_prior,
                            gamma0=np.array([1.0, gamma_hat]),
                            config=InverseConfig(
                                max_iterations=cfg.est_iterations,
                                learning_rate=cfg.est_rate,
                                tolerance=1e-3,
                                gamma_regularizer=cfg.est_regularizer,
                                gamma_min=cfg.est_gamma_floor,
                                gamma_fixed_mask=(True, False),
                                dedupe=True,
                                solver=cfg.solver))
                theta_hat = fit.theta.copy()
                gamma_hat = float(fit.gamma[1])
            except NonConvergence:
                estimation_failures += 1
                theta_hat = theta_prior.copy()
        estimates[k] = (theta_hat[0], theta_hat[1], gamma_hat)

        # plan from the true ego state and the observed other state; the
        # anchor velocity is smoothed over a short recent sub-window so it
        # stays responsive if the other agent changes speed
        if k >= 2:
            recent = np.array(obs_pos[max(0, k - 5):k + 1])
            other_v = _track_velocity(recent, cfg.dt)
        elif k == 1:
            other_v = (obs_pos[1] - obs_pos[0]) / cfg.dt
        else:
            other_v = np.zeros(2)
        x1_p = np.concatenate([ego, y, other_v])
        plan_game = _pair_game(cfg, x1_p, theta_hat, gamma_hat,
                               cfg.plan_horizon,
                               with_boxes=cfg.plan_control_boxes)
        problem = transcribe(plan_game, dedupe=True)
        v0 = warm_start(problem, plan_sol) if plan_sol is not None else None
        sol = solve_micp(problem, v0=v0, config=cfg.solver)
        if not sol.converged and v0 is not None:
            # the previous plan's branch can fold as the interaction shifts;
            # a cold start usually reaches the surviving equilibrium
            sol = solve_micp(problem, config=cfg.solver)
        if sol.converged:
            plan_sol = sol
            plan_controls = problem.extract_trajectory(sol.v).controls[0]
            pending = (plan_controls, 0)
            u = plan_controls[0]
        else:
            plan_failures += 1
            if pending is not None and pending[1] + 1 < len(pending[0]):
                plan, age = pending
                u = plan[age + 1]
                pending = (plan, age + 1)
            else:
                u = np.zeros(2)
        u = np.clip(u, -cfg.accel_limit, cfg.accel_limit)
        controls[k] = u

        ego = model.step(ego, u, cfg.dt)
        v = other[2:4].copy()
        if cfg.reactive_braking and \
                np.hypot(*(ego[0:2] - other[0:2])) < cfg.brake_radius:
            v = v * cfg.brake_factor
        other = np.array([other[0] + cfg.dt * v[0], other[1] + cfg.dt * v[1],
                          other[2], other[3]])
        ego_log.append(ego.copy())
        other_log.append(other.copy())

    ego_states = np.array(ego_log)
    other_states = np.array(other_log)
    d = np.linalg.norm(ego_states[:, 0:2] - other_states[:, 0:2], axis=1)
    return RhResult(
        ego_states=ego_states, other_states=other_states, controls=controls,
        estimates=estimates, distances=d, min_distance=float(np.min(d)),
        initial_goal_distance=float(np.linalg.norm(ego_states[0, 0:2] - goal)),
        final_goal_distance=float(np.linalg.norm(ego_states[-1, 0:2] - goal)),
        plan_failures=plan_failures, estimation_failures=estimation_failures)
