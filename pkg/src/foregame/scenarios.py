"""Scenario builders.

Two stock setups:

* ``build_crosswalk``: two planar double integrators crossing a shared open
  area on diagonal paths, coupled through a smooth collision penalty.  Ground
  truth (goals and discount factors) is embedded, so it doubles as the
  synthetic benchmark for parameter recovery.
* ``build_intersection``: a four-agent scene (two cars on a curved corridor,
  two pedestrians on the sidewalks) ingested from a trajectory CSV at camera
  rate and downsampled to the solver rate.  Cost references (lane centerline,
  cruise speeds, pedestrian goals) are fitted from the data.  A synthetic
  fixture generator is included so the pipeline runs without external files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .constraints import (CircleBound, CollisionSeparation, ControlBox,
                          RoadRegion, SigmoidWall, VelocityBox)
from .costs import (CollisionHinge, ControlQuadratic, GoalQuadratic,
                    LaneCenterQuadratic, VelocityTracking)
from .discounting import DiscountSpec
from .dynamics import DoubleIntegrator2D, KinematicBicycle
from .errors import GameConfigError, IngestionError
from .game import (AgentObjective, GameDefinition, GameDimensions,
                   TRAJ_HEADER, load_trajectory_frames)


# -- crosswalk ----------------------------------------------------------------

def build_crosswalk(horizon=25, dt=0.1, gamma=(0.7, 0.8),
                    goal_weight=1.0, control_weight=0.1,
                    collision_weight=10.0, d_min=1.0, margin=2.25, kappa=4.0,
                    accel_limit=40.0, velocity_limit=25.0) -> GameDefinition:
    """Two agents crossing diagonally, goals slightly offset so their straight
    paths meet at different times.  theta holds the two goal points; the
    embedded ground truth records the generating (theta, gamma)."""
    dims = GameDimensions(num_agents=2, horizon=horizon, dt=dt,
                          state_dims=(4, 4), control_dims=(2, 2))
    x1 = np.array([-5.0, 4.5, 0.0, 0.0,
                   5.0, 5.5, 0.0, 0.0])
    goals = np.array([5.0, -5.5, -5.0, -4.5])
    pos = [(0, 1), (4, 5)]

    objectives = []
    for i in range(2):
        j = 1 - i
        terms = [
            GoalQuadratic(weight=goal_weight, goal=tuple(goals[2 * i:2 * i + 2]),
                          pos_idx=pos[i], theta_index=2 * i),
            ControlQuadratic(weight=control_weight),
            CollisionHinge(weight=collision_weight, d_min=d_min, margin=margin,
                           pos_idx=pos[i], other_pos_idx=pos[j], kappa=kappa),
        ]
        objectives.append(AgentObjective(
            discount=DiscountSpec(gamma=float(gamma[i]), horizon=horizon),
            terms=terms))

    a, vmax = float(accel_limit), float(velocity_limit)
    constraints = []
    for i in range(2):
        off = dims.state_offset(i)
        constraints.append(ControlBox(owner=i, low=(-a, -a), high=(a, a)))
        constraints.append(VelocityBox(owner=i, low=(-vmax, -vmax),
                                       high=(vmax, vmax),
                                       vel_idx=(off + 2, off + 3)))

    return GameDefinition(
        dims=dims,
        dynamics=[DoubleIntegrator2D(control_low=(-a, -a), control_high=(a, a),
                                     velocity_low=(-vmax, -vmax),
                                     velocity_high=(vmax, vmax))
                  for _ in range(2)],
        objectives=objectives,
        constraints=constraints,
        x1=x1,
        theta=goals.copy(),
        ground_truth={"theta": goals.tolist(), "gamma": [float(g) for g in gamma]},
    )


# -- intersection -------------------------------------------------------------

def generate_intersection_fixture(path=None, frames=163, fps=25.0):
    """Synthesize camera-rate tracks for two cars and two pedestrians.

    Cars drive the east-west corridor in opposite lanes along a gentle
    S-curve; pedestrians walk the sidewalks.  Positions and velocities are
    closed-form, so the output is reproducible byte for byte.  Returns
    {agent_id: (frames, 5) array of (x, y, vx, vy, heading)}; also written as
    a trajectory CSV when ``path`` is given.
    """
    t = np.arange(frames) / fps

    def car(sign):
        px = sign * (-16.0 + 4.8 * t)
        s = expit(0.8 * px)
        py = sign * (-2.05 + 0.6 * s)
        vx = sign * 4.8 * np.ones_like(t)
        vy = sign * 0.6 * 0.8 * s * (1.0 - s) * sign * 4.8
        return px, py, vx, vy

    data = {}
    for agent, sign in ((0, 1.0), (1, -1.0)):
        px, py, vx, vy = car(sign)
        heading = np.arctan2(vy, vx)
        data[agent] = np.stack([px, py, vx, vy, heading], axis=1)

    px = -12.0 + 1.6 * t
    py = 4.8 + 0.15 * np.sin(0.9 * t)
    vx = 1.6 * np.ones_like(t)
    vy = 0.15 * 0.9 * np.cos(0.9 * t)
    data[2] = np.stack([px, py, vx, vy, np.arctan2(vy, vx)], axis=1)

    px = 8.0 - 1.5 * t
    py = -4.8 + 0.12 * np.sin(1.1 * t + 0.4)
    vx = -1.5 * np.ones_like(t)
    vy = 0.12 * 1.1 * np.cos(1.1 * t + 0.4)
    data[3] = np.stack([px, py, vx, vy, np.arctan2(vy, vx)], axis=1)

    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRAJ_HEADER)
            for k in range(frames):
                for agent in sorted(data):
                    w.writerow([k, agent] + [repr(float(v)) for v in data[agent][k]])
    return data


def fit_lane_centerline(points, horizon, degree=5):
    """Per-stage lane reference from observed positions.

    Fits x and y as polynomials of normalized cumulative arc length, then
    samples ``horizon`` points at equal parameter spacing.  The degree drops
    to (distinct samples - 1) when the track is too short for the requested
    one.  A stationary track collapses to its first point.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
        raise GameConfigError("lane fit needs an (M, 2) array of positions")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] <= 0.0:
        return np.repeat(pts[:1], horizon, axis=0)
    s = s / s[-1]
    keep = np.concatenate([[True], np.diff(s) > 1e-12])
    su, pu = s[keep], pts[keep]
    deg = max(1, min(degree, len(su) - 1))
    grid = np.linspace(0.0, 1.0, horizon)
    out = np.empty((horizon, 2))
    for a in range(2):
        poly = np.polynomial.Polynomial.fit(su, pu[:, a], deg)
        out[:, a] = poly(grid)
    return out


@dataclass
class IntersectionScenario:
    game: GameDefinition
    positions: dict          # agent_id -> (T, 2) downsampled positions
    stage_times: np.ndarray  # (T,) seconds from the first kept frame
    frame_indices: np.ndarray
    lane_centers: dict       # car agent_id -> (T, 2) fitted reference
    states: np.ndarray       # (T, 16) game states composed from the tracks


def build_intersection(csv_path=None, downsample=6, fps=25.0,
                       gamma=(0.92, 0.92, 0.95, 0.95), car_ids=(0, 1),
                       lane_degree=5, lane_weight=1.0, speed_weight=0.5,
                       hinge_weight=5.0, d_min=1.5, margin=1.2,
                       corridor_speed_limit=9.0, walk_speed_limit=2.5
                       ) -> IntersectionScenario:
    """Ingest camera-rate tracks and assemble the four-agent corridor game.

    Keeps every ``downsample``-th frame (trailing remainder frames are
    dropped), so the game step is downsample/fps seconds.  Cars get bicycle
    models with lane-tracking and cruise-speed costs plus road-region and
    pedestrian-separation constraints; pedestrians get double integrators
    with goal costs.  Learnable parameters: the two cruise speeds and the two
    pedestrian goals, initialized from the data itself.
    """
    if csv_path is None:
        data = generate_intersection_fixture()
    else:
        data, _ = load_trajectory_frames(csv_path)
    ids = sorted(data)
    if len(ids) != 4:
        raise IngestionError(f"expected 4 agents, got {len(ids)}", path=csv_path)
    if not set(car_ids) <= set(ids):
        raise IngestionError(f"car ids {car_ids} not among agents {ids}",
                             path=csv_path)
    frames = len(data[ids[0]])
    idx = np.arange(0, frames, downsample)
    if len(idx) < 2:
        raise IngestionError("too few frames after downsampling", path=csv_path)
    T = len(idx)
    dt = downsample / fps

    kept = {i: data[i][idx] for i in ids}
    positions = {i: kept[i][:, 0:2].copy() for i in ids}
    speeds = {i: np.hypot(kept[i][:, 2], kept[i][:, 3]) for i in ids}

    dims = GameDimensions(num_agents=4, horizon=T, dt=dt,
                          state_dims=(4, 4, 4, 4), control_dims=(2, 2, 2, 2))
    dynamics, states = [], np.empty((T, 16))
    for i in ids:
        off = dims.state_offset(i)
        states[:, off:off + 2] = kept[i][:, 0:2]
        if i in car_ids:
            dynamics.append(KinematicBicycle())
            states[:, off + 2] = speeds[i]
            states[:, off + 3] = kept[i][:, 4]
        else:
            dynamics.append(DoubleIntegrator2D())
            states[:, off + 2:off + 4] = kept[i][:, 2:4]
    x1 = states[0].copy()

    ped_ids = [i for i in ids if i not in car_ids]
    theta = np.empty(2 + 2 * len(ped_ids))
    theta[0] = float(np.mean(speeds[car_ids[0]]))
    theta[1] = float(np.mean(speeds[car_ids[1]]))
    for k, j in enumerate(ped_ids):
        theta[2 + 2 * k:4 + 2 * k] = positions[j][-1]

    lane_centers = {c: fit_lane_centerline(positions[c], T, degree=lane_degree)
                    for c in car_ids}

    def pos_idx(i):
        off = dims.state_offset(i)
        return (off, off + 1)

    objectives = []
    for i in ids:
        off = dims.state_offset(i)
        hinges = [
            CollisionHinge(weight=hinge_weight, d_min=d_min, margin=margin,
                           pos_idx=pos_idx(i), other_pos_idx=pos_idx(j))
            for j in ids
            if j != i and (i in car_ids or j in car_ids)
        ]
        if i in car_ids:
            k = list(car_ids).index(i)
            terms = [
                VelocityTracking(weight=speed_weight, target=float(theta[k]),
                                 v_idx=off + 2, theta_index=k),
                LaneCenterQuadratic(weight=lane_weight,
                                    centers=tuple(map(tuple, lane_centers[i])),
                                    pos_idx=pos_idx(i)),
                ControlQuadratic(weight=0.2),
            ] + hinges
        else:
            k = ped_ids.index(i)
            terms = [
                GoalQuadratic(weight=0.5, goal=tuple(theta[2 + 2 * k:4 + 2 * k]),
                              pos_idx=pos_idx(i), theta_index=2 + 2 * k),
                ControlQuadratic(weight=0.1),
            ] + hinges
        objectives.append(AgentObjective(
            discount=DiscountSpec(gamma=float(gamma[i]), horizon=T),
            terms=terms))

    walls = (
        SigmoidWall(axis=0, side=-1, offset=3.3, amplitude=0.4,
                    sharpness=0.5, shift=2.0),
        SigmoidWall(axis=0, side=1, offset=-3.7, amplitude=0.4,
                    sharpness=0.5, shift=-2.0),
    )
    circles = (CircleBound(center=(0.0, 6.5), radius=2.0, side=1),
               CircleBound(center=(0.0, -6.5), radius=2.0, side=1))
    constraints = []
    for c in car_ids:
        off = dims.state_offset(c)
        constraints.append(ControlBox(owner=c, low=(-3.0, -0.6), high=(3.0, 0.6)))
        constraints.append(VelocityBox(owner=c, low=(0.0,),
                                       high=(corridor_speed_limit,),
                                       vel_idx=(off + 2,)))
        constraints.append(RoadRegion(owner=c, pos_idx=pos_idx(c),
                                      circles=circles, walls=walls))
        for j in ped_ids:
            constraints.append(CollisionSeparation(
                owner=c, other=j, d_min=d_min, margin=margin,
                pos_idx=pos_idx(c), other_pos_idx=pos_idx(j)))
    w = float(walk_speed_limit)
    for j in ped_ids:
        off = dims.state_offset(j)
        constraints.append(ControlBox(owner=j, low=(-1.5, -1.5), high=(1.5, 1.5)))
        constraints.append(VelocityBox(owner=j, low=(-w, -w), high=(w, w),
                                       vel_idx=(off + 2, off + 3)))

    game = GameDefinition(dims=dims, dynamics=dynamics, objectives=objectives,
                          constraints=constraints, x1=x1, theta=theta)
    return IntersectionScenario(
        game=game, positions=positions,
        stage_times=idx / fps, frame_indices=idx, lane_centers=lane_centers,
        states=states)
