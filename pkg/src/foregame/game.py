"""Game container: dimensions, per-agent objectives, constraints, trajectories.

The joint state stacks the agents' physical states in agent order.  All cost
terms and constraint blocks address the joint state through explicit indices,
so evaluation never needs to re-derive agent offsets.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import INEQUALITY_KINDS
from .costs import COST_KINDS
from .discounting import DiscountSpec, stage_weights
from .dynamics import DYNAMICS_KINDS, DoubleIntegrator2D, KinematicBicycle
from .errors import GameConfigError, IngestionError


@dataclass(frozen=True)
class GameDimensions:
    num_agents: int
    horizon: int
    dt: float
    state_dims: tuple      # per-agent physical state sizes
    control_dims: tuple

    def __post_init__(self):
        if self.num_agents < 1:
            raise GameConfigError("need at least one agent")
        if self.horizon < 2:
            raise GameConfigError("horizon must be >= 2")
        if self.dt <= 0:
            raise GameConfigError("dt must be positive")
        if len(self.state_dims) != self.num_agents or len(self.control_dims) != self.num_agents:
            raise GameConfigError("per-agent dimension lists must match num_agents")

    @property
    def state_dim(self):
        return int(sum(self.state_dims))

    def state_offset(self, i):
        return int(sum(self.state_dims[:i]))

    def state_slice(self, i):
        off = self.state_offset(i)
        return slice(off, off + self.state_dims[i])


@dataclass
class AgentObjective:
    """Discounted sum of stage cost terms for one agent."""

    discount: DiscountSpec
    terms: list

    @property
    def gamma(self):
        return self.discount.gamma


@dataclass
class GameDefinition:
    dims: GameDimensions
    dynamics: list                     # one model per agent
    objectives: list                   # one AgentObjective per agent
    constraints: list                  # inequality blocks
    x1: np.ndarray                     # initial joint state
    theta: np.ndarray                  # nominal learnable parameter values
    ground_truth: Optional[dict] = None

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, float)
        self.theta = np.asarray(self.theta, float)
        self.validate()

    # -- structure ---------------------------------------------------------

    @property
    def theta_dim(self):
        return len(self.theta)

    def gammas(self):
        return np.array([o.discount.gamma for o in self.objectives])

    def agent_pos_idx(self, i):
        off = self.dims.state_offset(i)
        return (off, off + 1)

    def validate(self):
        d = self.dims
        if len(self.dynamics) != d.num_agents:
            raise GameConfigError("one dynamics model per agent required")
        if len(self.objectives) != d.num_agents:
            raise GameConfigError("one objective per agent required")
        for i, (m, ds) in enumerate(zip(self.dynamics, d.state_dims)):
            if m.state_dim != ds or m.control_dim != d.control_dims[i]:
                raise GameConfigError(f"agent {i}: model dims disagree with GameDimensions")
        if self.x1.shape != (d.state_dim,):
            raise GameConfigError(f"x1 must have shape ({d.state_dim},), got {self.x1.shape}")
        if not np.all(np.isfinite(self.x1)):
            raise GameConfigError("x1 must be finite")
        for i, obj in enumerate(self.objectives):
            if obj.discount.horizon != d.horizon:
                raise GameConfigError(f"agent {i}: discount horizon != game horizon")
            for term in obj.terms:
                ti = term.theta_index
                if ti is not None and not (0 <= ti and ti + term.theta_size <= self.theta_dim):
                    raise GameConfigError(f"agent {i}: theta slice of {term.kind} out of range")
        for blk in self.constraints:
            if not (0 <= blk.owner < d.num_agents):
                raise GameConfigError(f"constraint owner {blk.owner} out of range")

    # -- simulation and evaluation ------------------------------------------

    def rollout(self, controls=None):
        """Integrate the dynamics from x1.  controls: per-agent (T, m_i) arrays
        or None for zero controls.  Returns a Trajectory."""
        d = self.dims
        T = d.horizon
        if controls is None:
            controls = [np.zeros((T, m)) for m in d.control_dims]
        controls = [np.asarray(u, float) for u in controls]
        for i, u in enumerate(controls):
            if u.shape != (T, d.control_dims[i]):
                raise GameConfigError(
                    f"agent {i}: controls must be ({T}, {d.control_dims[i]}), got {u.shape}")
        xs = np.empty((T, d.state_dim))
        xs[0] = self.x1
        for s in range(T - 1):
            for i, model in enumerate(self.dynamics):
                sl = d.state_slice(i)
                xs[s + 1, sl] = model.step(xs[s, sl], controls[i][s], d.dt)
        return Trajectory(states=xs, controls=tuple(controls))

    def dynamics_residual(self, states, controls):
        """(T-1, n) array of x_{s+1} - f(x_s, u_s) transition defects."""
        d = self.dims
        T = d.horizon
        out = np.empty((T - 1, d.state_dim))
        for i, model in enumerate(self.dynamics):
            sl = d.state_slice(i)
            pred = model.step_batch(states[:-1, sl], np.asarray(controls[i])[:-1], d.dt)
            out[:, sl] = states[1:, sl] - pred
        return out

    def agent_total_cost(self, traj, i, theta=None, gamma=None, smoothed=True):
        """Discounted objective of agent i along a trajectory."""
        theta = self.theta if theta is None else np.asarray(theta, float)
        obj = self.objectives[i]
        g = obj.discount.gamma if gamma is None else float(gamma)
        w = stage_weights(g, self.dims.horizon)
        us = np.asarray(traj.controls[i], float)
        total = np.zeros(self.dims.horizon)
        for term in obj.terms:
            if not smoothed and term.kind == "CollisionHinge":
                total += term.value_batch_unsmoothed(traj.states, us, theta)
            else:
                total += term.value_batch(traj.states, us, theta)
        return float(w @ total)

    def constraint_values(self, traj):
        """Stacked inequality values h(traj) in block declaration order."""
        vals = []
        for blk in self.constraints:
            u_own = np.asarray(traj.controls[blk.owner], float)
            vals.append(blk.values(traj.states, u_own))
        return np.concatenate(vals) if vals else np.zeros(0)

    def feasibility_report(self, traj):
        """(max |dynamics defect|, min inequality value); min is +inf if none."""
        defect = self.dynamics_residual(traj.states, traj.controls)
        dyn = float(np.max(np.abs(defect))) if defect.size else 0.0
        h = self.constraint_values(traj)
        return dyn, (float(np.min(h)) if h.size else math.inf)

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "dims": {
                "num_agents": self.dims.num_agents,
                "horizon": self.dims.horizon,
                "dt": self.dims.dt,
                "state_dims": list(self.dims.state_dims),
                "control_dims": list(self.dims.control_dims),
            },
            "dynamics": [_dataclass_dict(m) for m in self.dynamics],
            "objectives": [
                {
                    "discount": {
                        "gamma": o.discount.gamma,
                        "horizon": o.discount.horizon,
                        "time_origin": o.discount.time_origin,
                    },
                    "terms": [_dataclass_dict(t) for t in o.terms],
                }
                for o in self.objectives
            ],
            "constraints": [_dataclass_dict(b) for b in self.constraints],
            "x1": self.x1.tolist(),
            "theta": self.theta.tolist(),
            **({"ground_truth": self.ground_truth} if self.ground_truth else {}),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            dims = GameDimensions(
                num_agents=int(data["dims"]["num_agents"]),
                horizon=int(data["dims"]["horizon"]),
                dt=float(data["dims"]["dt"]),
                state_dims=tuple(data["dims"]["state_dims"]),
                control_dims=tuple(data["dims"]["control_dims"]),
            )
            dynamics = [_dataclass_from_dict(DYNAMICS_KINDS, d) for d in data["dynamics"]]
            objectives = []
            for o in data["objectives"]:
                spec = DiscountSpec(
                    gamma=float(o["discount"]["gamma"]),
                    horizon=int(o["discount"]["horizon"]),
                    time_origin=int(o["discount"].get("time_origin", 0)),
                )
                terms = [_dataclass_from_dict(COST_KINDS, t) for t in o["terms"]]
                objectives.append(AgentObjective(discount=spec, terms=terms))
            blocks = [_dataclass_from_dict(INEQUALITY_KINDS, b) for b in data["constraints"]]
        except (KeyError, TypeError) as exc:
            raise GameConfigError(f"malformed game description: {exc}") from exc
        return cls(
            dims=dims,
            dynamics=dynamics,
            objectives=objectives,
            constraints=blocks,
            x1=np.asarray(data["x1"], float),
            theta=np.asarray(data.get("theta", []), float),
            ground_truth=data.get("ground_truth"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Trajectory:
    """States (T, n) with states[0] equal to the game's initial state, and one
    (T, m_i) control array per agent; controls[.][T-1] affects costs only."""

    states: np.ndarray
    controls: tuple

    def __post_init__(self):
        self.states = np.asarray(self.states, float)
        self.controls = tuple(np.asarray(u, float) for u in self.controls)

    @property
    def horizon(self):
        return self.states.shape[0]


def _dataclass_dict(obj):
    """Dataclass -> plain dict with kind tag; inf bounds map to None."""
    out = {"kind": obj.kind}
    for f in dataclasses.fields(obj):
        if not f.init:
            continue
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = _tuple_to_json(v)
        elif isinstance(v, float) and not math.isfinite(v):
            v = None
        out[f.name] = v
    return out


def _tuple_to_json(v):
    out = []
    for item in v:
        if dataclasses.is_dataclass(item):
            d = {}
            for f in dataclasses.fields(item):
                if f.init:
                    d[f.name] = _tuple_to_json(getattr(item, f.name)) \
                        if isinstance(getattr(item, f.name), tuple) else getattr(item, f.name)
            d["_type"] = type(item).__name__
            out.append(d)
        elif isinstance(item, tuple):
            out.append(_tuple_to_json(item))
        elif isinstance(item, float) and not math.isfinite(item):
            out.append(None)
        else:
            out.append(item)
    return out


def _json_to_tuple(v, none_value):
    out = []
    for item in v:
        if isinstance(item, list):
            out.append(_json_to_tuple(item, none_value))
        elif item is None:
            out.append(none_value)
        else:
            out.append(item)
    return tuple(out)


def _dataclass_from_dict(registry, data):
    kind = data.get("kind")
    if kind not in registry:
        raise GameConfigError(f"unknown kind {kind!r}")
    cls = registry[kind]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if not f.init or f.name not in data:
            continue
        v = data[f.name]
        if isinstance(v, list):
            none_value = math.inf if "high" in f.name else -math.inf
            v = _rebuild_nested(f.name, v, none_value)
        elif v is None and f.name not in ("theta_index",):
            v = math.inf if "high" in f.name else -math.inf
        kwargs[f.name] = v
    return cls(**kwargs)


def _rebuild_nested(name, v, none_value):
    from .constraints import CircleBound, SigmoidWall
    sub = {"CircleBound": CircleBound, "SigmoidWall": SigmoidWall}
    out = []
    for item in v:
        if isinstance(item, dict):
            cls = sub[item.pop("_type")]
            item = {k: (tuple(x) if isinstance(x, list) else x) for k, x in item.items()}
            out.append(cls(**item))
        elif isinstance(item, list):
            out.append(_json_to_tuple(item, none_value))
        elif item is None:
            out.append(none_value)
        else:
            out.append(item)
    return tuple(out)


# -- trajectory CSV ----------------------------------------------------------

TRAJ_HEADER = ["frame", "agent_id", "x_m", "y_m", "vx_mps", "vy_mps", "heading_rad"]


def trajectory_to_rows(game, traj):
    """Flatten a trajectory into (frame, agent, kinematic columns) rows."""
    rows = []
    for s in range(traj.horizon):
        for i, model in enumerate(game.dynamics):
            sub = traj.states[s, game.dims.state_slice(i)]
            if isinstance(model, KinematicBicycle):
                px, py, v, psi = sub
                vx, vy, heading = v * math.cos(psi), v * math.sin(psi), psi
            else:
                px, py, vx, vy = sub
                heading = math.atan2(vy, vx) if (vx * vx + vy * vy) > 1e-12 else 0.0
            rows.append([s, i, px, py, vx, vy, heading])
    return rows


def save_trajectory_csv(path, game, traj):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_HEADER)
        for row in trajectory_to_rows(game, traj):
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def load_trajectory_frames(path):
    """Read a trajectory CSV into {agent_id: (frames, 5) array of
    (x, y, vx, vy, heading)} plus the sorted frame index list."""
    by_agent = {}
    frames = set()
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRAJ_HEADER:
            raise IngestionError(f"expected header {TRAJ_HEADER}", path=path, row=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRAJ_HEADER):
                raise IngestionError(
                    f"expected {len(TRAJ_HEADER)} columns, got {len(row)}",
                    path=path, row=lineno)
            try:
                frame = int(row[0])
                agent = int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise IngestionError(str(exc), path=path, row=lineno) from exc
            if not all(math.isfinite(v) for v in vals):
                raise IngestionError("non-finite value", path=path, row=lineno)
            by_agent.setdefault(agent, {})[frame] = vals
            frames.add(frame)
    frames = sorted(frames)
    out = {}
    for agent, rec in sorted(by_agent.items()):
        missing = [f for f in frames if f not in rec]
        if missing:
            raise IngestionError(
                f"agent {agent} missing frames {missing[:5]}", path=path)
        out[agent] = np.array([rec[f] for f in frames])
    return out, frames
