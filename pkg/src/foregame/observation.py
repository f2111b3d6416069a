"""Observation models and synthetic measurement generation.

Both supported models are coordinate selections of the joint state: FullState
keeps every coordinate, PositionOnly keeps each agent's planar position.  The
per-stage covariance is isotropic, noise_variance * I; a zero variance means
exact measurements.

Noise is reproducible: stage t draws from its own generator seeded by
(seed, t), and normal variates come from the inverse-CDF applied to uniform
draws, so a sequence prefix never changes when the horizon grows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import GameConfigError, IngestionError

_U53 = float(2 ** 53)


@dataclass(frozen=True)
class ObservationModel:
    kind: str                 # "FullState" or "PositionOnly"
    indices: tuple            # joint-state coordinates that are observed
    noise_variance: float
    state_dim: int

    def __post_init__(self):
        if self.kind not in ("FullState", "PositionOnly"):
            raise GameConfigError(f"unknown observation model kind {self.kind!r}")
        if self.noise_variance < 0:
            raise GameConfigError("noise_variance must be >= 0")
        if any(not (0 <= i < self.state_dim) for i in self.indices):
            raise GameConfigError("observation index out of state range")

    @property
    def output_dim(self):
        return len(self.indices)

    def weight(self):
        """Inverse covariance scale used in the fitting objective; identity
        weighting in the exact-measurement limit."""
        return 1.0 / self.noise_variance if self.noise_variance > 0 else 1.0


def full_state_model(game, noise_variance=0.0) -> ObservationModel:
    n = game.dims.state_dim
    return ObservationModel("FullState", tuple(range(n)), float(noise_variance), n)


def position_only_model(game, noise_variance=0.0) -> ObservationModel:
    idx = []
    for i in range(game.dims.num_agents):
        off = game.dims.state_offset(i)
        idx.extend([off, off + 1])
    return ObservationModel("PositionOnly", tuple(idx), float(noise_variance),
                            game.dims.state_dim)


@dataclass
class ObservationSequence:
    model: ObservationModel
    values: np.ndarray        # (T_obs, output_dim)
    seed: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 2 or self.values.shape[1] != self.model.output_dim:
            raise GameConfigError(
                f"observations must be (T_obs, {self.model.output_dim}), "
                f"got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise GameConfigError("observations must be finite")

    def __len__(self):
        return self.values.shape[0]


def expected_output(model: ObservationModel, state) -> np.ndarray:
    """Noise-free output h(x) for one joint state."""
    return np.asarray(state, float)[list(model.indices)]


def _stage_normals(seed, t, size):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(t)]))
    u = (rng.integers(0, 2 ** 53, size=size).astype(float) + 0.5) / _U53
    return ndtri(u)


def observe(model: ObservationModel, states, seed) -> ObservationSequence:
    """Sample y_t = h(x_t) + sigma * w_t for every stage of a state sequence.

    Each stage uses an independent substream derived from (seed, t), so
    observing a longer run of the same trajectory reproduces the shorter
    sequence as a prefix.
    """
    states = np.asarray(states, float)
    if states.ndim != 2 or states.shape[1] != model.state_dim:
        raise GameConfigError(
            f"states must be (T, {model.state_dim}), got {states.shape}")
    sigma = float(np.sqrt(model.noise_variance))
    ys = states[:, list(model.indices)].copy()
    if sigma > 0:
        for t in range(len(states)):
            ys[t] += sigma * _stage_normals(seed, t, model.output_dim)
    return ObservationSequence(model=model, values=ys, seed=int(seed))


# -- file formats ------------------------------------------------------------


def save_observations(path, obs: ObservationSequence):
    """Write values to `path` (CSV: t, y_0..y_{d-1}) and the model description
    to `path`.json."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y_{k}" for k in range(obs.model.output_dim)])
        for t, row in enumerate(obs.values):
            w.writerow([t] + [repr(float(v)) for v in row])
    sidecar = {
        "kind": obs.model.kind,
        "indices": list(obs.model.indices),
        "noise_variance": obs.model.noise_variance,
        "state_dim": obs.model.state_dim,
        "seed": obs.seed,
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_observations(path) -> ObservationSequence:
    try:
        with open(str(path) + ".json") as fh:
            sidecar = json.load(fh)
        model = ObservationModel(
            kind=sidecar["kind"], indices=tuple(sidecar["indices"]),
            noise_variance=float(sidecar["noise_variance"]),
            state_dim=int(sidecar["state_dim"]))
    except (OSError, KeyError, ValueError) as exc:
        raise IngestionError(f"bad observation sidecar: {exc}", path=str(path) + ".json")
    rows = []
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "t":
            raise IngestionError("expected header starting with 't'", path=path, row=1)
        if len(header) - 1 != model.output_dim:
            raise IngestionError(
                f"expected {model.output_dim} value columns, got {len(header) - 1}",
                path=path, row=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise IngestionError(str(exc), path=path, row=lineno)
            if len(vals) != model.output_dim or not all(np.isfinite(vals)):
                raise IngestionError("bad observation row", path=path, row=lineno)
            rows.append(vals)
    return ObservationSequence(model=model, values=np.array(rows),
                               seed=sidecar.get("seed"))
