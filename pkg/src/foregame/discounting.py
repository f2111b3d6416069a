"""Exponential stage discounting.

Each agent weights its stage costs by an exponential profile
``gamma ** (t - time_origin)`` over a finite horizon.  ``time_origin`` is the
stage label whose weight equals one; stages are labelled
``time_origin, ..., time_origin + horizon - 1``.  Internally every horizon-T
profile reduces to the weights ``gamma ** (0, 1, ..., T-1)`` regardless of the
origin convention, so the origin only affects which integer labels are legal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GameConfigError, StageIndexError


@dataclass(frozen=True)
class DiscountSpec:
    """Discount profile for a single agent.

    gamma >= 0 (gamma = 1 recovers the undiscounted objective, gamma > 1 is
    allowed and weights the future more than the present), horizon >= 1.
    """

    gamma: float
    horizon: int
    time_origin: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise GameConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.horizon < 1:
            raise GameConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.time_origin not in (0, 1):
            raise GameConfigError(f"time_origin must be 0 or 1, got {self.time_origin}")


def discount_weight(spec: DiscountSpec, t: int) -> float:
    """Weight applied to the stage labelled ``t``.

    Uses the convention 0**0 == 1 so gamma = 0 gives a purely myopic profile
    (weight 1 at the origin stage, 0 afterwards).
    """
    lo = spec.time_origin
    hi = spec.time_origin + spec.horizon - 1
    if not (lo <= t <= hi):
        raise StageIndexError(f"stage {t} outside [{lo}, {hi}]")
    e = t - spec.time_origin
    if e == 0:
        return 1.0
    return float(spec.gamma) ** e


def stage_weights(gamma: float, horizon: int) -> np.ndarray:
    """Vector of weights gamma**s for s = 0..horizon-1 (origin-free form)."""
    if gamma < 0:
        raise GameConfigError(f"gamma must be >= 0, got {gamma}")
    w = np.empty(horizon)
    w[0] = 1.0
    for s in range(1, horizon):
        w[s] = w[s - 1] * gamma
    return w


def stage_weight_gradients(gamma: float, horizon: int) -> np.ndarray:
    """d/dgamma of stage_weights: s * gamma**(s-1), with the s = 0 entry 0."""
    if gamma < 0:
        raise GameConfigError(f"gamma must be >= 0, got {gamma}")
    g = np.zeros(horizon)
    if horizon == 1:
        return g
    p = 1.0  # gamma**(s-1)
    for s in range(1, horizon):
        g[s] = s * p
        p *= gamma
    return g


def effective_horizon(gamma: float, tol: float, horizon: int) -> int:
    """Smallest stage offset whose weight drops below ``tol``, capped at horizon.

    Returns the number of stages that carry weight >= tol; gamma >= 1 never
    decays so the full horizon is returned.
    """
    if not (0.0 < tol < 1.0):
        raise GameConfigError(f"tol must lie in (0, 1), got {tol}")
    if gamma < 0:
        raise GameConfigError(f"gamma must be >= 0, got {gamma}")
    if gamma >= 1.0:
        return horizon
    w = 1.0
    for t in range(1, horizon + 1):
        w *= gamma
        if w < tol:
            return t
    return horizon
