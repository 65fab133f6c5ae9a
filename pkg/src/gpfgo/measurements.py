"""Pseudorange and displacement-odometry measurement models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import PreconditionError, SingularGeometryError
from .gp import BIAS, POS, STATE_DIM, StateKnot

MIN_RANGE = 1.0


@dataclass(frozen=True)
class SatObservation:
    """One satellite's pseudorange observation at one epoch."""

    sat_id: str
    sat_pos: np.ndarray
    rho: float
    cn0: float
    elevation: float
    azimuth: float
    t: float
    los_truth: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "sat_pos", np.asarray(self.sat_pos, dtype=float).reshape(3))
        if not self.rho > 0:
            raise PreconditionError(f"pseudorange must be positive, got {self.rho}")
        if not 0.0 <= self.elevation <= np.pi / 2 + 1e-12:
            raise PreconditionError(f"elevation {self.elevation} outside [0, pi/2]")
        if not 0.0 <= self.azimuth < 2 * np.pi:
            raise PreconditionError(f"azimuth {self.azimuth} outside [0, 2pi)")


@dataclass(frozen=True)
class OdometryMeasurement:
    """World-frame displacement between two times."""

    t_i: float
    t_j: float
    delta_p: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "delta_p", np.asarray(self.delta_p, dtype=float).reshape(3))
        if not self.t_j > self.t_i:
            raise PreconditionError("odometry requires t_j > t_i")
        if not self.sigma > 0:
            raise PreconditionError("odometry sigma must be positive")


def _line_of_sight(p, sat_pos):
    diff = sat_pos - p
    rng = np.linalg.norm(diff)
    if not rng > MIN_RANGE:
        raise SingularGeometryError(f"receiver within {MIN_RANGE} m of satellite (range {rng})")
    return diff, rng


def pseudorange_residual(state: StateKnot, obs: SatObservation) -> float:
    """``rho - (|sat_pos - p| + b)`` in meters."""
    _line_of_sight(state.p, obs.sat_pos)
    e, _, _ = pseudorange_batch(state.x[None, :], obs.sat_pos[None, :], np.array([obs.rho]))
    return float(e[0])


def pseudorange_jacobian(state: StateKnot, obs: SatObservation) -> np.ndarray:
    """Derivative of :func:`pseudorange_residual` with respect to the 8-state."""
    diff, rng = _line_of_sight(state.p, obs.sat_pos)
    row = np.zeros(STATE_DIM)
    row[POS] = diff / rng
    row[BIAS] = -1.0
    return row


def odometry_residual(state_i: StateKnot, state_j: StateKnot,
                      odo: OdometryMeasurement) -> np.ndarray:
    """Whitened displacement residual ``((p_j - p_i) - delta_p) / sigma``."""
    return ((state_j.p - state_i.p) - odo.delta_p) / odo.sigma


def pseudorange_batch(x: np.ndarray, sat_pos: np.ndarray, rho: np.ndarray):
    """Vectorised residuals and Jacobian rows for states ``x`` (n, 8).

    Returns ``(e, H, rng)``; rows with range below 1 m are flagged by
    ``rng <= MIN_RANGE`` and left for the caller to reject.
    """
    p = x[:, POS]
    diff = sat_pos - p
    rng = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    # rho - |s - p| rewritten around |s| to avoid cancelling two ~1e7 m numbers,
    # which would leave the residual noisy at the 1e-8 m level
    s_norm = np.sqrt(np.einsum("ij,ij->i", sat_pos, sat_pos))
    with np.errstate(divide="ignore", invalid="ignore"):
        excess = (np.einsum("ij,ij->i", p, p) - 2.0 * np.einsum("ij,ij->i", sat_pos, p)) \
            / (rng + s_norm)
    e = (rho - s_norm) - excess - x[:, BIAS]
    H = np.zeros((len(rho), STATE_DIM))
    with np.errstate(divide="ignore", invalid="ignore"):
        H[:, POS] = diff / rng[:, None]
    H[:, BIAS] = -1.0
    return e, H, rng
