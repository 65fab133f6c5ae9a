"""Constant-velocity (white-noise-on-acceleration) Gaussian-process trajectory.

The state at a knot is the 8-vector ``[px, py, pz, vx, vy, vz, b, d]``: position,
velocity, receiver clock bias and clock drift, all in meters (per second). Each
(position, velocity) axis pair and the (bias, drift) pair is an independent
double integrator driven by white noise, so every matrix here is block-diagonal
over four 2x2 blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateIntervalError, OutOfBracketError, PreconditionError

STATE_DIM = 8
POS = slice(0, 3)
VEL = slice(3, 6)
BIAS = 6
DRIFT = 7

# (value index, rate index) for each independent double integrator
AXIS_PAIRS = ((0, 3), (1, 4), (2, 5), (6, 7))

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class StateKnot:
    """Trajectory state at one knot time."""

    t: float
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "d", float(self.d))
        if not (np.isfinite(self.t) and np.all(np.isfinite(self.p))
                and np.all(np.isfinite(self.v)) and np.isfinite(self.b)
                and np.isfinite(self.d)):
            raise PreconditionError("StateKnot components must be finite")

    @property
    def x(self) -> np.ndarray:
        """The 8-vector ``[p, v, b, d]``."""
        return np.concatenate([self.p, self.v, [self.b, self.d]])

    @classmethod
    def from_vector(cls, t, x) -> "StateKnot":
        x = np.asarray(x, dtype=float)
        return cls(t, x[POS], x[VEL], x[BIAS], x[DRIFT])


@dataclass(frozen=True)
class GpHyperParams:
    """Power spectral densities of the white acceleration / clock-drift noise.

    ``qc_pv`` is per axis (m^2/s^3), ``qc_clk`` drives the clock drift.
    """

    qc_pv: tuple = (1.0, 1.0, 1.0)
    qc_clk: float = 0.1

    def __post_init__(self):
        qc_pv = tuple(float(q) for q in np.broadcast_to(np.asarray(self.qc_pv, float), (3,)))
        object.__setattr__(self, "qc_pv", qc_pv)
        object.__setattr__(self, "qc_clk", float(self.qc_clk))
        if min(qc_pv) <= 0 or self.qc_clk <= 0:
            raise PreconditionError("GP power spectral densities must be strictly positive")

    @property
    def psd(self) -> tuple:
        """PSD of each block in ``AXIS_PAIRS`` order."""
        return self.qc_pv + (self.qc_clk,)


@dataclass(frozen=True)
class GpInterpolant:
    """Posterior-mean interpolation ``x(t_i + tau) = lam @ x_i + psi @ x_j``."""

    i: int
    j: int
    tau: float
    lam: np.ndarray
    psi: np.ndarray


def _embed(blocks) -> np.ndarray:
    out = np.zeros((STATE_DIM, STATE_DIM))
    for (a, r), blk in zip(AXIS_PAIRS, blocks):
        idx = np.array([a, r])
        out[np.ix_(idx, idx)] = blk
    return out


def _phi_block(dt):
    return np.array([[1.0, dt], [0.0, 1.0]])


def _q_block(dt, q):
    return q * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0], [dt ** 2 / 2.0, dt]])


def _qinv_block(dt, q):
    return np.array([[12.0 / dt ** 3, -6.0 / dt ** 2], [-6.0 / dt ** 2, 4.0 / dt]]) / q


def transition(dt: float) -> np.ndarray:
    """State transition matrix of the constant-velocity model."""
    if dt < 0:
        raise PreconditionError(f"transition requires dt >= 0, got {dt}")
    return _transition(float(dt)).copy()


@lru_cache(maxsize=256)
def _transition(dt):
    return _embed([_phi_block(dt)] * 4)


def process_cov(dt: float, hp: GpHyperParams) -> np.ndarray:
    """Process noise covariance accumulated over ``dt`` seconds."""
    if not dt > 0:
        raise PreconditionError(f"process_cov requires dt > 0, got {dt}")
    return _embed([_q_block(dt, q) for q in hp.psd])


def process_cov_inv(dt: float, hp: GpHyperParams) -> np.ndarray:
    """Closed-form inverse of :func:`process_cov`."""
    if not dt > 0:
        raise PreconditionError(f"process_cov_inv requires dt > 0, got {dt}")
    return _embed([_qinv_block(dt, q) for q in hp.psd])


@lru_cache(maxsize=256)
def _info_sqrt(dt, hp):
    # eigen-decomposition keeps tiny-dt covariances usable
    w, V = np.linalg.eigh(process_cov(dt, hp))
    w = np.maximum(w, EIG_FLOOR)
    return (V / np.sqrt(w)).T


def info_sqrt(dt: float, hp: GpHyperParams) -> np.ndarray:
    """A matrix ``W`` with ``W.T @ W == inv(process_cov(dt, hp))``."""
    if not dt > 0:
        raise DegenerateIntervalError(f"interval must be positive, got {dt}")
    return _info_sqrt(float(dt), hp).copy()


@lru_cache(maxsize=1024)
def _interp_mats(dt, tau, hp):
    lam_blocks, psi_blocks = [], []
    for q in hp.psd:
        psi = _q_block(tau, q) @ _phi_block(dt - tau).T @ _qinv_block(dt, q)
        lam_blocks.append(_phi_block(tau) - psi @ _phi_block(dt))
        psi_blocks.append(psi)
    lam, psi = _embed(lam_blocks), _embed(psi_blocks)
    lam.setflags(write=False)
    psi.setflags(write=False)
    return lam, psi


def interpolant(t_i: float, t_j: float, t_q: float, hp: GpHyperParams,
                i: int = 0, j: int = 1) -> GpInterpolant:
    """Interpolation matrices for a query time inside ``[t_i, t_j]``."""
    if not t_j > t_i:
        raise DegenerateIntervalError(f"degenerate knot interval [{t_i}, {t_j}]")
    if not t_i <= t_q <= t_j:
        raise OutOfBracketError(f"query time {t_q} outside [{t_i}, {t_j}]")
    tau = t_q - t_i
    lam, psi = _interp_mats(float(t_j - t_i), float(tau), hp)
    return GpInterpolant(i, j, tau, lam, psi)


def interpolate(knot_i: StateKnot, knot_j: StateKnot, t_q: float,
                hp: GpHyperParams) -> StateKnot:
    """GP posterior mean of the state at ``t_q`` given both bracketing knots."""
    it = interpolant(knot_i.t, knot_j.t, t_q, hp)
    return StateKnot.from_vector(t_q, it.lam @ knot_i.x + it.psi @ knot_j.x)


def motion_prior_residual(knot_i: StateKnot, knot_j: StateKnot, hp: GpHyperParams):
    """Residual of the binary GP prior factor and its information square root.

    Returns ``(e, W)`` with ``e = x_j - Phi(dt) x_i``; the whitened residual is
    ``W @ e``.
    """
    dt = knot_j.t - knot_i.t
    if not dt > 0:
        raise DegenerateIntervalError(f"degenerate knot interval [{knot_i.t}, {knot_j.t}]")
    e = knot_j.x - _transition(float(dt)) @ knot_i.x
    return e, info_sqrt(dt, hp)


def propagate(x: np.ndarray, dt: float) -> np.ndarray:
    """Mean propagation of a state vector by ``dt``."""
    return _transition(float(dt)) @ x
