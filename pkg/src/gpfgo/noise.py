"""Pseudorange noise models: fixed Gaussian, M-estimators and Gaussian mixtures.

Every model is exposed to the solver as a whitened residual, a row weight
(IRLS scaling for M-estimators) and a constant cost offset (mixture
normalisation of the selected component).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidModelError
from .vbgmm import GmmModel

LOG_2PI = float(np.log(2.0 * np.pi))

DEFAULT_SCALE = {"cauchy": 1.0, "huber": 1.345}


@dataclass(frozen=True)
class NoiseModel:
    """Tagged noise model; build with :meth:`gaussian`, :meth:`m_estimator` or :meth:`mixture`."""

    kind: str
    sigma: float = 1.0
    kernel: Optional[str] = None
    scale: float = 1.0
    gmm: Optional[GmmModel] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "m_estimator", "gmm"):
            raise InvalidModelError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gmm":
            if self.gmm is None or self.gmm.K < 1:
                raise InvalidModelError("gmm noise needs at least one component")
            return
        if not self.sigma > 0:
            raise InvalidModelError(f"sigma must be positive, got {self.sigma}")
        if self.kind == "m_estimator":
            if self.kernel not in DEFAULT_SCALE:
                raise InvalidModelError(f"unknown M-estimator kernel {self.kernel!r}")
            if not self.scale > 0:
                raise InvalidModelError(f"kernel scale must be positive, got {self.scale}")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "NoiseModel":
        return cls("gaussian", sigma=float(sigma))

    @classmethod
    def m_estimator(cls, kernel: str, scale: Optional[float] = None,
                    sigma: float = 1.0) -> "NoiseModel":
        if scale is None:
            scale = DEFAULT_SCALE.get(kernel, 1.0)
        return cls("m_estimator", sigma=float(sigma), kernel=kernel, scale=float(scale))

    @classmethod
    def mixture(cls, gmm: GmmModel) -> "NoiseModel":
        return cls("gmm", gmm=gmm)

    def with_sigma(self, sigma: float) -> "NoiseModel":
        if self.kind == "gmm":
            return self
        return NoiseModel(self.kind, float(sigma), self.kernel, self.scale, None)


@dataclass(frozen=True)
class MixtureSelection:
    """Discrete choice of one mixture component for a residual."""

    component: int
    quadratic_weight: float
    offset: float


def mestimator_weight(kernel: str, c: float, r):
    """IRLS weight of a whitened residual ``r`` under a Cauchy or Huber kernel."""
    r = np.asarray(r, dtype=float)
    if kernel == "cauchy":
        w = 1.0 / (1.0 + (r / c) ** 2)
    elif kernel == "huber":
        a = np.abs(r)
        with np.errstate(divide="ignore"):
            w = np.where(a <= c, 1.0, c / np.where(a == 0, 1.0, a))
    else:
        raise InvalidModelError(f"unknown M-estimator kernel {kernel!r}")
    return w if w.ndim else float(w)


def mestimator_cost(kernel: str, c: float, r):
    """Kernel cost rho(r) whose derivative over r is ``weight * r``."""
    r = np.asarray(r, dtype=float)
    if kernel == "cauchy":
        out = 0.5 * c * c * np.log1p((r / c) ** 2)
    elif kernel == "huber":
        a = np.abs(r)
        out = np.where(a <= c, 0.5 * r * r, c * a - 0.5 * c * c)
    else:
        raise InvalidModelError(f"unknown M-estimator kernel {kernel!r}")
    return out if out.ndim else float(out)


def _check_gmm(gmm: GmmModel):
    if np.any(~(gmm.var > 0)):
        raise InvalidModelError("mixture variances must be positive")


def component_log_density(gmm: GmmModel, r) -> np.ndarray:
    """``log(w_k N(r; mu_k, var_k))`` with shape ``(len(r), K)``."""
    _check_gmm(gmm)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore"):
        logw = np.log(gmm.w)
    z2 = (r[:, None] - gmm.mu[None, :]) ** 2 / gmm.var[None, :]
    return logw - 0.5 * (LOG_2PI + np.log(gmm.var)) - 0.5 * z2


def component_offsets(gmm: GmmModel) -> np.ndarray:
    """``-log(w_k / sqrt(2 pi var_k))`` per component."""
    with np.errstate(divide="ignore"):
        return -np.log(gmm.w) + 0.5 * (LOG_2PI + np.log(gmm.var))


def gmm_nll(gmm: GmmModel, r):
    """Negative log-density of the mixture at ``r`` (scalar or array)."""
    if abs(float(np.sum(gmm.w)) - 1.0) > 1e-9:
        raise InvalidModelError("mixture weights must sum to one")
    out = -logsumexp(component_log_density(gmm, r), axis=1)
    return out if np.ndim(r) else float(out[0])


def select_components(gmm: GmmModel, r) -> np.ndarray:
    """Most probable component per residual; ties resolve to the lowest index."""
    return np.argmax(component_log_density(gmm, r), axis=1)


def select_component(gmm: GmmModel, r: float) -> MixtureSelection:
    k = int(select_components(gmm, r)[0])
    return MixtureSelection(k, float(1.0 / gmm.var[k]), float(component_offsets(gmm)[k]))


def surrogate_residual(selection: MixtureSelection, gmm: GmmModel, r: float):
    """Whitened residual and constant offset of the selected component.

    The per-residual surrogate cost is ``0.5 * whitened**2 + offset``.
    """
    k = selection.component
    whitened = (r - gmm.mu[k]) / np.sqrt(gmm.var[k])
    return float(whitened), float(selection.offset)
