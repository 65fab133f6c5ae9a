"""Online variational-Bayes Gaussian mixture over pseudorange residuals.

Residuals from recent epochs sit in a FIFO window; every few epochs a finite
1-D mixture with a Dirichlet weight prior and Normal-Gamma component priors is
fitted by mean-field coordinate ascent, small components are pruned, and
(optionally) the whole mixture is re-centred on its dominant mode.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, xlogy

from .errors import InsufficientDataError, InvalidModelError, NumericalFailureError

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))
VB_FIELDS = ("alpha", "beta", "m", "a", "rte")


@dataclass(frozen=True)
class GmmModel:
    """1-D Gaussian mixture, optionally carrying its VB posterior hyperparameters.

    ``vb`` maps ``alpha, beta, m, a, rte`` to per-component arrays.
    """

    w: np.ndarray
    mu: np.ndarray
    var: np.ndarray
    vb: Optional[dict] = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if not (w.shape == mu.shape == var.shape) or w.ndim != 1 or len(w) < 1:
            raise InvalidModelError("w, mu, var must be equal-length 1-D arrays with K >= 1")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise InvalidModelError(f"mixture weights must be non-negative and sum to 1, got {w}")
        if np.any(~(var > 0)):
            raise InvalidModelError(f"mixture variances must be positive, got {var}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)
        if self.vb is not None:
            vb = {k: np.atleast_1d(np.asarray(self.vb[k], dtype=float)) for k in VB_FIELDS}
            if any(v.shape != w.shape for v in vb.values()):
                raise InvalidModelError("VB hyperparameters must match the component count")
            object.__setattr__(self, "vb", vb)

    @property
    def K(self) -> int:
        return len(self.w)

    @classmethod
    def gaussian(cls, sigma: float, mean: float = 0.0) -> "GmmModel":
        return cls([1.0], [mean], [sigma * sigma])

    def density(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        z2 = (r[..., None] - self.mu) ** 2 / self.var
        return np.sum(self.w * np.exp(-0.5 * z2) / np.sqrt(2 * np.pi * self.var), axis=-1)

    def loglik(self, r) -> float:
        """Total log-likelihood of samples ``r``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        with np.errstate(divide="ignore"):
            lp = (np.log(self.w) - 0.5 * (LOG_2PI + np.log(self.var))
                  - 0.5 * (r[:, None] - self.mu) ** 2 / self.var)
        return float(np.sum(logsumexp(lp, axis=1)))


@dataclass(frozen=True)
class VbPrior:
    """Dirichlet(alpha0) weights and Normal-Gamma(m0, beta0, a0, rte0) components."""

    alpha0: float = 1.0
    beta0: float = 1.0
    m0: float = 0.0
    a0: float = 2.0
    rte0: float = 2.0

    def __post_init__(self):
        if min(self.alpha0, self.beta0, self.a0, self.rte0) <= 0:
            raise InvalidModelError("VB prior concentrations, scales and Gamma parameters must be > 0")


class ResidualWindow:
    """FIFO buffer(s) of ``(t, sat_id, r)`` residual samples.

    With ``scope='per_satellite'`` every satellite gets its own buffer of
    ``capacity`` samples.
    """

    def __init__(self, capacity: int = 1000, scope: str = "pooled"):
        if scope not in ("pooled", "per_satellite"):
            raise ValueError(f"unknown window scope {scope!r}")
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.capacity = int(capacity)
        self.scope = scope
        self.buffers: dict = {}
        self.rejected = 0

    def _buffer(self, sat_id):
        key = sat_id if self.scope == "per_satellite" else None
        if key not in self.buffers:
            self.buffers[key] = deque(maxlen=self.capacity)
        return self.buffers[key]

    def push(self, samples) -> "ResidualWindow":
        for t, sat_id, r in samples:
            if not np.isfinite(r):
                self.rejected += 1
                continue
            self._buffer(sat_id).append((float(t), sat_id, float(r)))
        return self

    def samples(self, sat_id=None) -> list:
        key = sat_id if self.scope == "per_satellite" else None
        return list(self.buffers.get(key, ()))

    def values(self, sat_id=None) -> np.ndarray:
        return np.array([s[2] for s in self.samples(sat_id)], dtype=float)

    def keys(self) -> list:
        return list(self.buffers)

    def __len__(self):
        return sum(len(b) for b in self.buffers.values())

    def translate(self, delta: float, sat_id=None) -> None:
        """Add ``delta`` to every stored residual of one buffer."""
        key = sat_id if self.scope == "per_satellite" else None
        buf = self.buffers.get(key)
        if buf:
            self.buffers[key] = deque(((t, s, r + delta) for t, s, r in buf), maxlen=self.capacity)

    def snapshot(self) -> "ResidualWindow":
        out = ResidualWindow(self.capacity, self.scope)
        out.buffers = {k: deque(b, maxlen=self.capacity) for k, b in self.buffers.items()}
        out.rejected = self.rejected
        return out


def push_residuals(window: ResidualWindow, residuals) -> ResidualWindow:
    """Append ``(t, sat_id, r)`` samples; non-finite residuals are counted and dropped."""
    return window.push(residuals)


def _m_step(x, resp, prior: VbPrior):
    # resp is (K, n)
    Nk = resp.sum(axis=1)
    safe = np.where(Nk > 0, Nk, 1.0)
    xbar = resp @ x / safe
    S = np.einsum("kn,kn->k", resp, (x[None, :] - xbar[:, None]) ** 2) / safe
    alpha = prior.alpha0 + Nk
    beta = prior.beta0 + Nk
    m = (prior.beta0 * prior.m0 + Nk * xbar) / beta
    a = prior.a0 + 0.5 * Nk
    rte = prior.rte0 + 0.5 * (Nk * S + prior.beta0 * Nk / (prior.beta0 + Nk) * (xbar - prior.m0) ** 2)
    return alpha, beta, m, a, rte


def _expectations(alpha, beta, m, a, rte):
    e_log_pi = digamma(alpha) - digamma(alpha.sum())
    e_log_lam = digamma(a) - np.log(rte)
    e_lam = a / rte
    return e_log_pi, e_log_lam, e_lam


def _log_rho(x, params):
    alpha, beta, m, a, rte = params
    e_log_pi, e_log_lam, e_lam = _expectations(*params)
    const = e_log_pi + 0.5 * e_log_lam - 0.5 * LOG_2PI - 0.5 / beta
    return const[:, None] - 0.5 * e_lam[:, None] * (x[None, :] - m[:, None]) ** 2


def _lse_cols(a):
    mx = a.max(axis=0)
    return mx + np.log(np.exp(a - mx).sum(axis=0))


def _elbo_param_terms(params, prior: VbPrior):
    """ELBO terms that do not involve the responsibilities."""
    alpha, beta, m, a, rte = params
    K = len(alpha)
    e_log_pi, e_log_lam, e_lam = _expectations(*params)
    e_log_ppi = (gammaln(K * prior.alpha0) - K * gammaln(prior.alpha0)
                 + (prior.alpha0 - 1.0) * e_log_pi.sum())
    e_quad0 = 1.0 / beta + e_lam * (m - prior.m0) ** 2
    e_log_pmu = np.sum(0.5 * np.log(prior.beta0 / (2 * np.pi)) + 0.5 * e_log_lam
                       - 0.5 * prior.beta0 * e_quad0)
    e_log_plam = np.sum(prior.a0 * np.log(prior.rte0) - gammaln(prior.a0)
                        + (prior.a0 - 1.0) * e_log_lam - prior.rte0 * e_lam)
    e_log_qpi = (gammaln(alpha.sum()) - gammaln(alpha).sum()
                 + np.sum((alpha - 1.0) * e_log_pi))
    e_log_qmu = np.sum(0.5 * np.log(beta / (2 * np.pi)) + 0.5 * e_log_lam - 0.5)
    e_log_qlam = np.sum(a * np.log(rte) - gammaln(a) + (a - 1.0) * e_log_lam - a)
    return float(e_log_ppi + e_log_pmu + e_log_plam - e_log_qpi - e_log_qmu - e_log_qlam)


def _elbo(x, resp, params, prior: VbPrior):
    """Evidence lower bound at responsibilities ``resp`` and posterior ``params``."""
    # E[log p(x, z | .)] collapses onto log_rho
    data = np.sum(resp * _log_rho(x, params)) - np.sum(xlogy(resp, resp))
    return float(data) + _elbo_param_terms(params, prior)


def vb_fit(samples, prior: VbPrior = VbPrior(), K_max: int = 5, max_iters: int = 200,
           tol: float = 1e-6):
    """Fit a finite 1-D Gaussian mixture by mean-field variational Bayes.

    Parameters
    ----------
    samples : array-like
        Residual samples in meters.
    prior : VbPrior
        Conjugate prior shared by all components.
    K_max : int
        Number of components; unneeded ones are driven to small weights.
    max_iters : int
        Cap on E/M sweeps.
    tol : float
        Stop once one sweep raises the ELBO by less than this.

    Returns
    -------
    (GmmModel, list of float)
        Posterior-expectation mixture and the ELBO after every sweep.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if K_max < 1:
        raise InvalidModelError("K_max must be at least 1")
    if len(x) < 2 * K_max or len(x) == 0:
        raise InsufficientDataError(f"vb_fit needs at least {2 * K_max} samples, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise NumericalFailureError("non-finite samples passed to vb_fit")

    K = K_max
    seeds = np.quantile(x, (np.arange(K) + 0.5) / K)
    resp = np.zeros((K, len(x)))
    resp[np.argmin(np.abs(x[None, :] - seeds[:, None]), axis=0), np.arange(len(x))] = 1.0

    params = _m_step(x, resp, prior)
    neg_entropy = 0.0  # hard initial assignment
    trace = []
    for it in range(max_iters + 1):
        log_rho = _log_rho(x, params)
        trace.append(float(np.sum(resp * log_rho)) - neg_entropy
                     + _elbo_param_terms(params, prior))
        if not np.isfinite(trace[-1]):
            raise NumericalFailureError("ELBO became non-finite")
        if it == max_iters or (len(trace) > 1 and trace[-1] - trace[-2] < tol):
            break
        log_resp = log_rho - _lse_cols(log_rho)
        resp = np.exp(log_resp)
        neg_entropy = float(np.sum(resp * log_resp))
        params = _m_step(x, resp, prior)

    alpha, beta, m, a, rte = params
    model = GmmModel(
        w=alpha / alpha.sum(),
        mu=m.copy(),
        var=rte / (a - 1.0) if np.all(a > 1.0) else rte / a,
        vb=dict(zip(VB_FIELDS, params)),
    )
    return model, trace


def prune(gmm: GmmModel, weight_floor: float) -> GmmModel:
    """Drop components lighter than ``weight_floor`` and renormalise."""
    if not 0.0 <= weight_floor < 0.5:
        raise InvalidModelError("weight_floor must lie in [0, 0.5)")
    keep = gmm.w >= weight_floor
    if keep.all():
        return gmm
    if not keep.any():
        keep[np.argmax(gmm.w)] = True
    w = gmm.w[keep]
    vb = None if gmm.vb is None else {k: v[keep] for k, v in gmm.vb.items()}
    return GmmModel(w / w.sum(), gmm.mu[keep], gmm.var[keep], vb)


def dominant_component(gmm: GmmModel) -> int:
    """Largest weight; ties go to the smaller variance, then the lower index."""
    cand = np.flatnonzero(gmm.w == gmm.w.max())
    return int(cand[np.argmin(gmm.var[cand])])


def eliminate_shift(gmm: GmmModel) -> GmmModel:
    """Translate every component so the dominant mode sits at zero."""
    k = dominant_component(gmm)
    shift = gmm.mu[k]
    if shift == 0.0:
        return gmm
    vb = None
    if gmm.vb is not None:
        vb = dict(gmm.vb)
        vb["m"] = gmm.vb["m"] - shift
    return GmmModel(gmm.w, gmm.mu - shift, gmm.var, vb)


@dataclass
class RefreshConfig:
    every: int = 10
    min_samples: int = 200
    K_max: int = 5
    max_iters: int = 200
    weight_floor: float = 0.01
    prior: VbPrior = field(default_factory=VbPrior)
    shift_elimination: bool = True
    fallback_sigma: float = 1.0


@dataclass
class OnlineGmmState:
    """Current mixture per window key plus refit bookkeeping."""

    models: dict = field(default_factory=dict)
    fit_epochs: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    last_shift: dict = field(default_factory=dict)

    def model_for(self, key, fallback: GmmModel) -> GmmModel:
        if key in self.models:
            return self.models[key]
        return self.models.get(None, fallback)


def refresh_policy(window: ResidualWindow, state: OnlineGmmState, epoch_index: int,
                   config: RefreshConfig) -> OnlineGmmState:
    """Refit the mixture(s) every ``config.every`` epochs once enough samples exist.

    Fit failures keep the previous model and are logged as events. When the
    dominant mode is re-centred the stored residuals are translated by the
    same amount: the estimator absorbs the shift into the clock, so later
    residuals arrive in the shifted frame and the window must stay consistent.
    """
    if epoch_index % config.every != 0:
        return state
    for key in window.keys():
        values = window.values(key)
        if len(values) < config.min_samples:
            continue
        try:
            gmm, _ = vb_fit(values, config.prior, config.K_max, config.max_iters)
        except (InsufficientDataError, NumericalFailureError) as exc:
            state.events.append((epoch_index, key, f"model kept, fit skipped: {exc}"))
            log.warning("epoch %d: GMM fit skipped (%s)", epoch_index, exc)
            continue
        gmm = prune(gmm, config.weight_floor)
        if config.shift_elimination:
            shift = float(gmm.mu[dominant_component(gmm)])
            gmm = eliminate_shift(gmm)
            window.translate(-shift, key)
            state.last_shift[key] = shift
        state.models[key] = gmm
        state.fit_epochs[key] = epoch_index
    return state


def dumps_gmm(gmm: GmmModel, scope: str = "pooled", fit_epoch: int = -1) -> str:
    """Plain-text key/value serialisation of a mixture."""
    def row(name, arr):
        return name + " " + " ".join(repr(float(v)) for v in arr)

    lines = ["# gpfgo gmm v1", f"K {gmm.K}", f"scope {scope}", f"fit_epoch {fit_epoch}",
             row("w", gmm.w), row("mu", gmm.mu), row("var", gmm.var)]
    if gmm.vb is not None:
        lines += [row(k, gmm.vb[k]) for k in VB_FIELDS]
    return "\n".join(lines) + "\n"


def loads_gmm(text: str):
    """Inverse of :func:`dumps_gmm`; returns ``(gmm, scope, fit_epoch)``."""
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        kv[key] = rest.split()
    try:
        K = int(kv["K"][0])
        arrs = {k: np.array([float(v) for v in kv[k]]) for k in ("w", "mu", "var")}
        vb = None
        if all(k in kv for k in VB_FIELDS):
            vb = {k: np.array([float(v) for v in kv[k]]) for k in VB_FIELDS}
    except (KeyError, ValueError) as exc:
        raise InvalidModelError(f"malformed mixture file: {exc}") from exc
    gmm = GmmModel(arrs["w"], arrs["mu"], arrs["var"], vb)
    if gmm.K != K:
        raise InvalidModelError(f"declared K={K} but found {gmm.K} components")
    return gmm, kv.get("scope", ["pooled"])[0], int(kv.get("fit_epoch", ["-1"])[0])


def export_components_csv(path, snapshots):
    """Write ``(epoch, component, weight, mean, variance)`` rows for ``(epoch, gmm)`` snapshots."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "component", "weight", "mean", "variance"])
        for epoch, gmm in snapshots:
            for k in range(gmm.K):
                wr.writerow([epoch, k, repr(float(gmm.w[k])), repr(float(gmm.mu[k])),
                             repr(float(gmm.var[k]))])
