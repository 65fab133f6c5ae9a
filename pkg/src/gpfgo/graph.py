"""Time-centric factor graph over a priori chosen knot times.

Knots are the variables. Measurements are attached either directly to a knot
(when their timestamp is within the alignment tolerance of one) or, through a
GP interpolant, to the pair of knots that brackets them. Consecutive knots are
chained by GP motion-prior factors and the first knot carries a prior.

Factors of one kind are compiled into stacked arrays so residuals and
Jacobians are evaluated in a handful of vectorised operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp

from . import gp
from .errors import LinearizationError, OutOfSpanError, PreconditionError
from .gp import STATE_DIM, GpHyperParams, StateKnot
from .measurements import MIN_RANGE, OdometryMeasurement, SatObservation, pseudorange_batch
from .noise import NoiseModel, component_offsets, gmm_nll, mestimator_cost, mestimator_weight, select_components

KINDS = ("gp_prior", "prior", "odometry", "pseudorange")
_KERNEL_CODE = {None: 0, "huber": 1, "cauchy": 2}
_KERNEL_NAME = {1: "huber", 2: "cauchy"}


@dataclass(frozen=True)
class PriorPayload:
    """Absolute prior on a full knot state."""

    mean: np.ndarray
    sqrt_info: np.ndarray

    @classmethod
    def from_sigma(cls, mean, sigma) -> "PriorPayload":
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (STATE_DIM,))
        return cls(np.asarray(mean, dtype=float).reshape(STATE_DIM), np.diag(1.0 / sigma))


@dataclass(frozen=True)
class Factor:
    kind: str
    payload: Any
    noise: Optional[NoiseModel]
    t_meas: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PreconditionError(f"unknown factor kind {self.kind!r}")
        expected = {"pseudorange": SatObservation, "odometry": OdometryMeasurement,
                    "prior": PriorPayload}.get(self.kind)
        if expected is not None and not isinstance(self.payload, expected):
            raise PreconditionError(f"{self.kind} factor needs a {expected.__name__} payload")

    @classmethod
    def pseudorange(cls, obs: SatObservation, noise: NoiseModel) -> "Factor":
        return cls("pseudorange", obs, noise, obs.t)

    @classmethod
    def odometry(cls, odo: OdometryMeasurement) -> "Factor":
        return cls("odometry", odo, NoiseModel.gaussian(odo.sigma), odo.t_j)

    @classmethod
    def prior(cls, t, mean, sigma) -> "Factor":
        return cls("prior", PriorPayload.from_sigma(mean, sigma), None, t)


@dataclass
class GraphConfig:
    hp: GpHyperParams = field(default_factory=GpHyperParams)
    alignment_tol: float = 1e-3
    prior_mean: Optional[np.ndarray] = None
    prior_sigma: Any = (10.0, 10.0, 10.0, 5.0, 5.0, 5.0, 100.0, 10.0)


@dataclass(frozen=True)
class StateRef:
    """How a factor reads the state at its time: ``lam @ x_i + psi @ x_j``.

    Aligned references have ``i == j`` and ``psi`` is None.
    """

    i: int
    j: int
    lam: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None

    @property
    def aligned(self) -> bool:
        return self.psi is None


class _Group:
    """``n`` factors sharing a residual size ``m`` and column-block count ``q``."""

    def __init__(self, kind, factor_idx, cols):
        self.kind = kind
        self.factor_idx = np.asarray(factor_idx, dtype=int)
        self.cols = np.asarray(cols, dtype=int).reshape(len(self.factor_idx), -1)

    def __len__(self):
        return len(self.factor_idx)


@dataclass
class FactorGraph:
    """Knot times, factor records, their knot bindings and compiled groups."""

    knot_times: np.ndarray
    factors: list
    bindings: list
    refs: list
    hp: GpHyperParams
    groups: list = field(default_factory=list, repr=False)

    @property
    def n_knots(self) -> int:
        return len(self.knot_times)

    @property
    def gmm_groups(self) -> list:
        return [g for g in self.groups if g.kind == "pseudorange" and g.gmm_sets]

    def has_mixture(self) -> bool:
        return bool(self.gmm_groups)

    def factor_counts(self) -> dict:
        out = {k: 0 for k in KINDS}
        for f in self.factors:
            out[f.kind] += 1
        return out


def _sort_key(f: Factor):
    p = f.payload
    if f.kind == "pseudorange":
        extra = (str(p.sat_id), float(p.rho))
    elif f.kind == "odometry":
        extra = (float(p.t_i), *map(float, p.delta_p))
    else:
        extra = ()
    return (float(f.t_meas), KINDS.index(f.kind), extra)


def _resolve(times, t, tol, hp) -> StateRef:
    k = int(np.searchsorted(times, t))
    for cand in (k - 1, k):
        if 0 <= cand < len(times) and abs(times[cand] - t) <= tol:
            return StateRef(cand, cand)
    if k <= 0 or k >= len(times):
        raise OutOfSpanError(t, times[0], times[-1])
    it = gp.interpolant(times[k - 1], times[k], t, hp, k - 1, k)
    return StateRef(k - 1, k, it.lam, it.psi)


def build_graph(knot_times, measurements, config: Optional[GraphConfig] = None) -> FactorGraph:
    """Lay out knots, chain them with GP priors and attach measurements.

    Parameters
    ----------
    knot_times : sequence of float
        Strictly increasing knot timestamps in seconds.
    measurements : sequence of Factor
        Pseudorange, odometry or prior factors; their input order is irrelevant.
    config : GraphConfig, optional
        GP hyperparameters, alignment tolerance and the first-knot prior.
    """
    config = config or GraphConfig()
    times = np.asarray(knot_times, dtype=float)
    if times.ndim != 1 or len(times) == 0:
        raise PreconditionError("build_graph needs at least one knot")
    if np.any(np.diff(times) <= 0):
        raise PreconditionError("knot times must be strictly increasing")
    lo, hi = times[0], times[-1]
    tol = config.alignment_tol

    for f in measurements:
        if f.kind == "gp_prior":
            raise PreconditionError("gp_prior factors are generated by build_graph")
    ordered = sorted(measurements, key=_sort_key)
    ends_t = [(f.payload.t_i, f.payload.t_j) if f.kind == "odometry" else (f.t_meas,)
              for f in ordered]
    flat = np.array([t for ts in ends_t for t in ts], dtype=float)
    outside = ~((lo - tol <= flat) & (flat <= hi + tol))
    if np.any(outside):
        raise OutOfSpanError(float(flat[np.flatnonzero(outside)[0]]), lo, hi)

    factors, bindings, refs = [], [], []
    for k in range(len(times) - 1):
        factors.append(Factor("gp_prior", None, None, float(times[k + 1])))
        bindings.append((k, k + 1))
        refs.append((StateRef(k, k), StateRef(k + 1, k + 1)))

    mean = np.zeros(STATE_DIM) if config.prior_mean is None else config.prior_mean
    factors.append(Factor.prior(times[0], mean, config.prior_sigma))
    bindings.append((0,))
    refs.append((StateRef(0, 0),))

    # resolve all endpoint times at once; only off-knot ones need an interpolant
    k = np.searchsorted(times, flat)
    lo_k, hi_k = np.clip(k - 1, 0, len(times) - 1), np.clip(k, 0, len(times) - 1)
    near = np.where(np.abs(times[lo_k] - flat) <= tol, lo_k,
                    np.where(np.abs(times[hi_k] - flat) <= tol, hi_k, -1))
    pos = 0
    for f, ts in zip(ordered, ends_t):
        ends = []
        for t in ts:
            c = int(near[pos])
            ends.append(StateRef(c, c) if c >= 0 else _resolve(times, t, tol, config.hp))
            pos += 1
        if f.kind == "prior" and not ends[0].aligned:
            raise PreconditionError("prior factors must sit on a knot time")
        factors.append(f)
        refs.append(tuple(ends))
        bindings.append(tuple(sorted({c for r in ends for c in (r.i, r.j)})))

    graph = FactorGraph(times, factors, bindings, refs, config.hp)
    graph.groups = _compile(graph)
    return graph


# --- compilation -----------------------------------------------------------

def _ref_arrays(refs):
    """Stack refs into ``(cols (n,2), lam (n,8,8), psi (n,8,8))``."""
    n = len(refs)
    cols = np.array([(r.i, r.j) for r in refs], dtype=int).reshape(n, 2)
    eye = np.eye(STATE_DIM)
    lam = np.array([eye if r.aligned else r.lam for r in refs]).reshape(n, STATE_DIM, STATE_DIM)
    psi = np.array([np.zeros_like(eye) if r.aligned else r.psi for r in refs]).reshape(
        n, STATE_DIM, STATE_DIM)
    return cols, lam, psi


def _compile(graph: FactorGraph) -> list:
    groups = []
    by_kind = {k: [] for k in KINDS}
    for idx, f in enumerate(graph.factors):
        by_kind[f.kind].append(idx)

    if by_kind["gp_prior"]:
        idx = by_kind["gp_prior"]
        g = _Group("gp_prior", idx, [graph.bindings[i] for i in idx])
        dts = np.diff(graph.knot_times)[g.cols[:, 0]]
        g.phi = np.array([gp._transition(float(dt)) for dt in dts])
        g.W = np.array([gp._info_sqrt(float(dt), graph.hp) for dt in dts])
        g.jac = [-np.einsum("nab,nbc->nac", g.W, g.phi), g.W]
        g.m = STATE_DIM
        groups.append(g)

    if by_kind["prior"]:
        idx = by_kind["prior"]
        g = _Group("prior", idx, [graph.refs[i][0].i for i in idx])
        g.mean = np.array([graph.factors[i].payload.mean for i in idx])
        g.W = np.array([graph.factors[i].payload.sqrt_info for i in idx])
        g.m = STATE_DIM
        groups.append(g)

    if by_kind["odometry"]:
        idx = by_kind["odometry"]
        ci, li, pi = _ref_arrays([graph.refs[i][0] for i in idx])
        cj, lj, pj = _ref_arrays([graph.refs[i][1] for i in idx])
        g = _Group("odometry", idx, np.hstack([ci, cj]))
        g.maps = (li, pi, lj, pj)
        g.aligned = all(graph.refs[i][0].aligned and graph.refs[i][1].aligned for i in idx)
        g.delta = np.array([graph.factors[i].payload.delta_p for i in idx])
        g.sigma = np.array([graph.factors[i].payload.sigma for i in idx])
        inv = (1.0 / g.sigma)[:, None, None]
        g.jac = [-li[:, :3] * inv, -pi[:, :3] * inv, lj[:, :3] * inv, pj[:, :3] * inv]
        g.m = 3
        groups.append(g)

    pr = by_kind["pseudorange"]
    aligned = [i for i in pr if graph.refs[i][0].aligned]
    interp = [i for i in pr if not graph.refs[i][0].aligned]
    for idx, is_aligned in ((aligned, True), (interp, False)):
        if not idx:
            continue
        refs = [graph.refs[i][0] for i in idx]
        if is_aligned:
            g = _Group("pseudorange", idx, [r.i for r in refs])
            g.maps = None
        else:
            cols, lam, psi = _ref_arrays(refs)
            g = _Group("pseudorange", idx, cols)
            g.maps = (lam, psi)
        obs = [graph.factors[i].payload for i in idx]
        g.sat = np.array([o.sat_pos for o in obs])
        g.rho = np.array([o.rho for o in obs])
        g.m = 1
        _compile_noise(g, [graph.factors[i].noise for i in idx])
        groups.append(g)

    for g in groups:
        g.pairs = [(a, b) for a in range(g.cols.shape[1]) for b in range(g.cols.shape[1])]
    _compile_hessian_layout(graph, groups)
    return groups


def _compile_noise(g, noises):
    n = len(noises)
    g.sd = np.array([1.0 if nm.kind == "gmm" else nm.sigma for nm in noises])
    g.kern = np.array([_KERNEL_CODE[nm.kernel] if nm.kind == "m_estimator" else 0
                       for nm in noises], dtype=int)
    g.scale = np.array([nm.scale if nm.kind == "m_estimator" else 1.0 for nm in noises])
    g.mu = np.zeros(n)
    g.off = np.zeros(n)
    # factors sharing one mixture object are selected together
    sets = {}
    for k, nm in enumerate(noises):
        if nm.kind == "gmm":
            sets.setdefault(id(nm.gmm), (nm.gmm, []))[1].append(k)
    g.gmm_sets = [(gmm, np.array(ks, dtype=int)) for gmm, ks in sets.values()]
    g.assignment = np.full(n, -1, dtype=int)


def _compile_hessian_layout(graph, groups):
    """Pre-sort all Hessian block contributions so each solve iteration sums them with reduceat."""
    K = graph.n_knots
    lin = []
    for g in groups:
        for a, b in g.pairs:
            lin.append(g.cols[:, a] * K + g.cols[:, b])
    lin = np.concatenate(lin) if lin else np.zeros(0, dtype=int)
    order = np.argsort(lin, kind="stable")
    sorted_lin = lin[order]
    starts = np.flatnonzero(np.r_[True, sorted_lin[1:] != sorted_lin[:-1]]) if len(lin) else np.zeros(0, int)
    uniq = sorted_lin[starts]
    graph.hess_order = order
    graph.hess_starts = starts
    graph.hess_rows = uniq // K
    graph.hess_cols = uniq % K
    graph.bandwidth = int(np.max(np.abs(graph.hess_rows - graph.hess_cols))) if len(uniq) else 0

    # pseudorange blocks change every iteration, everything else is constant
    plin = [g.cols[:, a] * K + g.cols[:, b] for g in groups if g.kind == "pseudorange"
            for a, b in g.pairs]
    plin = np.concatenate(plin) if plin else np.zeros(0, dtype=int)
    porder = np.argsort(plin, kind="stable")
    psorted = plin[porder]
    pstarts = np.flatnonzero(np.r_[True, psorted[1:] != psorted[:-1]]) if len(plin) else np.zeros(0, int)
    graph.pr_order, graph.pr_starts = porder, pstarts
    graph.pr_slots = np.searchsorted(uniq, psorted[pstarts])
    graph.hess_const = None

    glin = np.concatenate([g.cols[:, a] for g in groups for a in range(g.cols.shape[1])])
    graph.grad_order = np.argsort(glin, kind="stable")
    sorted_g = glin[graph.grad_order]
    graph.grad_starts = np.flatnonzero(np.r_[True, sorted_g[1:] != sorted_g[:-1]])
    graph.grad_rows = sorted_g[graph.grad_starts]


# --- evaluation ------------------------------------------------------------

def _states_at(X, cols, maps):
    if maps is None:
        return X[cols[:, 0]]
    lam, psi = maps
    return (lam @ X[cols[:, 0]][:, :, None] + psi @ X[cols[:, 1]][:, :, None])[:, :, 0]


def assign_components(graph: FactorGraph, X) -> None:
    """Discrete step: pick the most probable mixture component per pseudorange."""
    for g in graph.gmm_groups:
        e = _pr_raw(g, X)[0]
        for gmm, ks in g.gmm_sets:
            comp = select_components(gmm, e[ks])
            g.assignment[ks] = comp
            g.mu[ks] = gmm.mu[comp]
            g.sd[ks] = np.sqrt(gmm.var[comp])
            g.off[ks] = component_offsets(gmm)[comp]


def get_assignment(graph: FactorGraph) -> list:
    return [g.assignment.copy() for g in graph.gmm_groups]


def _pr_raw(g, X):
    x = _states_at(X, g.cols, g.maps)
    e, H, rng = pseudorange_batch(x, g.sat, g.rho)
    return e, H, rng


def _check_finite(g, values, rng=None):
    if np.isfinite(values).all() and (rng is None or rng.min() > MIN_RANGE):
        return
    bad = ~np.all(np.isfinite(values.reshape(len(g), -1)), axis=1)
    if rng is not None:
        bad |= ~(rng > MIN_RANGE)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        reason = "singular satellite geometry" if rng is not None and not rng[k] > MIN_RANGE \
            else "non-finite residual"
        raise LinearizationError(int(g.factor_idx[k]), g.kind, reason)


def _group_terms(g, X, jac: bool):
    """Whitened, robust-weighted rows for one group.

    Returns ``(r (n,m), jblocks list of (n,m,8) or None, cost (n,))``.
    """
    if g.kind == "gp_prior":
        xi, xj = X[g.cols[:, 0]], X[g.cols[:, 1]]
        e = xj - (g.phi @ xi[:, :, None])[:, :, 0]
        s = (g.W @ e[:, :, None])[:, :, 0]
        _check_finite(g, s)
        cost = 0.5 * np.einsum("na,na->n", s, s)
        return s, (g.jac if jac else None), cost

    if g.kind == "prior":
        s = np.einsum("nab,nb->na", g.W, X[g.cols[:, 0]] - g.mean)
        _check_finite(g, s)
        return s, ([g.W] if jac else None), 0.5 * np.einsum("na,na->n", s, s)

    if g.kind == "odometry":
        if g.aligned:
            xi, xj = X[g.cols[:, 0]], X[g.cols[:, 2]]
        else:
            li, pi, lj, pj = g.maps
            xi = _states_at(X, g.cols[:, 0:2], (li, pi))
            xj = _states_at(X, g.cols[:, 2:4], (lj, pj))
        s = (xj[:, :3] - xi[:, :3] - g.delta) / g.sigma[:, None]
        _check_finite(g, s)
        cost = 0.5 * np.einsum("na,na->n", s, s)
        return s, (g.jac if jac else None), cost

    e, H, rng = _pr_raw(g, X)
    _check_finite(g, e, rng)
    s = (e - g.mu) / g.sd
    cost = 0.5 * s * s + g.off
    sw = np.ones_like(s)
    for code, name in _KERNEL_NAME.items():
        sel = g.kern == code
        if np.any(sel):
            cost[sel] = mestimator_cost(name, g.scale[sel], s[sel])
            sw[sel] = np.sqrt(mestimator_weight(name, g.scale[sel], s[sel]))
    r = (sw * s)[:, None]
    jb = None
    if jac:
        Hs = (H * (sw / g.sd)[:, None])[:, None, :]
        if g.maps is None:
            jb = [Hs]
        else:
            lam, psi = g.maps
            jb = [Hs @ lam, Hs @ psi]
    return r, jb, cost


def _check_shape(graph, X):
    X = np.asarray(X, dtype=float)
    if X.shape != (graph.n_knots, STATE_DIM):
        raise PreconditionError(
            f"estimate has shape {X.shape}, graph needs ({graph.n_knots}, {STATE_DIM})")
    return X


def as_array(estimate) -> np.ndarray:
    """Accept a sequence of StateKnot or an (K, 8) array."""
    if isinstance(estimate, np.ndarray):
        return estimate.astype(float)
    return np.array([k.x for k in estimate])


def to_knots(graph: FactorGraph, X) -> list:
    return [StateKnot.from_vector(t, x) for t, x in zip(graph.knot_times, X)]


def surrogate_cost(graph: FactorGraph, X) -> tuple:
    """Cost minimised by the continuous solver and the constant part of it.

    For mixtures this is the max-mixture surrogate under the current
    assignment; the constant is the sum of component offsets.
    """
    total, const = 0.0, 0.0
    for g in graph.groups:
        _, _, c = _group_terms(g, X, jac=False)
        total += float(np.sum(c))
        if g.kind == "pseudorange":
            const += float(np.sum(g.off))
    return total, const


def evaluate_cost(graph: FactorGraph, estimate) -> float:
    """Sum of factor costs: quadratic, M-estimator kernel, or mixture negative log-likelihood."""
    X = _check_shape(graph, as_array(estimate))
    total = 0.0
    for g in graph.groups:
        _, _, c = _group_terms(g, X, jac=False)
        if g.kind == "pseudorange" and g.gmm_sets:
            c = c.copy()
            e = _pr_raw(g, X)[0]
            for gmm, ks in g.gmm_sets:
                c[ks] = gmm_nll(gmm, e[ks])
        total += float(np.sum(c))
    return total


@dataclass
class LinearSystem:
    r: np.ndarray
    J: sp.csr_matrix
    cost: float


def linearize(graph: FactorGraph, estimate, assignment: str = "keep") -> LinearSystem:
    """Whitened residual vector and sparse Jacobian at ``estimate``.

    The local model is ``0.5 * ||J @ delta + r||**2`` with ``delta`` the stacked
    knot-state increment. Mixture factors use the stored component assignment
    unless ``assignment='select'``.
    """
    X = _check_shape(graph, as_array(estimate))
    if assignment == "select" or any(np.any(g.assignment < 0) for g in graph.gmm_groups):
        assign_components(graph, X)
    rows, cols, vals, rvec = [], [], [], []
    row0, cost = 0, 0.0
    for g in graph.groups:
        r, jb, c = _group_terms(g, X, jac=True)
        cost += float(np.sum(c))
        n, m = r.shape
        rowidx = row0 + np.arange(n * m).reshape(n, m)
        for a, blk in enumerate(jb):
            colidx = g.cols[:, a][:, None] * STATE_DIM + np.arange(STATE_DIM)
            rows.append(np.broadcast_to(rowidx[:, :, None], blk.shape).ravel())
            cols.append(np.broadcast_to(colidx[:, None, :], blk.shape).ravel())
            vals.append(blk.ravel())
        rvec.append(r.ravel())
        row0 += n * m
    shape = (row0, graph.n_knots * STATE_DIM)
    J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=shape).tocsr()
    return LinearSystem(np.concatenate(rvec), J, cost)


def normal_equations(graph: FactorGraph, X):
    """Block Gauss-Newton system ``(H, g)`` with ``H = J^T J`` and ``g = J^T r``.

    ``H`` is returned in block form ``(n_unique, 8, 8)`` aligned with
    ``graph.hess_rows`` / ``graph.hess_cols``.
    """
    if graph.hess_const is None:
        graph.hess_const = np.zeros((len(graph.hess_rows), STATE_DIM, STATE_DIM))
        const = []
        for g in graph.groups:
            if g.kind != "pseudorange":
                jb = _group_terms(g, X, jac=True)[1]
                const.extend(jb[a].swapaxes(1, 2) @ jb[b] for a, b in g.pairs)
        if const:
            lin = np.concatenate([g.cols[:, a] * graph.n_knots + g.cols[:, b]
                                  for g in graph.groups if g.kind != "pseudorange"
                                  for a, b in g.pairs])
            slots = np.searchsorted(graph.hess_rows * graph.n_knots + graph.hess_cols, lin)
            np.add.at(graph.hess_const, slots, np.concatenate(const))
    Hb = graph.hess_const.copy()
    blocks, gblocks = [], []
    for g in graph.groups:
        r, jb, _ = _group_terms(g, X, jac=True)
        jt = [b.swapaxes(1, 2) for b in jb]
        if g.kind == "pseudorange":
            blocks.extend(jt[a] @ jb[b] for a, b in g.pairs)
        gblocks.extend((t @ r[:, :, None])[:, :, 0] for t in jt)
    if blocks:
        Hb[graph.pr_slots] += np.add.reduceat(np.concatenate(blocks)[graph.pr_order],
                                              graph.pr_starts, axis=0)
    gsum = np.add.reduceat(np.concatenate(gblocks)[graph.grad_order], graph.grad_starts, axis=0)
    grad = np.zeros((graph.n_knots, STATE_DIM))
    grad[graph.grad_rows] = gsum
    return Hb, grad.ravel()
