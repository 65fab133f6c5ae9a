"""Levenberg-Marquardt batch solver over a compiled factor graph.

Mixture noise is handled as a discrete-continuous problem: components are
selected per pseudorange (max-mixture), the resulting least-squares problem
is solved by LM, and selection is repeated until it stops changing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import SolverError
from .gp import STATE_DIM
from .graph import (FactorGraph, as_array, assign_components, get_assignment, normal_equations,
                    surrogate_cost, to_knots, _check_shape)


COST_ULPS = 8.0


@dataclass
class SolveOptions:
    max_iters: int = 100
    rel_tol: float = 1e-9
    step_tol: float = 1e-9
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 3.0
    lambda_max: float = 1e12
    max_rounds: int = 10


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = float("nan")
    final_cost: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    per_iteration_costs: list = field(default_factory=list)
    rounds: int = 1
    assignments_stable: bool = True


@lru_cache(maxsize=64)
def _band_index(n, u):
    k = np.arange(u + 1)[:, None]
    j = np.arange(n)[None, :]
    rows = j + k
    valid = rows < n
    return np.where(valid, rows, 0), np.broadcast_to(j, rows.shape).copy(), valid


def _assemble(graph: FactorGraph, Hb):
    K = graph.n_knots
    H4 = np.zeros((K, K, STATE_DIM, STATE_DIM))
    H4[graph.hess_rows, graph.hess_cols] = Hb
    return H4.transpose(0, 2, 1, 3).reshape(K * STATE_DIM, K * STATE_DIM)


def _damped_solve(graph, H, g, lam):
    """Solve ``(H + lam * diag(H)) delta = -g`` exploiting the band structure."""
    n = H.shape[0]
    d = np.diag(H)
    damp = lam * np.maximum(d, 1e-12 * max(1.0, float(d.max(initial=0.0))))
    u = (graph.bandwidth + 1) * STATE_DIM - 1
    if 2 * (u + 1) < n:
        rows, cols, valid = _band_index(n, u)
        ab = np.where(valid, H[rows, cols], 0.0)
        ab[0] += damp
        cb = sla.cholesky_banded(ab, lower=True, check_finite=False)
        return sla.cho_solve_banded((cb, True), -g, check_finite=False)
    A = H + np.diag(damp)
    c = sla.cho_factor(A, lower=True, check_finite=False)
    return sla.cho_solve(c, -g, check_finite=False)


def _lm(graph: FactorGraph, X: np.ndarray, opts: SolveOptions, report: SolveReport):
    cost, const = surrogate_cost(graph, X)
    if not np.isfinite(cost):
        raise SolverError(f"non-finite initial cost {cost}")
    if not report.per_iteration_costs:
        report.initial_cost = cost
    report.per_iteration_costs.append(cost)
    lam = opts.lambda0
    converged = False
    for _ in range(opts.max_iters):
        report.iterations += 1
        Hb, g = normal_equations(graph, X)
        H = _assemble(graph, Hb)
        accepted = False
        while True:
            try:
                delta = _damped_solve(graph, H, g, lam)
            except (np.linalg.LinAlgError, ValueError):
                lam *= opts.lambda_up
                if lam > opts.lambda_max:
                    raise SolverError("normal equations not factorisable below the damping cap")
                continue
            step = float(np.linalg.norm(delta))
            Xn = X + delta.reshape(X.shape)
            cn = surrogate_cost(graph, Xn)[0]
            # a rise within the cost's own rounding is no rise: it lets the final
            # Gauss-Newton steps land in directions too flat for the cost to resolve
            if np.isfinite(cn) and cn <= cost + COST_ULPS * np.finfo(float).eps * abs(cost):
                accepted = True
                lam = max(lam / opts.lambda_down, 1e-15)
                break
            lam *= opts.lambda_up
            if lam > opts.lambda_max or step < opts.step_tol:
                break
        if not accepted:
            # no decreasing step left: at a (numerical) minimum
            converged = step < opts.step_tol or lam > opts.lambda_max
            break
        old_var = cost - const
        X, cost = Xn, cn
        report.per_iteration_costs.append(cost)
        new_var = cost - const
        if step < opts.step_tol or (old_var - new_var) <= opts.rel_tol * max(abs(old_var), 1e-300):
            converged = True
            break
    report.converged = converged
    report.final_cost = cost
    return X


def solve_array(graph: FactorGraph, X0, options: SolveOptions = None):
    """:func:`solve` on an ``(K, 8)`` array; returns ``(X, SolveReport)``."""
    opts = options or SolveOptions()
    t0 = time.perf_counter()
    X = _check_shape(graph, np.array(X0, dtype=float))
    report = SolveReport()
    if not graph.has_mixture():
        X = _lm(graph, X, opts, report)
    else:
        assign_components(graph, X)
        report.rounds = 0
        for _ in range(opts.max_rounds):
            report.rounds += 1
            X = _lm(graph, X, opts, report)
            before = get_assignment(graph)
            assign_components(graph, X)
            report.assignments_stable = all(np.array_equal(a, b) for a, b in
                                             zip(before, get_assignment(graph)))
            if report.assignments_stable:
                break
        # final cost reflects the assignment the estimate is reported under
        report.final_cost = surrogate_cost(graph, X)[0]
        if report.final_cost < report.per_iteration_costs[-1]:
            report.per_iteration_costs.append(report.final_cost)
    report.wall_time = time.perf_counter() - t0
    return X, report


def solve(graph: FactorGraph, initial, options: SolveOptions = None):
    """Levenberg-Marquardt estimate of all knot states.

    Parameters
    ----------
    graph : FactorGraph
    initial : sequence of StateKnot or (K, 8) array
    options : SolveOptions, optional

    Returns
    -------
    (list of StateKnot, SolveReport)
    """
    X, report = solve_array(graph, as_array(initial), options)
    return to_knots(graph, X), report
