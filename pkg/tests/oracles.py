"""Independent reference computations shared by the test modules.

Nothing here imports the estimator's linear-algebra helpers: covariances come
from numerical quadrature, derivatives from central differences and
least-squares solutions from dense pseudo-inverses.
"""

import numpy as np
from scipy.integrate import quad_vec

PAIRS = ((0, 3), (1, 4), (2, 5), (6, 7))


def phi_dense(dt):
    F = np.eye(8)
    for a, r in PAIRS:
        F[a, r] = dt
    return F


def q_quadrature(dt, psd):
    """Integral of Phi(dt-s) L Qc L^T Phi(dt-s)^T over [0, dt]."""
    L = np.zeros((8, 4))
    Qc = np.diag(psd)
    for k, (_, r) in enumerate(PAIRS):
        L[r, k] = 1.0

    def f(s):
        F = phi_dense(dt - s)
        return F @ L @ Qc @ L.T @ F.T

    val, _ = quad_vec(f, 0.0, dt, epsabs=1e-13, epsrel=1e-12)
    return val


def gp_conditional_mean(x_i, x_j, dt, tau, psd):
    """Mean of x(tau) given x(0)=x_i and x(dt)=x_j by dense Gaussian conditioning."""
    Qa = q_quadrature(tau, psd) if tau > 0 else np.zeros((8, 8))
    Qb = q_quadrature(dt - tau, psd) if dt - tau > 0 else np.zeros((8, 8))
    Fa, Fb = phi_dense(tau), phi_dense(dt - tau)
    # joint of (x_tau, x_j) given x_i
    m_tau = Fa @ x_i
    m_j = Fb @ m_tau
    S_tj = Qa @ Fb.T
    S_jj = Fb @ Qa @ Fb.T + Qb
    return m_tau + S_tj @ np.linalg.solve(S_jj, x_j - m_j)


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.zeros((len(f0), len(x)))
    for k in range(len(x)):
        step = h * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        J[:, k] = (np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2 * step)
    return J


def mixture_nll_direct(w, mu, var, r):
    """-log sum_k w_k N(r; mu_k, var_k) with mpmath-free extended precision."""
    from decimal import Decimal, getcontext
    getcontext().prec = 50
    total = Decimal(0)
    for wk, mk, vk in zip(w, mu, var):
        expo = Decimal(-(r - mk) ** 2) / Decimal(2 * vk)
        total += Decimal(wk) / (Decimal(2) * Decimal(np.pi) * Decimal(vk)).sqrt() * expo.exp()
    return float(-total.ln())
