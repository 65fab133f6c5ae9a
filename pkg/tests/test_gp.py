import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpfgo import gp
from gpfgo.errors import DegenerateIntervalError, OutOfBracketError, PreconditionError
from gpfgo.gp import GpHyperParams, StateKnot

from oracles import gp_conditional_mean, q_quadrature

HP = GpHyperParams()

# Frozen from the quadrature oracle (tests/oracles.q_quadrature), block (0, 3).
Q_DT1_Q1 = np.array([[1 / 3, 1 / 2], [1 / 2, 1.0]])
Q_DT2_Q05 = np.array([[4 / 3, 1.0], [1.0, 1.0]])


def block(M, a=0, r=3):
    idx = np.array([a, r])
    return M[np.ix_(idx, idx)]


def random_knot(rng, t):
    return StateKnot(t, rng.normal(0, 50, 3), rng.normal(0, 5, 3), rng.normal(0, 100), rng.normal(0, 1))


class TestTransition:
    def test_zero_dt_is_identity(self):
        assert np.array_equal(gp.transition(0.0), np.eye(8))

    def test_unit_block(self):
        F = gp.transition(1.0)
        for a, r in gp.AXIS_PAIRS:
            assert np.array_equal(block(F, a, r), [[1, 1], [0, 1]])

    def test_semigroup_halves(self):
        assert np.allclose(gp.transition(0.5) @ gp.transition(0.5), gp.transition(1.0), atol=1e-12)

    def test_negative_dt_rejected(self):
        with pytest.raises(PreconditionError):
            gp.transition(-0.1)

    @given(st.floats(0, 20), st.floats(0, 20))
    def test_semigroup_property(self, a, b):
        assert np.allclose(gp.transition(a) @ gp.transition(b), gp.transition(a + b),
                           atol=1e-12, rtol=0)


class TestProcessCov:
    def test_unit_block_matches_frozen_quadrature(self):
        Q = gp.process_cov(1.0, GpHyperParams((1, 1, 1), 1.0))
        assert np.allclose(block(Q), Q_DT1_Q1, atol=1e-12)

    def test_dt2_half_psd_matches_frozen_quadrature(self):
        Q = gp.process_cov(2.0, GpHyperParams((0.5, 0.5, 0.5), 0.5))
        assert np.allclose(block(Q), Q_DT2_Q05, atol=1e-12)

    @pytest.mark.parametrize("dt", [1e-3, 0.37, 1.0, 4.2])
    def test_full_matrix_matches_quadrature(self, dt):
        hp = GpHyperParams((0.7, 1.3, 2.0), 0.1)
        assert np.allclose(gp.process_cov(dt, hp), q_quadrature(dt, hp.psd), rtol=1e-9, atol=1e-15)

    @given(st.floats(1e-3, 10), st.floats(1e-3, 10))
    def test_block_determinant(self, dt, q):
        Q = gp.process_cov(dt, GpHyperParams((q, q, q), q))
        assert np.isclose(np.linalg.det(block(Q)), q * q * dt ** 4 / 12, rtol=1e-8)

    @given(st.floats(1e-3, 10))
    def test_symmetric_positive_definite(self, dt):
        Q = gp.process_cov(dt, HP)
        assert np.array_equal(Q, Q.T)
        assert np.linalg.eigvalsh(Q).min() > 0

    def test_closed_form_inverse(self):
        for dt in (0.01, 1.0, 7.0):
            assert np.allclose(gp.process_cov(dt, HP) @ gp.process_cov_inv(dt, HP), np.eye(8),
                               atol=1e-8)

    def test_info_sqrt_whitens(self):
        W = gp.info_sqrt(1.0, HP)
        assert np.allclose(W.T @ W, gp.process_cov_inv(1.0, HP), rtol=1e-9)

    @pytest.mark.parametrize("dt", [0.0, -1.0])
    def test_non_positive_dt_rejected(self, dt):
        with pytest.raises(PreconditionError):
            gp.process_cov(dt, HP)


class TestInterpolation:
    def test_endpoints_exact(self, rng):
        for _ in range(1000):
            dt = rng.uniform(0.05, 5)
            ki, kj = random_knot(rng, 10.0), random_knot(rng, 10.0 + dt)
            assert np.allclose(gp.interpolate(ki, kj, ki.t, HP).x, ki.x, atol=1e-10, rtol=0)
            assert np.allclose(gp.interpolate(ki, kj, kj.t, HP).x, kj.x, atol=1e-10, rtol=0)

    def test_constant_velocity_midpoint(self):
        v = np.array([8.0, -3.0, 0.5])
        ki = StateKnot(0.0, [10.0, 20.0, 1.0], v, 30.0, 0.2)
        kj = StateKnot(2.0, ki.p + 2.0 * v, v, 30.4, 0.2)
        mid = gp.interpolate(ki, kj, 1.0, HP)
        assert np.allclose(mid.p, (ki.p + kj.p) / 2, atol=1e-10)
        assert np.allclose(mid.v, v, atol=1e-10)
        assert np.isclose(mid.b, 30.2, atol=1e-10)

    def test_tau_zero_identity(self):
        it = gp.interpolant(0.0, 1.0, 0.0, HP)
        assert np.allclose(it.lam, np.eye(8), atol=1e-12)
        assert np.allclose(it.psi, 0.0, atol=1e-12)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.93])
    def test_matches_dense_conditioning_oracle(self, rng, tau):
        hp = GpHyperParams((0.5, 2.0, 1.0), 0.1)
        ki, kj = random_knot(rng, 0.0), random_knot(rng, 1.5)
        got = gp.interpolate(ki, kj, tau * 1.5, hp).x
        want = gp_conditional_mean(ki.x, kj.x, 1.5, tau * 1.5, hp.psd)
        assert np.allclose(got, want, rtol=1e-7, atol=1e-7)

    @given(st.floats(0.01, 10), st.floats(0, 1))
    def test_lambda_psi_identity(self, dt, frac):
        tau = frac * dt
        it = gp.interpolant(0.0, dt, tau, HP)
        assert np.allclose(it.lam + it.psi @ gp.transition(dt), gp.transition(tau), atol=1e-10)

    def test_out_of_bracket(self):
        with pytest.raises(OutOfBracketError):
            gp.interpolant(0.0, 1.0, 1.5, HP)

    def test_degenerate_interval(self):
        with pytest.raises(DegenerateIntervalError):
            gp.interpolant(1.0, 1.0, 1.0, HP)


class TestMotionPrior:
    def test_predicted_knot_zero_residual(self, rng):
        ki = random_knot(rng, 0.0)
        kj = StateKnot.from_vector(1.3, gp.transition(1.3) @ ki.x)
        e, _ = gp.motion_prior_residual(ki, kj, HP)
        assert np.allclose(e, 0.0, atol=1e-12)

    def test_stationary_zero_residual(self):
        ki = StateKnot(0.0, [1, 2, 3], [0, 0, 0], 5.0, 0.0)
        kj = StateKnot(1.0, [1, 2, 3], [0, 0, 0], 5.0, 0.0)
        e, _ = gp.motion_prior_residual(ki, kj, HP)
        assert np.array_equal(e, np.zeros(8))

    def test_position_offset_shows_in_residual(self):
        ki = StateKnot(0.0, [0, 0, 0], [1, 0, 0])
        delta = np.array([0.3, -0.2, 0.1])
        kj = StateKnot(1.0, np.array([1.0, 0, 0]) + delta, [1, 0, 0])
        e, _ = gp.motion_prior_residual(ki, kj, HP)
        assert np.allclose(e[:3], delta, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateIntervalError):
            gp.motion_prior_residual(StateKnot(1.0), StateKnot(1.0), HP)


def test_state_knot_rejects_non_finite():
    with pytest.raises(PreconditionError):
        StateKnot(0.0, [np.nan, 0, 0])


def test_hyperparams_must_be_positive():
    with pytest.raises(PreconditionError):
        GpHyperParams((1, 0, 1), 0.1)
