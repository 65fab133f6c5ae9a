import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpfgo.errors import InvalidModelError
from gpfgo.noise import (NoiseModel, component_offsets, gmm_nll, mestimator_cost,
                         mestimator_weight, select_component, select_components,
                         surrogate_residual)
from gpfgo.vbgmm import GmmModel

from oracles import central_diff, mixture_nll_direct

# direct extended-precision evaluation of -log(0.9 N(20;0,1) + 0.1 N(20;20,25))
NLL_FIXTURE = 4.830961538632819


class TestMEstimators:
    def test_cauchy_values(self):
        assert mestimator_weight("cauchy", 1.0, 0.0) == 1.0
        assert mestimator_weight("cauchy", 2.0, 2.0) == pytest.approx(0.5)

    def test_huber_quadratic_region(self):
        assert mestimator_weight("huber", 1.345, 1.0) == 1.0
        assert mestimator_weight("huber", 1.345, 2.69) == pytest.approx(0.5)

    @pytest.mark.parametrize("kernel", ["cauchy", "huber"])
    @given(r1=st.floats(-1e3, 1e3), r2=st.floats(-1e3, 1e3), c=st.floats(0.1, 10))
    def test_weights_bounded_monotone(self, kernel, r1, r2, c):
        w1, w2 = mestimator_weight(kernel, c, r1), mestimator_weight(kernel, c, r2)
        assert 0 < w1 <= 1 and 0 < w2 <= 1
        if abs(r1) <= abs(r2):
            assert w1 >= w2

    @pytest.mark.parametrize("kernel", ["cauchy", "huber"])
    def test_cost_derivative_is_weighted_residual(self, kernel):
        for r in np.linspace(-8, 8, 33):
            d = central_diff(lambda x: mestimator_cost(kernel, 1.3, x[0]), [r], h=1e-6)[0, 0]
            assert d == pytest.approx(mestimator_weight(kernel, 1.3, r) * r, abs=1e-6)

    def test_unknown_kernel(self):
        with pytest.raises(InvalidModelError):
            NoiseModel.m_estimator("tukey")


class TestMixture:
    def test_standard_normal_at_mode(self):
        assert gmm_nll(GmmModel.gaussian(1.0), 0.0) == pytest.approx(0.5 * np.log(2 * np.pi))

    def test_duplicate_components(self):
        g2 = GmmModel([0.5, 0.5], [1.0, 1.0], [2.0, 2.0])
        assert gmm_nll(g2, 0.3) == pytest.approx(gmm_nll(GmmModel([1.0], [1.0], [2.0]), 0.3))

    def test_two_component_fixture(self):
        g = GmmModel([0.9, 0.1], [0.0, 20.0], [1.0, 25.0])
        assert gmm_nll(g, 20.0) == pytest.approx(NLL_FIXTURE, rel=1e-12)
        assert mixture_nll_direct(g.w, g.mu, g.var, 20.0) == pytest.approx(NLL_FIXTURE, rel=1e-12)

    def test_invalid_variance(self):
        with pytest.raises(InvalidModelError):
            GmmModel([1.0], [0.0], [0.0])

    def test_selection_examples(self):
        assert select_component(GmmModel.gaussian(2.0), 5.0).component == 0
        g = GmmModel([0.5, 0.5], [0.0, 10.0], [1.0, 1.0])
        assert select_component(g, 9.0).component == 1
        assert select_component(g, 5.0).component == 0

    def test_selection_fields(self):
        g = GmmModel([0.7, 0.3], [0.0, 5.0], [1.0, 4.0])
        sel = select_component(g, 6.0)
        assert sel.component == 1
        assert sel.quadratic_weight == pytest.approx(0.25)
        assert sel.offset == pytest.approx(-np.log(0.3 / np.sqrt(2 * np.pi * 4.0)))

    def test_surrogate_examples(self):
        g = GmmModel([0.5, 0.5], [1.0, 3.0], [4.0, 4.0])
        sel = select_component(g, 3.0)
        assert surrogate_residual(sel, g, 3.0)[0] == 0.0
        sel0 = select_component(g, 1.0)
        assert surrogate_residual(sel0, g, 5.0)[0] == pytest.approx(2.0)

    def test_max_mixture_bound_on_grid(self):
        g = GmmModel([0.6, 0.25, 0.1, 0.05], [0.0, 3.0, 25.0, -4.0], [1.0, 4.0, 100.0, 0.5])
        r = np.linspace(-100, 100, 20001)
        sur = 0.5 * (r[:, None] - g.mu) ** 2 / g.var + component_offsets(g)
        nll = gmm_nll(g, r)
        sel = sur[np.arange(len(r)), select_components(g, r)]
        assert np.allclose(sel, sur.min(axis=1))
        assert np.all(sel >= nll - 1e-9)
        assert np.all(sel - nll <= np.log(g.K) + 1e-9)

    def test_noise_model_validation(self):
        with pytest.raises(InvalidModelError):
            NoiseModel.gaussian(0.0)
        with pytest.raises(InvalidModelError):
            NoiseModel("gmm")
        assert NoiseModel.m_estimator("huber").scale == 1.345
        assert NoiseModel.m_estimator("cauchy").scale == 1.0
