import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from dpmstream.expfam import (
    ComponentPosterior,
    GammaFactor,
    GaussianMeanFactor,
    gamma_entropy,
    gamma_expected_log_density,
    gamma_moments,
    gaussian_entropy,
    gaussian_expected_log_density,
    kl_component,
    kl_gamma,
    kl_gaussian_mean,
    mix_natural,
)

positive = st.floats(min_value=0.05, max_value=20.0, allow_nan=False)


class TestFactors:
    def test_mean_from_natural(self):
        f = GaussianMeanFactor(np.array([2.0, -4.0]), 2.0)
        np.testing.assert_allclose(f.mean, [1.0, -2.0])
        assert f.dim == 2

    def test_from_mean_roundtrip(self):
        f = GaussianMeanFactor.from_mean([0.5, 1.5, -1.0], 4.0)
        np.testing.assert_allclose(f.h, [2.0, 6.0, -4.0])
        np.testing.assert_allclose(f.mean, [0.5, 1.5, -1.0])

    @pytest.mark.parametrize("s", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_precision(self, s):
        with pytest.raises(ValueError):
            GaussianMeanFactor(np.zeros(2), s)

    @pytest.mark.parametrize("a,b", [(0.0, 1.0), (1.0, -2.0), (np.nan, 1.0)])
    def test_gamma_rejects_bad_parameters(self, a, b):
        with pytest.raises(ValueError):
            GammaFactor(a, b)

    def test_factor_is_read_only(self):
        f = GaussianMeanFactor(np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            f.h[0] = 1.0

    def test_standard_prior(self):
        p = ComponentPosterior.standard_prior(3)
        np.testing.assert_array_equal(p.mean_factor.h, np.zeros(3))
        assert (p.mean_factor.s, p.prec_factor.a, p.prec_factor.b) == (1.0, 1.0, 1.0)

    def test_dict_roundtrip(self):
        c = ComponentPosterior(GaussianMeanFactor([1.0, 2.0], 3.0), GammaFactor(2.5, 0.5))
        back = ComponentPosterior.from_dict(c.to_dict())
        np.testing.assert_array_equal(back.mean_factor.h, c.mean_factor.h)
        assert back.prec_factor == c.prec_factor

    def test_dict_missing_field_is_named(self):
        with pytest.raises(ValueError, match="'b'"):
            ComponentPosterior.from_dict({"h": [0.0], "s": 1.0, "a": 1.0})


class TestMixNatural:
    def setup_method(self):
        self.prev = ComponentPosterior(GaussianMeanFactor([4.0, -2.0], 4.0), GammaFactor(11.0, 6.0))
        self.prior = ComponentPosterior.standard_prior(2)

    def test_endpoints(self):
        assert mix_natural(self.prev, self.prior, 1.0) is self.prev
        assert mix_natural(self.prev, self.prior, 0.0) is self.prior

    def test_half(self):
        # natural parameters average: h=(2,-1), s=2.5, a=6, b=3.5
        m = mix_natural(self.prev, self.prior, 0.5)
        np.testing.assert_allclose(m.mean_factor.h, [2.0, -1.0])
        assert m.mean_factor.s == pytest.approx(2.5)
        assert (m.prec_factor.a, m.prec_factor.b) == pytest.approx((6.0, 3.5))

    @pytest.mark.parametrize("rho", [-0.1, 1.1, np.nan])
    def test_rejects_out_of_range(self, rho):
        with pytest.raises(ValueError):
            mix_natural(self.prev, self.prior, rho)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mix_natural(self.prev, ComponentPosterior.standard_prior(3), 0.5)

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_mixture_stays_valid(self, rho):
        m = mix_natural(self.prev, self.prior, rho)
        assert m.mean_factor.s > 0 and m.prec_factor.a > 0 and m.prec_factor.b > 0


class TestGaussianKL:
    def test_identical_is_zero(self):
        q = GaussianMeanFactor.from_mean([1.0, 2.0], 3.0)
        assert kl_gaussian_mean(q, q) == 0.0

    def test_hand_value(self):
        # d=2, s1=1, s2=2, |dm|^2=1: 0.5 * (2*2 + 2*1 - 2 - 2 ln 2)
        q1 = GaussianMeanFactor.from_mean([0.0, 0.0], 1.0)
        q2 = GaussianMeanFactor.from_mean([1.0, 0.0], 2.0)
        assert kl_gaussian_mean(q1, q2) == pytest.approx(2.0 - np.log(2.0), rel=1e-14)

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        q1 = GaussianMeanFactor.from_mean([0.3, -1.2], 1.7)
        q2 = GaussianMeanFactor.from_mean([1.0, 0.5], 0.6)
        n = 1_000_000
        mu = q1.mean + rng.standard_normal((n, 2)) / np.sqrt(q1.s)
        lp = stats.norm.logpdf(mu, q1.mean, 1 / np.sqrt(q1.s)).sum(1)
        lq = stats.norm.logpdf(mu, q2.mean, 1 / np.sqrt(q2.s)).sum(1)
        diff = lp - lq
        se = diff.std() / np.sqrt(n)
        assert abs(diff.mean() - kl_gaussian_mean(q1, q2)) < 3 * se

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kl_gaussian_mean(GaussianMeanFactor(np.zeros(2), 1.0), GaussianMeanFactor(np.zeros(3), 1.0))

    @given(positive, positive, st.floats(-5, 5), st.floats(-5, 5))
    def test_non_negative(self, s1, s2, m1, m2):
        assert kl_gaussian_mean(GaussianMeanFactor.from_mean([m1], s1), GaussianMeanFactor.from_mean([m2], s2)) >= 0


class TestGammaKL:
    def test_identical_is_zero(self):
        g = GammaFactor(2.0, 3.0)
        assert kl_gamma(g, g) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("p,q", [((2.0, 1.0), (1.0, 1.0)), ((0.7, 2.5), (3.0, 0.4)), ((15.0, 10.0), (1.0, 1.0))])
    def test_quadrature(self, p, q):
        gp = stats.gamma(p[0], scale=1 / p[1])
        gq = stats.gamma(q[0], scale=1 / q[1])
        val, _ = integrate.quad(lambda t: gp.pdf(t) * (gp.logpdf(t) - gq.logpdf(t)), 0, np.inf, limit=200)
        assert kl_gamma(GammaFactor(*p), GammaFactor(*q)) == pytest.approx(val, rel=1e-7, abs=1e-10)

    @given(positive, positive, positive, positive)
    @settings(max_examples=50)
    def test_non_negative(self, a1, b1, a2, b2):
        assert kl_gamma(GammaFactor(a1, b1), GammaFactor(a2, b2)) >= 0.0

    def test_component_kl_is_sum(self):
        c1 = ComponentPosterior(GaussianMeanFactor.from_mean([1.0], 2.0), GammaFactor(3.0, 2.0))
        c2 = ComponentPosterior.standard_prior(1)
        expected = kl_gaussian_mean(c1.mean_factor, c2.mean_factor) + kl_gamma(c1.prec_factor, c2.prec_factor)
        assert kl_component(c1, c2) == pytest.approx(expected)


class TestMoments:
    @pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.5, 0.3), (40.0, 12.0)])
    def test_gamma_moments_quadrature(self, a, b):
        g = stats.gamma(a, scale=1 / b)
        e_tau = integrate.quad(lambda t: t * g.pdf(t), 0, np.inf)[0]
        e_log = integrate.quad(lambda t: np.log(t) * g.pdf(t), 0, np.inf, limit=200)[0]
        got = gamma_moments(GammaFactor(a, b))
        np.testing.assert_allclose(got, (e_tau, e_log), rtol=1e-7)

    def test_entropies_match_scipy(self):
        assert float(gamma_entropy(2.5, 0.3)) == pytest.approx(stats.gamma(2.5, scale=1 / 0.3).entropy())
        expected = stats.multivariate_normal(np.zeros(3), np.eye(3) / 2.0).entropy()
        assert float(gaussian_entropy(2.0, 3)) == pytest.approx(expected)

    def test_expected_log_densities_quadrature(self):
        # E_{Gamma(2,3)}[log Gamma(tau; 1.5, 0.5)]
        g = stats.gamma(2.0, scale=1 / 3.0)
        target = stats.gamma(1.5, scale=1 / 0.5)
        val = integrate.quad(lambda t: g.pdf(t) * target.logpdf(t), 0, np.inf)[0]
        assert float(gamma_expected_log_density(2.0, 3.0, 1.5, 0.5)) == pytest.approx(val, rel=1e-8)
        # E_{N(1, 1/2)}[log N(mu; 0, 1/3)] in one dimension
        q = stats.norm(1.0, np.sqrt(0.5))
        p = stats.norm(0.0, np.sqrt(1 / 3))
        val = integrate.quad(lambda m: q.pdf(m) * p.logpdf(m), -np.inf, np.inf)[0]
        assert float(gaussian_expected_log_density(np.array([1.0]), 2.0, np.array([0.0]), 3.0)) == pytest.approx(val)
