import numpy as np
import pytest

import bayesimpute.autodiff as ad
from bayesimpute.autodiff import Tensor
from bayesimpute.errors import ContractError
from bayesimpute.variational import (
    ScaleMixturePrior,
    VariationalTensor,
    init_variational,
    kl_mc_terms,
    log_prior,
    log_q,
    point_weights,
    sample_weights,
    softplus_np,
)


def gaussian_logpdf(w, mu, sigma):
    """Direct density evaluation, independent of the tape implementation."""
    return -0.5 * np.log(2 * np.pi) - np.log(sigma) - (w - mu) ** 2 / (2 * sigma**2)


class TestInit:
    def test_fan_in_one_bound(self):
        vt = init_variational((50,), 1, np.random.default_rng(0))
        assert np.all(np.abs(vt.mu) <= 1.0)

    def test_rho_gives_small_sigma(self):
        vt = init_variational((3, 3), 4, np.random.default_rng(0))
        np.testing.assert_allclose(vt.sigma, softplus_np(-3.0), atol=1e-12)
        assert softplus_np(-3.0) == pytest.approx(0.048587, abs=1e-6)

    def test_seeded_determinism(self):
        a = init_variational((4, 2), 3, np.random.default_rng(7))
        b = init_variational((4, 2), 3, np.random.default_rng(7))
        np.testing.assert_array_equal(a.mu, b.mu)

    def test_bad_fan_in(self):
        with pytest.raises(ContractError):
            init_variational((2,), 0, np.random.default_rng(0))


class TestSampling:
    def test_zero_eps_returns_mu(self):
        vt = VariationalTensor(np.array([1.0, -2.0]), np.array([0.5, 0.5]))
        sw = sample_weights(vt, None, eps=np.zeros(2))
        np.testing.assert_array_equal(sw.w.data, vt.mu)

    def test_rho_zero_eps_one(self):
        vt = VariationalTensor(np.array([1.0]), np.array([0.0]))
        sw = sample_weights(vt, None, eps=np.ones(1))
        assert sw.w.data[0] == pytest.approx(1.0 + np.log(2.0), abs=1e-12)

    def test_empirical_mean(self):
        vt = VariationalTensor(np.full(10**5, 0.7), np.full(10**5, -1.0))
        sw = sample_weights(vt, np.random.default_rng(11))
        sigma = softplus_np(-1.0)
        se = sigma / np.sqrt(10**5)
        assert abs(sw.w.data.mean() - 0.7) < 3 * se

    def test_point_mode(self):
        vt = VariationalTensor(np.array([2.0]), np.array([0.0]))
        sw = point_weights(vt)
        assert sw.w.data[0] == 2.0 and sw.rho is None


class TestLogQ:
    def test_at_mean_unit_sigma(self):
        # sigma = 1 requires rho = softplus^-1(1) = ln(e - 1)
        rho = float(np.log(np.e - 1.0))
        vt = VariationalTensor(np.array([0.3]), np.array([rho]))
        sw = sample_weights(vt, None, eps=np.zeros(1))
        assert log_q(sw).item() == pytest.approx(-0.918939, abs=1e-6)

    def test_additivity(self):
        rng = np.random.default_rng(3)
        mu = rng.standard_normal(2)
        rho = rng.standard_normal(2)
        eps = rng.standard_normal(2)
        joint = log_q(sample_weights(VariationalTensor(mu, rho), None, eps=eps)).item()
        parts = 0.0
        for i in range(2):
            parts += log_q(
                sample_weights(VariationalTensor(mu[i : i + 1], rho[i : i + 1]), None, eps=eps[i : i + 1])
            ).item()
        assert joint == pytest.approx(parts, abs=1e-12)

    def test_matches_direct_density(self):
        rng = np.random.default_rng(5)
        mu = rng.standard_normal((3, 2))
        rho = rng.uniform(-1, 1, (3, 2))
        eps = rng.standard_normal((3, 2))
        sw = sample_weights(VariationalTensor(mu, rho), None, eps=eps)
        sigma = softplus_np(rho)
        expected = gaussian_logpdf(sw.w.data, mu, sigma).sum()
        assert log_q(sw).item() == pytest.approx(expected, abs=1e-10)

    def test_point_mode_rejected(self):
        vt = VariationalTensor(np.array([1.0]), np.array([0.0]))
        with pytest.raises(ContractError):
            log_q(point_weights(vt))


class TestLogPrior:
    def test_pi_one_single_gaussian(self):
        prior = ScaleMixturePrior(pi=1.0, sigma1=1.0, sigma2=0.5)
        vt = VariationalTensor(np.array([0.8]), np.array([0.0]))
        sw = sample_weights(vt, None, eps=np.zeros(1))
        assert log_prior(sw, prior).item() == pytest.approx(
            gaussian_logpdf(0.8, 0.0, 1.0), abs=1e-12
        )

    def test_identical_components_ignore_pi(self):
        vt = VariationalTensor(np.array([1.3]), np.array([0.0]))
        sw = sample_weights(vt, None, eps=np.zeros(1))
        vals = [
            log_prior(sw, ScaleMixturePrior(pi=pi, sigma1=1.0, sigma2=1.0)).item()
            for pi in (0.2, 0.5, 0.8)
        ]
        expected = gaussian_logpdf(1.3, 0.0, 1.0)
        for v in vals:
            assert v == pytest.approx(expected, abs=1e-12)

    def test_mixture_value_at_zero(self):
        prior = ScaleMixturePrior(pi=0.5, sigma1=1.0, sigma2=0.0025)
        vt = VariationalTensor(np.array([0.0]), np.array([0.0]))
        sw = sample_weights(vt, None, eps=np.zeros(1))
        dens = 0.5 / np.sqrt(2 * np.pi) + 0.5 / (0.0025 * np.sqrt(2 * np.pi))
        assert log_prior(sw, prior).item() == pytest.approx(np.log(dens), abs=1e-10)

    def test_swap_symmetry(self):
        # pi <-> 1 - pi with sigma1 <-> sigma2 leaves the density unchanged.
        # The sigma1 >= sigma2 constraint is bypassed via direct evaluation.
        w = np.array([0.4, -1.7])
        vt = VariationalTensor(w, np.zeros(2))
        sw = sample_weights(vt, None, eps=np.zeros(2))
        a = log_prior(sw, ScaleMixturePrior(pi=0.3, sigma1=2.0, sigma2=0.1)).item()

        dens = 0.7 * np.exp(gaussian_logpdf(w, 0.0, 0.1)) + 0.3 * np.exp(
            gaussian_logpdf(w, 0.0, 2.0)
        )
        assert a == pytest.approx(np.log(dens).sum(), abs=1e-10)

    def test_large_weight_stays_finite(self):
        prior = ScaleMixturePrior(pi=0.5, sigma1=1.0, sigma2=float(np.exp(-6)))
        vt = VariationalTensor(np.array([50.0]), np.array([0.0]))
        sw = sample_weights(vt, None, eps=np.zeros(1))
        val = log_prior(sw, prior).item()
        assert np.isfinite(val)
        # Dominated by the wide component at |w| >> sigma2.
        assert val == pytest.approx(np.log(0.5) + gaussian_logpdf(50.0, 0.0, 1.0), abs=1e-8)

    def test_invalid_prior(self):
        with pytest.raises(ContractError):
            ScaleMixturePrior(pi=1.5)
        with pytest.raises(ContractError):
            ScaleMixturePrior(sigma1=0.1, sigma2=0.5)


class TestKLTerms:
    def test_empty_is_zero(self):
        assert kl_mc_terms([], ScaleMixturePrior()).item() == 0.0

    def test_posterior_equals_prior_mc_zero(self):
        # q = p = N(0,1): every draw's log q - log p is exactly 0, so the MC
        # mean sits within any positive tolerance of the closed form 0.
        n = 10**5
        rho = float(np.log(np.e - 1.0))
        vt = VariationalTensor(np.zeros(n), np.full(n, rho))
        prior = ScaleMixturePrior(pi=1.0, sigma1=1.0, sigma2=1.0)
        sw = sample_weights(vt, np.random.default_rng(21))
        total = kl_mc_terms([sw], prior).item() / n
        assert abs(total) < 1e-12

    def test_shifted_posterior_mc_half(self):
        # q = N(1,1), p = N(0,1): closed form KL = 0.5.
        n = 10**5
        rho = float(np.log(np.e - 1.0))
        vt = VariationalTensor(np.ones(n), np.full(n, rho))
        prior = ScaleMixturePrior(pi=1.0, sigma1=1.0, sigma2=1.0)
        sw = sample_weights(vt, np.random.default_rng(22))
        per_weight = gaussian_logpdf(sw.w.data, 1.0, 1.0) - gaussian_logpdf(
            sw.w.data, 0.0, 1.0
        )
        mc = kl_mc_terms([sw], prior).item() / n
        se = per_weight.std(ddof=1) / np.sqrt(n)
        assert abs(mc - 0.5) < 3 * se

    def test_gradients_with_fixed_eps(self):
        from bayesimpute.variational import SampledWeights

        rng = np.random.default_rng(9)
        mu = rng.standard_normal((2, 2))
        rho = rng.uniform(-2, 0, (2, 2))
        eps = rng.standard_normal((2, 2))
        prior = ScaleMixturePrior()

        def build(mu_t, rho_t):
            w = ad.add(mu_t, ad.mul(ad.softplus(rho_t), Tensor(eps)))
            sw = SampledWeights(w=w, mu=mu_t, rho=rho_t, eps=eps)
            return ad.sub(log_q(sw), log_prior(sw, prior))

        assert ad.grad_check(build, [mu, rho]) < 1e-4
