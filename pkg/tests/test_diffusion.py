import numpy as np
import pytest

from dmden import gmm as G
from dmden.analysis import empirical_jacobian, lipschitz_step
from dmden.diffusion import (FunctionDenoiser, Observation, OracleDenoiser, affine_reverse_covariance,
                             deterministic_denoise, eps_from_mu, forward_sample, jensen_gap_estimate,
                             jensen_gap_exact, mu_from_eps, oracle_step, posterior_coefficients,
                             posterior_mean, stochastic_reverse)
from dmden.errors import ParameterError
from dmden.schedule import build_linear_schedule, match_timestep, reference_schedule


def bimodal_1d():
    """Two narrow modes at +-1, rescaled to unit energy."""
    g = G.Gmm(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.full((2, 1, 1), 0.05))
    return G.normalize_gmm(g)


class TestForwardSample:
    def test_noiseless_limit(self):
        s = build_linear_schedule(4, 1e-12, 0.1)
        x0 = np.array([[0.5, -2.0]])
        np.testing.assert_allclose(forward_sample(x0, s, 1, np.random.default_rng(0)), x0, atol=1e-5)

    def test_variance_from_zero(self):
        s = reference_schedule(50)
        x = forward_sample(np.zeros((10**5, 1)), s, 20, np.random.default_rng(1))
        assert abs(x.var() / (1 - s.alpha_bar(20)) - 1) < 0.03

    def test_deterministic(self):
        s = reference_schedule(10)
        x0 = np.ones((3, 2))
        a = forward_sample(x0, s, 5, np.random.default_rng(4))
        b = forward_sample(x0, s, 5, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)


class TestPosteriorMean:
    def test_first_step_returns_x0(self):
        s = reference_schedule(10)
        a, b = posterior_coefficients(s, 1)
        assert b == 0.0 and a == pytest.approx(1.0, rel=1e-12)
        x0 = np.array([1.0, 2.0])
        np.testing.assert_allclose(posterior_mean(np.array([9.0, 9.0]), x0, s, 1), x0, rtol=1e-12)

    def test_equal_inputs_coefficient(self):
        s = reference_schedule(100)
        v = np.array([0.7, -1.1, 2.0])
        for t in (2, 37, 100):
            ab, abp, beta = s.alpha_bar(t), s.alpha_bar(t - 1), s.beta(t)
            c = (np.sqrt(abp) * beta + np.sqrt(1 - beta) * (1 - abp)) / (1 - ab)
            np.testing.assert_allclose(posterior_mean(v, v, s, t), c * v, rtol=1e-14)

    def test_jacobian_is_lipschitz_constant(self):
        rng = np.random.default_rng(0)
        s = reference_schedule(300)
        for _ in range(10):
            t = int(rng.integers(2, 301))
            x_t, x0 = rng.normal(size=4), rng.normal(size=4)
            J = empirical_jacobian(lambda x: posterior_mean(x, x0, s, t), x_t, 1e-4)
            np.testing.assert_allclose(J, lipschitz_step(s, t) * np.eye(4), rtol=1e-6, atol=1e-6 * lipschitz_step(s, t))


class TestOracleStep:
    def test_standard_normal(self):
        s = reference_schedule(100)
        x = np.random.default_rng(2).normal(size=(5, 3))
        for t in (1, 2, 50, 100):
            np.testing.assert_allclose(oracle_step(G.standard_normal_gmm(3), x, s, t),
                                       np.sqrt(s.alpha(t)) * x, rtol=1e-12)

    def test_first_step_is_cme(self):
        s = reference_schedule(10)
        g = G.random_gmm(3, 2, 0)
        x = np.array([[0.3, 0.1, -0.4]])
        np.testing.assert_allclose(oracle_step(g, x, s, 1), G.cme_at_diffusion_step(g, x, s, 1), rtol=1e-12)

    def test_matches_binned_regression(self):
        g = bimodal_1d()
        s = reference_schedule(10)
        t = 5
        rng = np.random.default_rng(0)
        n = 10**7
        x_prev = forward_sample(G.sample(g, n, rng), s, t - 1, rng)
        x_t = np.sqrt(s.alpha(t)) * x_prev + np.sqrt(s.beta(t)) * rng.standard_normal(x_prev.shape)
        for c in (-0.8, 0.0, 0.5):
            sel = np.abs(x_t[:, 0] - c) < 0.005
            m, se = x_prev[sel, 0].mean(), x_prev[sel, 0].std() / np.sqrt(sel.sum())
            assert abs(oracle_step(g, np.array([[c]]), s, t)[0, 0] - m) < 3 * se


class TestDeterministicDenoise:
    def test_low_snr_collapses_to_prior_mean(self):
        g = G.normalize_gmm(G.random_gmm(8, 4, 0))
        # the schedule has to reach below -40 dB, otherwise t_hat saturates at T
        d = OracleDenoiser(g, build_linear_schedule(1000, 1e-4, 0.05))
        rng = np.random.default_rng(0)
        eta_sq = 1e4
        y = G.sample(g, 2000, rng) + np.sqrt(eta_sq) * rng.standard_normal((2000, 8))
        x, _ = deterministic_denoise(d, Observation(y, eta_sq))
        rel = np.linalg.norm(x, axis=1) / np.sqrt(8)
        rel_cme = np.linalg.norm(G.cme(g, y, eta_sq), axis=1) / np.sqrt(8)
        # batch average; single outputs reach about 0.033 (the CME about 0.020)
        assert rel.mean() <= 0.02
        assert rel_cme.mean() <= 0.02

    def test_single_step_is_cme_at_step_one(self):
        g = G.random_gmm(3, 3, 1)
        s = reference_schedule(100)
        y = np.array([0.2, -0.4, 1.0])
        x, t_hat = deterministic_denoise(OracleDenoiser(g, s), Observation(y, 1e-6))
        assert t_hat == 1
        y_t = y / np.sqrt(1 + 1e-6)
        np.testing.assert_allclose(x, G.cme_at_diffusion_step(g, y_t, s, 1), rtol=1e-12)

    def test_bit_identical_and_rng_free(self):
        g = G.random_gmm(4, 2, 3)
        d = OracleDenoiser(g, reference_schedule(50))
        y = np.random.default_rng(0).normal(size=(20, 4))
        state = np.random.get_state()[1].copy()
        a = deterministic_denoise(d, Observation(y, 0.3))[0]
        b = deterministic_denoise(d, Observation(y, 0.3))[0]
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(np.random.get_state()[1], state)

    def test_unrolls_matched_steps(self):
        s = reference_schedule(50)
        calls = []
        d = FunctionDenoiser(lambda x, t: calls.append(t) or x, s)
        _, t_hat = deterministic_denoise(d, Observation(np.ones(2), 0.5))
        assert t_hat == match_timestep(s, 0.5)
        assert calls == list(range(t_hat, 0, -1))

    def test_per_row_assumed_noise(self):
        g = G.random_gmm(3, 2, 5)
        s = reference_schedule(100)
        d = OracleDenoiser(g, s)
        y = np.random.default_rng(1).normal(size=(4, 3))
        eta = np.array([0.01, 0.1, 1.0, 10.0])
        x, t_hat = deterministic_denoise(d, Observation(y, 0.1, eta))
        for i in range(4):
            xi, ti = deterministic_denoise(d, Observation(y[i], 0.1, eta[i]))
            assert ti == t_hat[i]
            np.testing.assert_allclose(x[i], xi, rtol=1e-12, atol=1e-14)

    def test_callback_trajectory(self):
        s = reference_schedule(10)
        d = OracleDenoiser(G.standard_normal_gmm(2), s)
        seen = []
        y = np.ones((3, 2))
        x, t_hat = deterministic_denoise(d, Observation(y, 1.0), callback=lambda t, v: seen.append((t, v.copy())))
        assert [t for t, _ in seen] == list(range(t_hat, -1, -1))
        np.testing.assert_allclose(seen[0][1], y / np.sqrt(2))
        np.testing.assert_array_equal(seen[-1][1], x)


class TestStochasticReverse:
    def test_first_step_only_is_deterministic(self):
        g = G.random_gmm(3, 2, 0)
        s = reference_schedule(10)
        d = OracleDenoiser(g, s)
        x = np.ones((2, 3))
        np.testing.assert_array_equal(stochastic_reverse(d, s, 1, x, np.random.default_rng(0)), d.step(x, 1))

    def test_generation_covariance(self):
        s = reference_schedule(100)
        d = OracleDenoiser(G.standard_normal_gmm(2), s)
        rng = np.random.default_rng(0)
        x = stochastic_reverse(d, s, s.T, rng.standard_normal((10**5, 2)), rng)
        v = affine_reverse_covariance(s)
        np.testing.assert_allclose(np.cov(x.T), v * np.eye(2), atol=0.03 * v)
        assert np.all(np.abs(x.mean(axis=0)) < 0.03 * np.sqrt(v))

    def test_normalized_mixture_mean(self):
        g = G.normalize_gmm(G.random_gmm(4, 3, 2))
        s = reference_schedule(50)
        rng = np.random.default_rng(1)
        x = stochastic_reverse(OracleDenoiser(g, s), s, s.T, rng.standard_normal((10**5, 4)), rng)
        assert np.linalg.norm(x.mean(axis=0)) <= 0.05 * np.sqrt(4)

    def test_resampling_worse_than_deterministic(self):
        g = G.normalize_gmm(G.random_gmm(8, 4, 0))
        s = reference_schedule(100)
        d = OracleDenoiser(g, s)
        rng = np.random.default_rng(3)
        x0 = G.sample(g, 4000, rng)
        y = x0 + rng.standard_normal(x0.shape)
        det, t_hat = deterministic_denoise(d, Observation(y, 1.0))
        res = stochastic_reverse(d, s, t_hat, y / np.sqrt(2), rng)
        assert np.sum((res - x0) ** 2) > np.sum((det - x0) ** 2)

    def test_start_range(self):
        s = reference_schedule(5)
        d = OracleDenoiser(G.standard_normal_gmm(1), s)
        with pytest.raises(ParameterError):
            stochastic_reverse(d, s, 6, np.zeros(1), np.random.default_rng(0))


class TestReparameterization:
    def test_zero_noise_prediction(self):
        s = reference_schedule(10)
        x = np.array([1.0, -2.0])
        np.testing.assert_allclose(mu_from_eps(np.zeros(2), x, s, 4), x / np.sqrt(s.alpha(4)), rtol=1e-15)

    def test_true_noise_substitution(self):
        s = reference_schedule(100)
        rng = np.random.default_rng(0)
        x0, eps = rng.normal(size=3), rng.normal(size=3)
        t = 40
        ab, a = s.alpha_bar(t), s.alpha(t)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps
        ref = (np.sqrt(ab) * x0 + (np.sqrt(1 - ab) - (1 - a) / np.sqrt(1 - ab)) * eps) / np.sqrt(a)
        np.testing.assert_allclose(mu_from_eps(eps, x_t, s, t), ref, rtol=1e-12)

    def test_round_trip(self):
        s = reference_schedule(300)
        rng = np.random.default_rng(1)
        eps, x = rng.normal(size=(2, 5, 4))
        for t in (1, 100, 300):
            np.testing.assert_allclose(eps_from_mu(mu_from_eps(eps, x, s, t), x, s, t), eps, atol=1e-12, rtol=1e-12)


class TestAffineRecursion:
    def test_single_step(self):
        s = reference_schedule(10)
        assert affine_reverse_covariance(s, start_t=1, scale=2.0) == 2.0 * s.alpha(1)

    def test_two_steps_by_hand(self):
        s = reference_schedule(5)
        v = s.alpha(1) * (s.alpha(2) * 1.0 + s.sigma_sq(2)) + s.sigma_sq(1)
        assert affine_reverse_covariance(s, start_t=2) == pytest.approx(v, rel=1e-15)


class TestJensenGap:
    def test_standard_normal_is_zero(self):
        s = reference_schedule(100)
        m, se = jensen_gap_estimate(G.standard_normal_gmm(2), s, 20, 200, 8, np.random.default_rng(0))
        assert m < 1e-12

    def test_matches_exact(self):
        g = bimodal_1d()
        s = reference_schedule(10)
        t = 3
        rng = np.random.default_rng(0)
        m, se = jensen_gap_estimate(g, s, t, 2000, 64, rng)
        x_next = forward_sample(G.sample(g, 200000, rng), s, t + 1, rng)
        exact = jensen_gap_exact(g, s, t, x_next).mean()
        assert abs(m - exact) < 4 * se + 0.02 * exact

    def test_exact_zero_for_gaussian(self):
        s = reference_schedule(50)
        x = np.random.default_rng(0).normal(size=(10, 3))
        assert np.max(jensen_gap_exact(G.standard_normal_gmm(3), s, 10, x)) < 1e-12

    @pytest.mark.parametrize("kw", [dict(n_outer=0, n_inner=8), dict(n_outer=5, n_inner=3),
                                    dict(n_outer=5, n_inner=0)])
    def test_parameter_validation(self, kw):
        with pytest.raises(ParameterError):
            jensen_gap_estimate(bimodal_1d(), reference_schedule(10), 2, rng=np.random.default_rng(0), **kw)

    def test_step_range(self):
        with pytest.raises(ParameterError):
            jensen_gap_estimate(bimodal_1d(), reference_schedule(10), 10, 4, 2, np.random.default_rng(0))
