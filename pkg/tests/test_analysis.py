import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmden import gmm as G
from dmden.analysis import (BoundParams, empirical_jacobian, empirical_jacobian_norm, estimate_l1,
                            estimate_stepwise_gap, lipschitz_eps, lipschitz_range, lipschitz_snr_form,
                            lipschitz_step, loglog_slope, spectral_norm, theorem1_bound, theorem2_bound)
from dmden.diffusion import FunctionDenoiser, OracleDenoiser, posterior_mean
from dmden.errors import ParameterError
from dmden.model import MlpNetwork, TrainConfig, as_denoiser, train
from dmden.schedule import REFERENCE_BETA_T, build_linear_schedule, constant_schedule, snr_dm, reference_schedule

TABLE_T = sorted(REFERENCE_BETA_T)


class TestLipschitzStep:
    def test_constant_beta_closed_form(self):
        # sqrt(1 - beta) / (2 - beta) at beta = 0.5, to 30 digits
        assert math.isclose(lipschitz_step(constant_schedule(4, 0.5), 2), 0.471404520791031682933896, rel_tol=1e-15)

    @pytest.mark.parametrize("T", TABLE_T)
    def test_below_one_on_reference_schedules(self, T):
        s = reference_schedule(T)
        L = np.array([lipschitz_step(s, t) for t in range(2, T + 1)])
        assert np.all((L > 0) & (L < 1))

    @given(T=st.integers(2, 200), b1=st.floats(1e-5, 0.3), frac=st.floats(0, 1))
    @settings(max_examples=50, deadline=None)
    def test_in_unit_interval(self, T, b1, frac):
        s = build_linear_schedule(T, b1, b1 + frac * (0.9 - b1))
        for t in range(2, T + 1):
            assert 0 < lipschitz_step(s, t) < 1

    def test_first_step_rejected(self):
        with pytest.raises(ParameterError):
            lipschitz_step(reference_schedule(10), 1)

    def test_matches_jacobian(self):
        s = reference_schedule(100)
        rng = np.random.default_rng(5)
        for t in (2, 30, 100):
            x0 = rng.normal(size=3)
            J = empirical_jacobian(lambda x: posterior_mean(x, x0, s, t), rng.normal(size=3), 1e-4)
            assert abs(spectral_norm(J) / lipschitz_step(s, t) - 1) < 1e-6


class TestLipschitzRange:
    def test_single_factor(self):
        s = reference_schedule(50)
        for t in (2, 17, 50):
            assert math.isclose(lipschitz_range(s, t, t), lipschitz_step(s, t), rel_tol=1e-14)

    @pytest.mark.parametrize("T", TABLE_T)
    def test_equals_product(self, T):
        s = reference_schedule(T)
        rng = np.random.default_rng(T)
        for _ in range(200):
            a, b = sorted(rng.integers(2, T + 1, size=2))
            prod = math.prod(lipschitz_step(s, t) for t in range(a, b + 1))
            assert math.isclose(lipschitz_range(s, a, b), prod, rel_tol=1e-12)

    def test_full_range_below_one(self):
        s = reference_schedule(1000)
        assert lipschitz_range(s, 2, 1000) < 1

    @pytest.mark.parametrize("a,b", [(1, 5), (6, 5), (2, 11)])
    def test_range_validation(self, a, b):
        with pytest.raises(ParameterError):
            lipschitz_range(reference_schedule(10), a, b)


class TestLipschitzEps:
    def test_constant_beta_value(self):
        # sqrt(1 - 0.25) / 0.5 * (sqrt(0.5) * sqrt(0.5) / 1.5 + 1) = 4 sqrt(3) / 3
        assert math.isclose(lipschitz_eps(constant_schedule(3, 0.5), 2), 2.30940107675850305803659, rel_tol=1e-14)

    def test_larger_for_small_steps(self):
        s = reference_schedule(300)
        L = np.array([lipschitz_eps(s, t) for t in range(2, 301)])
        # the closed form rises over the first couple of dozen steps (peak at t = 25),
        # then decreases monotonically; every early value exceeds the late ones
        peak = int(np.argmax(L)) + 2
        assert peak == 25
        assert np.all(np.diff(L[peak - 2:]) < 0)
        assert np.all(L[:150] > L[150:].max())

    def test_bounds_linear_probe(self):
        s = reference_schedule(100)
        rng = np.random.default_rng(0)
        N = 4
        for t in (2, 10, 60, 100):
            a_t, ab = s.alpha(t), s.alpha_bar(t)
            c = s.beta(t) / math.sqrt(1 - ab)
            Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
            Jmu = rng.uniform(0, 1) * lipschitz_step(s, t) * Q
            # eps-net whose induced mean map (x - c eps(x)) / sqrt(alpha) has Jacobian Jmu
            M = (np.eye(N) - math.sqrt(a_t) * Jmu) / c
            assert np.linalg.norm(Jmu, 2) <= lipschitz_step(s, t) + 1e-15
            for _ in range(20):
                u, v = rng.normal(size=(2, N))
                assert np.linalg.norm(M @ u - M @ v) <= lipschitz_eps(s, t) * np.linalg.norm(u - v) * (1 + 1e-12)


class TestLipschitzSnrForm:
    def test_matches_range_everywhere(self):
        s = reference_schedule(300)
        for t in range(2, 301):
            assert math.isclose(lipschitz_snr_form(s, t), lipschitz_range(s, 2, t), rel_tol=1e-10)

    def test_vanishes_at_zero_snr(self):
        s = build_linear_schedule(2000, 1e-4, 0.05)
        assert lipschitz_snr_form(s, 2000) < 1e-8

    def test_monotone_in_snr(self):
        s = reference_schedule(100)
        vals = [lipschitz_snr_form(s, t) for t in range(2, 101)]
        snrs = [snr_dm(s, t) for t in range(2, 101)]
        order = np.argsort(snrs)
        assert np.all(np.diff(np.array(vals)[order]) > 0)


class TestBounds:
    def test_quarter_T_halves_first_term(self):
        p = BoundParams(T=100, t_hat=10, L1=0.9, N=8, c=3.0)
        q = BoundParams(T=400, t_hat=10, L1=0.9, N=8, c=3.0)
        assert math.isclose(theorem2_bound(q), theorem2_bound(p) / 2, rel_tol=1e-14)

    def test_first_step_closed_form(self):
        p = BoundParams(T=16, t_hat=1, L1=0.7, N=3, c=2.0, delta=0.05)
        # 2*3*0.7*2/4 + ((4*0.7 + 2) + 2*0.7 - 1) * 0.05
        assert abs(theorem2_bound(p) - 2.36) < 1e-12

    def test_reference_value(self):
        p = BoundParams(T=1000, t_hat=100, L1=1.0, N=8, gamma=1.0, c=10.0, delta=0.01)
        assert math.isclose(theorem2_bound(p), 52.8829512846192971728, rel_tol=1e-13)

    def test_from_schedule_constant(self):
        s = reference_schedule(1000)
        p = BoundParams.from_schedule(s, 100, 1.0, 8, delta=0.01)
        assert p.c == pytest.approx(10.0, rel=1e-15)
        assert math.isclose(theorem2_bound(p), 52.8829512846192971728, rel_tol=1e-13)

    @given(T=st.integers(2, 10**6), th=st.integers(1, 10**6), L1=st.floats(0.01, 5), d=st.floats(0, 1))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, T, th, L1, d):
        th = min(th, T)
        p = BoundParams(T=T, t_hat=th, L1=L1, N=4, c=1.0, delta=d)
        assert theorem2_bound(BoundParams(T=T + 1, t_hat=th, L1=L1, N=4, c=1.0)) < \
            theorem2_bound(BoundParams(T=T, t_hat=th, L1=L1, N=4, c=1.0))
        assert theorem2_bound(BoundParams(T=T, t_hat=th, L1=L1, N=4, c=1.0, delta=d + 0.01)) > theorem2_bound(p)

    def test_theorem1_reduces(self):
        p = BoundParams(T=50, t_hat=7, L1=0.8, N=2, c=1.5, xi=0.0)
        assert theorem1_bound(p, 0.3) == theorem2_bound(BoundParams(T=50, t_hat=7, L1=0.8, N=2, c=1.5))
        q = BoundParams(T=50, t_hat=7, L1=0.8, N=2, c=1.5, xi=4.0)
        assert theorem1_bound(q, 0.0) == theorem1_bound(p, 0.3)

    def test_theorem1_value(self):
        p = BoundParams(T=16, t_hat=5, L1=0.7, N=3, c=2.0, xi=0.3)
        assert math.isclose(theorem1_bound(p, 0.25), 5.55481961611161078666, rel_tol=1e-14)

    @pytest.mark.parametrize("kw", [dict(t_hat=0), dict(t_hat=11), dict(gamma=0.0), dict(delta=-1.0), dict(L1=-0.1)])
    def test_validation(self, kw):
        base = dict(T=10, t_hat=3, L1=1.0, N=2)
        with pytest.raises(ParameterError):
            BoundParams(**{**base, **kw})


class TestEmpiricalJacobian:
    def test_standard_normal_oracle(self):
        s = reference_schedule(100)
        d = OracleDenoiser(G.standard_normal_gmm(3), s)
        for t in (1, 40, 100):
            got = empirical_jacobian_norm(d, np.random.default_rng(t).normal(size=3), t)
            assert abs(got / math.sqrt(s.alpha(t)) - 1) < 1e-4

    def test_linear_probe(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            M = rng.normal(size=(5, 5))
            d = FunctionDenoiser(lambda x, t: x @ M.T, reference_schedule(5))
            got = empirical_jacobian_norm(d, rng.normal(size=5), 2, h=1e-3)
            assert abs(got - np.linalg.svd(M, compute_uv=False)[0]) < 1e-6

    def test_estimate_l1_standard_normal(self):
        s = reference_schedule(10)
        L1 = estimate_l1(OracleDenoiser(G.standard_normal_gmm(2), s), 2, np.random.default_rng(0))
        assert abs(L1 - math.sqrt(s.alpha(1))) < 1e-8

    def test_step_must_be_positive(self):
        with pytest.raises(ParameterError):
            empirical_jacobian(lambda x: x, np.zeros(2), 0.0)


@pytest.fixture(scope="module")
def small_problem():
    g = G.normalize_gmm(G.random_gmm(2, 2, 0))
    s = reference_schedule(10)
    net = MlpNetwork.init(2, (32, 32), 8, np.random.default_rng(0))
    untrained = net.copy()
    train(net, g, s, TrainConfig(epochs=15, dataset_size=10000, lr=3e-3, seed=0))
    return g, s, net, untrained


class TestStepwiseGap:
    def test_oracle_against_itself(self):
        g = G.random_gmm(3, 3, 0)
        s = reference_schedule(50)
        m, _ = estimate_stepwise_gap(OracleDenoiser(g, s), g, s, 20, 500, np.random.default_rng(0))
        assert m <= 1e-10

    def test_zero_network_is_far(self, small_problem):
        g, s, _, _ = small_problem
        m, se = estimate_stepwise_gap(as_denoiser(MlpNetwork.zeros(2), s), g, s, 5, 500, np.random.default_rng(0))
        assert m > 10 * se > 0

    def test_training_shrinks_gap(self, small_problem):
        g, s, net, untrained = small_problem
        for t in range(1, s.T + 1):
            trained_gap, _ = estimate_stepwise_gap(as_denoiser(net, s), g, s, t, 2000, np.random.default_rng(t))
            raw_gap, _ = estimate_stepwise_gap(as_denoiser(untrained, s), g, s, t, 2000, np.random.default_rng(t))
            assert trained_gap < raw_gap

    def test_needs_samples(self):
        g = G.standard_normal_gmm(1)
        s = reference_schedule(5)
        with pytest.raises(ParameterError):
            estimate_stepwise_gap(OracleDenoiser(g, s), g, s, 2, 0, np.random.default_rng(0))


class TestLoglogSlope:
    def test_power_law(self):
        x = np.array([10, 50, 100, 300, 1000.0])
        assert loglog_slope(x, 3 * x**-0.5) == pytest.approx(-0.5, abs=1e-12)
