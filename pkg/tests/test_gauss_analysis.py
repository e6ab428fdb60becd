import math

import numpy as np
import pytest

from wsgm_lab.exceptions import ConfigurationError, DomainError
from wsgm_lab.gauss_analysis import (
    WsgmOneScale,
    backward_marginal_exact,
    corollary7_expansion,
    covariance_recursion,
    f_divergence,
    kl_gaussians,
    mean_recursion,
    spectrum_error,
    steps_to_error,
    theorem1_bounds,
    wsgm_one_scale_outcome,
)
from wsgm_lab.gauss_process import SpectrumSpec, build_spectrum, covariance_matrix
from wsgm_lab.sgm import Schedule
from wsgm_lab.wavelet import operator_matrices


def random_spectrum(rng: np.random.Generator, size: int, kappa: float = 100.0) -> np.ndarray:
    half = 0.5 * math.log(kappa)
    return np.exp(rng.uniform(-half, half, size))


class TestRecursions:
    def test_identity_converges_to_biased_fixed_point(self):
        outcome = covariance_recursion(np.ones(3), Schedule(50.0, 500))
        np.testing.assert_allclose(outcome.spectrum_out, 1.0 / (1.0 - 0.05), rtol=1e-12)
        assert outcome.steps == 500

    def test_zero_steps_leave_the_standard_normal_start(self):
        outcome = covariance_recursion(np.array([0.5, 2.0]), Schedule(1.0, 0))
        np.testing.assert_array_equal(outcome.spectrum_out, 1.0)

    def test_stop_after_truncates(self):
        sched = Schedule(2.0, 20)
        partial = covariance_recursion(np.array([3.0]), sched, stop_after=5)
        assert partial.steps == 5
        with pytest.raises(ConfigurationError):
            covariance_recursion(np.array([3.0]), sched, stop_after=21)

    def test_step_size_must_be_below_one(self):
        with pytest.raises(ConfigurationError):
            covariance_recursion(np.ones(2), Schedule(2.0, 1))

    def test_non_positive_spectrum_is_rejected(self):
        with pytest.raises(DomainError):
            covariance_recursion(np.array([1.0, -0.5]), Schedule(1.0, 10))

    def test_small_step_recovers_target(self):
        p = np.array([0.3, 1.0, 4.0])
        h = covariance_recursion(p, Schedule(10.0, 20000)).spectrum_out
        np.testing.assert_allclose(h, p, rtol=0.01)

    def test_mean_recursion_recovers_mean(self):
        p = np.array([0.5, 2.0])
        m = mean_recursion(p, 1.5, Schedule(10.0, 20000))
        np.testing.assert_allclose(m, 1.5, rtol=0.01)

    def test_zero_mean_stays_zero(self):
        np.testing.assert_array_equal(mean_recursion(np.array([2.0]), 0.0, Schedule(5.0, 50)), 0.0)


class TestKullbackLeibler:
    def test_scalar_case(self):
        assert kl_gaussians(0.0, 2.0, 0.0, 1.0) == pytest.approx(0.153426, abs=1e-6)

    def test_identical_is_zero(self):
        assert kl_gaussians([1.0, 2.0], [0.5, 3.0], [1.0, 2.0], [0.5, 3.0]) == pytest.approx(0.0, abs=1e-15)

    def test_against_standard_normal_closed_form(self, rng):
        sigma = random_spectrum(rng, 6)
        expected = 0.5 * (-np.sum(np.log(sigma)) + np.sum(sigma) - sigma.size)
        assert kl_gaussians(0.0, sigma, 0.0, np.ones(6)) == pytest.approx(expected)

    def test_dense_commuting_matrices(self, rng):
        basis, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        a, b = random_spectrum(rng, 5), random_spectrum(rng, 5)
        cov0, cov1 = (basis * a) @ basis.T, (basis * b) @ basis.T
        mu0, mu1 = rng.standard_normal(5), rng.standard_normal(5)
        inverse = np.linalg.inv(cov1)
        expected = 0.5 * (np.trace(inverse @ cov0) + (mu1 - mu0) @ inverse @ (mu1 - mu0) - 5
                          + np.linalg.slogdet(cov1)[1] - np.linalg.slogdet(cov0)[1])
        assert kl_gaussians(mu0, cov0, mu1, cov1) == pytest.approx(expected, rel=1e-9)

    def test_stationary_covariances_commute(self, power_law_1d):
        cov = covariance_matrix(power_law_1d)
        assert kl_gaussians(0.0, cov, 0.0, np.eye(16)) == pytest.approx(
            kl_gaussians(0.0, power_law_1d.spectrum, 0.0, np.ones(16)), rel=1e-9)

    def test_non_commuting_matrices_are_rejected(self):
        cov0 = np.array([[2.0, 0.5], [0.5, 1.0]])
        cov1 = np.diag([1.0, 3.0])
        with pytest.raises(DomainError):
            kl_gaussians(0.0, cov0, 0.0, cov1)


class TestErrorBounds:
    def test_identity_spectrum(self):
        bounds = theorem1_bounds(np.ones(1), 1.0, 0.1)
        assert bounds.e_T == 0.0
        assert bounds.e_delta == pytest.approx(0.05 - math.log1p(0.05), rel=1e-10)
        assert bounds.e_delta == pytest.approx(0.0012098, abs=1e-7)

    def test_f_divergence(self):
        assert f_divergence(0.0) == 0.0
        assert f_divergence(1.0) == pytest.approx(1.0 - math.log(2.0))

    def test_horizon_must_be_a_multiple_of_step(self):
        with pytest.raises(ConfigurationError):
            theorem1_bounds(np.ones(2), 1.0, 0.3)

    def test_horizon_term_vanishes_monotonically(self):
        p = np.array([2.0, 0.5])
        values = [theorem1_bounds(p, T, 0.125).e_T for T in (1.0, 2.0, 4.0, 8.0)]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-12

    def test_bounds_are_continuous_through_one(self):
        centre = theorem1_bounds(np.ones(1), 2.0, 0.05)
        for offset in (1e-6, -1e-6):
            nearby = theorem1_bounds(np.full(1, 1.0 + offset), 2.0, 0.05)
            assert abs(nearby.e_delta - centre.e_delta) < 1e-8
            assert abs(nearby.e_T - centre.e_T) < 1e-8

    def test_bounds_are_permutation_invariant(self, rng):
        p = random_spectrum(rng, 8)
        a = theorem1_bounds(p, 3.0, 0.05)
        b = theorem1_bounds(p[::-1], 3.0, 0.05)
        assert a.e_delta == pytest.approx(b.e_delta)
        assert a.kl_exact == pytest.approx(b.kl_exact)

    def test_residual_is_higher_order_in_step(self):
        p = np.array([2.0, 0.5])
        ratios = []
        for delta in (0.05, 0.025, 0.0125):
            bounds = theorem1_bounds(p, 6.0, delta)
            ratios.append(abs(bounds.residual) / (delta + math.exp(-24.0)))
        assert ratios[0] > ratios[1] > ratios[2]

    @pytest.mark.parametrize("seed", range(5))
    def test_residual_ratio_decreases_for_random_spectra(self, seed):
        p = random_spectrum(np.random.default_rng(seed), 16)
        ratios = [abs(theorem1_bounds(p, 6.0, delta).residual) / (delta + math.exp(-24.0))
                  for delta in (0.05, 0.025, 0.0125, 0.00625)]
        assert ratios[-1] < ratios[0]


class TestExpansion:
    def test_identity_limit(self):
        terms = corollary7_expansion(np.ones(2))
        np.testing.assert_allclose(terms.sigma_T, 0.0)
        np.testing.assert_allclose(terms.sigma_delta, 0.5)

    def test_zero_mean_terms_vanish(self):
        terms = corollary7_expansion(np.array([0.5, 3.0]), mu=0.0)
        np.testing.assert_array_equal(terms.mu_delta, 0.0)
        np.testing.assert_array_equal(terms.mu_T, 0.0)

    def test_series_branch_is_continuous(self):
        inside = corollary7_expansion(np.array([1.0 + 0.99e-4])).sigma_delta
        outside = corollary7_expansion(np.array([1.0 + 1.01e-4])).sigma_delta
        assert abs(inside[0] - outside[0]) < 1e-5

    def test_expansion_residual_shrinks_with_step(self):
        p = np.array([0.5, 0.8, 1.0, 2.0, 5.0])
        terms = corollary7_expansion(p)
        horizon = 6.0
        ratios = []
        for steps in (60, 120, 240, 480):
            delta = horizon / steps
            h = covariance_recursion(p, Schedule(horizon, steps)).spectrum_out
            remainder = h - p - delta * terms.sigma_delta - math.exp(-4 * horizon) * terms.sigma_T
            ratios.append(np.max(np.abs(remainder)) / (delta + math.exp(-4 * horizon)))
        assert all(b < a for a, b in zip(ratios, ratios[1:]))


class TestBackwardMarginal:
    def test_starts_at_identity(self):
        np.testing.assert_allclose(backward_marginal_exact(np.array([0.3, 4.0]), 5.0, 0.0), 1.0)

    def test_ends_near_target(self):
        p = np.array([0.3, 1.0, 4.0])
        np.testing.assert_allclose(backward_marginal_exact(p, 10.0, 10.0), p, rtol=1e-6)

    def test_time_outside_horizon(self):
        with pytest.raises(DomainError):
            backward_marginal_exact(np.ones(2), 1.0, 1.5)

    def test_discrete_chain_converges_at_first_order(self):
        p = np.array([0.4, 1.0, 3.0])
        horizon, t = 3.0, 1.5
        exact = backward_marginal_exact(p, horizon, t)
        errors = []
        for steps in (60, 120, 240):
            h = covariance_recursion(p, Schedule(horizon, steps), stop_after=steps // 2).spectrum_out
            errors.append(np.max(np.abs(h - exact)))
        assert errors[0] > errors[1] > errors[2]
        assert errors[1] / errors[2] > 1.5


class TestSpectrumError:
    def test_hand_cases(self):
        p = np.array([1.0, 2.0, 0.5])
        assert spectrum_error(p, p) == 0.0
        assert spectrum_error(2 * p, p) == pytest.approx(1.0)
        assert spectrum_error(np.array([1.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(1.0)
        assert spectrum_error(np.array([1.0, 1.0]), np.array([1.0, 2.0])) == pytest.approx(0.5)


class TestWsgmOneScale:
    def test_converges_to_true_joint_covariance(self, power_law_1d, haar):
        setup = WsgmOneScale(power_law_1d, haar)
        G, G_bar = operator_matrices(haar, 16, 1)
        gamma = setup.cond.gamma
        W = np.vstack([G_bar, G]) / gamma
        truth = W @ covariance_matrix(power_law_1d) @ W.T
        outcome = setup.outcome(Schedule(10.0, 20000))
        np.testing.assert_allclose(outcome.joint_covariance, truth, atol=0.02 * np.abs(truth).max())
        assert setup.error(Schedule(10.0, 20000)) < 0.02

    def test_error_decreases_with_steps(self, power_law_1d, haar):
        setup = WsgmOneScale(power_law_1d, haar)
        errors = [setup.error(Schedule(10.0, n)) for n in (50, 200, 800)]
        assert errors[0] > errors[1] > errors[2]

    def test_kl_is_non_negative(self, power_law_1d, haar):
        outcome = WsgmOneScale(power_law_1d, haar).outcome(Schedule(10.0, 50))
        assert outcome.kl >= 0
        assert outcome.spectrum.shape == (16,)

    def test_functional_form_matches_setup(self, power_law_1d, haar):
        sched = Schedule(10.0, 100)
        outcome = wsgm_one_scale_outcome(power_law_1d, haar, sched)
        expected = WsgmOneScale(power_law_1d, haar).outcome(sched)
        np.testing.assert_allclose(outcome.spectrum, expected.spectrum)
        assert outcome.kl == pytest.approx(expected.kl)


class TestStepsToError:
    def test_identity_is_limited_by_step_bias(self):
        result = steps_to_error(np.ones(4), 0.1)
        assert result.steps == 55
        assert result.reachable
        assert result.error <= 0.1
        before = covariance_recursion(np.ones(4), Schedule(10.0, 54)).spectrum_out
        assert spectrum_error(before, np.ones(4)) > 0.1

    def test_loose_target_needs_no_steps(self):
        g = build_spectrum(SpectrumSpec(eta=1.0, xi=2 * np.pi / 16, side=16, normalization="raw"))
        assert steps_to_error(g, 1.0).steps == 0

    def test_result_is_minimal(self):
        p = np.array([0.5, 3.0])
        result = steps_to_error(p, 0.05)
        assert result.error <= 0.05
        before = covariance_recursion(p, Schedule(10.0, result.steps - 1)).spectrum_out
        assert spectrum_error(before, p) > 0.05

    def test_short_horizon_reports_floor(self):
        result = steps_to_error(np.array([50.0, 0.1]), 0.01, horizon=0.5)
        assert not result.reachable
        assert result.steps is None
        assert result.floor > 0.01

    def test_cap_triggers_extrapolation(self):
        g = build_spectrum(SpectrumSpec(eta=1.0, xi=2 * np.pi / 64, side=64, normalization="raw"))
        result = steps_to_error(g, 0.001, step_cap=64)
        assert result.extrapolated
        assert result.steps > 64

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            steps_to_error(np.ones(2), 0.1, method="ddpm")

    def test_invalid_epsilon(self):
        with pytest.raises(ConfigurationError):
            steps_to_error(np.ones(2), 0.0)

    @pytest.mark.slow
    def test_sgm_cost_grows_and_wsgm_cost_is_stable(self, haar):
        sgm, wsgm = [], []
        for side in (16, 32, 64):
            g = build_spectrum(SpectrumSpec(eta=1.0, xi=2 * np.pi / side, side=side, normalization="raw"))
            sgm.append(steps_to_error(g, 0.1, "sgm").steps)
            wsgm.append(steps_to_error(g, 0.1, "wsgm-1scale", filters=haar).steps)
        assert sgm[0] < sgm[1] < sgm[2]
        assert sgm[2] >= 2 * sgm[0]
        assert max(wsgm) <= 2 * min(wsgm)
