import numpy as np
import pytest

from wsgm_lab.exceptions import ConfigurationError, DomainError, NumericalDivergenceError
from wsgm_lab.gauss_analysis import covariance_recursion, mean_recursion
from wsgm_lab.gauss_process import StationaryGaussian, conditional_gaussian, covariance_matrix, exact_normalizers
from wsgm_lab.metrics import estimate_spectrum
from wsgm_lab.sgm import (
    DenseGaussianScore,
    ExactConditionalScore,
    ExactScore,
    Schedule,
    euler_maruyama_reverse,
    exact_cascade_scores,
    exact_conditional_score,
    forward_noise,
    wsgm_sample,
)
from wsgm_lab.wavelet import NormalizerSet


class TestSchedule:
    def test_uniform_grid(self):
        sched = Schedule.uniform(5.0, 10)
        assert sched.step_size == 0.5
        np.testing.assert_allclose(sched.grid, np.linspace(0.0, 5.0, 11))
        np.testing.assert_allclose(sched.step_sizes, 0.5)
        assert sched.grid[-1] == 5.0

    def test_zero_steps(self):
        sched = Schedule(1.0, 0)
        assert sched.step_size == 0.0
        assert sched.step_sizes.size == 0

    @pytest.mark.parametrize("horizon,steps", [(0.0, 10), (-1.0, 10), (1.0, -1), (1.0, 2.5)])
    def test_invalid_schedules(self, horizon, steps):
        with pytest.raises(ConfigurationError):
            Schedule(horizon, steps)


class TestForwardNoise:
    def test_time_zero_is_identity(self, rng):
        x0 = rng.standard_normal((4, 8))
        np.testing.assert_array_equal(forward_noise(x0, 0.0, rng), x0)

    def test_moments(self, rng):
        t = 0.5
        x0 = np.full(200000, 2.0)
        xt = forward_noise(x0, t, rng)
        variance = 1.0 - np.exp(-2 * t)
        standard_error = np.sqrt(variance / x0.size)
        assert abs(xt.mean() - 2.0 * np.exp(-t)) < 4 * standard_error
        assert abs(xt.var() - variance) < 4 * variance * np.sqrt(2.0 / x0.size)

    def test_large_time_forgets_data(self, rng):
        xt = forward_noise(np.full(100000, 5.0), 10.0, rng)
        assert abs(xt.mean()) < 4 / np.sqrt(xt.size)

    def test_negative_time_is_rejected(self, rng):
        with pytest.raises(DomainError):
            forward_noise(np.zeros(4), -1.0, rng)


class TestReverseSampler:
    def test_zero_steps_returns_initialization(self):
        score = ExactScore(StationaryGaussian(np.ones(8)))
        result = euler_maruyama_reverse(score, Schedule(1.0, 0), np.random.default_rng(3), (2, 8))
        np.testing.assert_array_equal(result, np.random.default_rng(3).standard_normal((2, 8)))

    def test_non_finite_score_reports_step(self, rng):
        def broken(t, x, conditioning=None):
            return np.full_like(x, np.nan) if t < 0.5 else -x

        with pytest.raises(NumericalDivergenceError) as info:
            euler_maruyama_reverse(broken, Schedule(1.0, 10), rng, (2, 4))
        assert info.value.step == 4
        assert info.value.exit_code == 3

    @pytest.mark.slow
    def test_sample_covariance_matches_recursion(self, rng):
        omega = 2 * np.pi * np.fft.fftfreq(8)
        g = StationaryGaussian(1.0 / (1.2 - np.cos(omega)) / 2.0)
        sched = Schedule(5.0, 500)
        samples = euler_maruyama_reverse(ExactScore(g), sched, rng, (100000, 8))
        periodograms = np.abs(np.fft.fft(samples, axis=1)) ** 2 / 8
        standard_error = periodograms.std(axis=0) / np.sqrt(samples.shape[0])
        expected = covariance_recursion(g.spectrum, sched).spectrum_out
        assert np.all(np.abs(periodograms.mean(axis=0) - expected) < 3 * standard_error)

    @pytest.mark.slow
    def test_sample_mean_and_variance_match_recursions(self, rng):
        variances = np.array([0.2, 0.5, 1.0, 2.0, 4.0, 0.8, 1.5, 3.0])
        mu = np.array([1.0, -0.5, 2.0, 0.0, 0.3, -1.2, 0.7, 1.5])

        def shifted_score(t, x, conditioning=None):
            decay = np.exp(-2.0 * t)
            return -(x - np.exp(-t) * mu) / (decay * variances + 1.0 - decay)

        sched = Schedule(5.0, 500)
        samples = euler_maruyama_reverse(shifted_score, sched, rng, (100000, 8))
        count = samples.shape[0]

        mean_error = samples.std(axis=0) / np.sqrt(count)
        expected_mean = mean_recursion(variances, mu, sched)
        assert np.all(np.abs(samples.mean(axis=0) - expected_mean) < 3 * mean_error)

        centered = (samples - samples.mean(axis=0)) ** 2
        variance_error = centered.std(axis=0) / np.sqrt(count)
        expected_variance = covariance_recursion(variances, sched).spectrum_out
        assert np.all(np.abs(centered.mean(axis=0) - expected_variance) < 3 * variance_error)


class TestExactScores:
    def test_white_conditional_score(self, rng):
        x_bar = rng.standard_normal((3, 4))
        x_low = rng.standard_normal((3, 4))
        score = exact_conditional_score(np.zeros((4, 4)), np.eye(4), 0.7, x_bar, x_low)
        np.testing.assert_allclose(score, -x_bar, atol=1e-12)

    def test_conditional_score_matches_log_density_differences(self, power_law_1d, haar, rng):
        cond = conditional_gaussian(power_law_1d, haar)
        t = 0.4
        x_bar, x_low = rng.standard_normal(8), rng.standard_normal(8)
        decay = np.exp(-2 * t)
        precision = np.linalg.inv(decay * cond.Gamma + (1 - decay) * np.eye(8))

        def log_density(y):
            residual = y - np.exp(-t) * cond.A @ x_low
            return -0.5 * residual @ precision @ residual

        h = 1e-5
        numeric = np.array([(log_density(x_bar + h * e) - log_density(x_bar - h * e)) / (2 * h) for e in np.eye(8)])
        analytic = exact_conditional_score(cond.A, cond.Gamma, t, x_bar, x_low)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_eigen_score_agrees_with_cholesky_score(self, power_law_1d, haar, rng):
        cond = conditional_gaussian(power_law_1d, haar)
        x_bar = rng.standard_normal((5, 1, 8))
        x_low = rng.standard_normal((5, 8))
        expected = exact_conditional_score(cond.A, cond.Gamma, 0.4, x_bar, x_low)
        np.testing.assert_allclose(ExactConditionalScore(cond)(0.4, x_bar, x_low), expected, atol=1e-10)

    def test_conditional_score_requires_conditioning(self, power_law_1d, haar):
        score = ExactConditionalScore(conditional_gaussian(power_law_1d, haar))
        with pytest.raises(ConfigurationError):
            score(0.1, np.zeros((1, 1, 8)))

    def test_dense_score_agrees_with_fourier_score(self, power_law_1d, rng):
        dense = DenseGaussianScore(covariance_matrix(power_law_1d), (16,))
        x = rng.standard_normal((4, 16))
        for t in (0.0, 0.5):
            np.testing.assert_allclose(dense(t, x), ExactScore(power_law_1d)(t, x), atol=1e-10)

    def test_cascade_requires_zero_mean(self, haar):
        with pytest.raises(ConfigurationError):
            exact_cascade_scores(StationaryGaussian(np.ones(8), mean=1.0), haar, NormalizerSet.identity(1))


class TestWsgmSampler:
    def test_scale_count_must_match_normalizers(self, power_law_1d, haar, rng):
        coarse, conditionals = exact_cascade_scores(power_law_1d, haar, NormalizerSet.identity(2))
        with pytest.raises(ConfigurationError):
            wsgm_sample(coarse, conditionals, haar, NormalizerSet.identity(1), Schedule(1.0, 4), rng, 16, 1)

    def test_divergence_is_tagged_with_scale(self, power_law_1d, haar, rng):
        _, conditionals = exact_cascade_scores(power_law_1d, haar, NormalizerSet.identity(2))

        def broken(t, x, conditioning=None):
            return np.full_like(x, np.inf)

        with pytest.raises(NumericalDivergenceError) as info:
            wsgm_sample(broken, conditionals, haar, NormalizerSet.identity(2), Schedule(1.0, 4), rng, 16, 1)
        assert info.value.scale == 2

    def test_output_shape(self, power_law_2d, haar, rng):
        norms = exact_normalizers(power_law_2d, haar, 1)
        coarse, conditionals = exact_cascade_scores(power_law_2d, haar, norms)
        samples = wsgm_sample(coarse, conditionals, haar, norms, Schedule(2.0, 8), rng, 8, 2, count=3)
        assert samples.shape == (3, 8, 8)
        assert np.all(np.isfinite(samples))

    @pytest.mark.slow
    def test_exact_cascade_reproduces_spectrum(self, power_law_1d, haar, rng):
        norms = exact_normalizers(power_law_1d, haar, 2)
        coarse, conditionals = exact_cascade_scores(power_law_1d, haar, norms)
        samples = wsgm_sample(coarse, conditionals, haar, norms, Schedule(5.0, 200), rng, 16, 1, count=20000)
        np.testing.assert_allclose(estimate_spectrum(samples), power_law_1d.spectrum, rtol=0.15)
