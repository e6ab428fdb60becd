import numpy as np
import pytest

from wsgm_lab.exceptions import ConfigurationError, ResourceCapError, ShapeError
from wsgm_lab.metrics import d2_marginal_tv, marginal_histogram
from wsgm_lab.phi4 import (
    DomainStats,
    MCMCParams,
    Phi4Config,
    coupling_matrix,
    energy,
    grad_energy,
    hessian_logp,
    hessian_stats,
    mcmc_sample,
    projected_hessian,
)
from wsgm_lab.wavelet import estimate_normalizers

BETA = 0.68


class TestConfig:
    @pytest.mark.parametrize("side", [2, 5, 7])
    def test_side_must_be_even_and_at_least_four(self, side):
        with pytest.raises(ConfigurationError):
            Phi4Config(side)

    def test_negative_beta(self):
        with pytest.raises(ConfigurationError):
            Phi4Config(8, beta=-0.1)

    @pytest.mark.parametrize("kwargs", [
        {"sweeps": 10, "burn_in": 10},
        {"sweeps": 10, "burn_in": 2, "thinning": 0},
        {"sweeps": 10, "burn_in": 2, "proposal_std": 0.0},
        {"sweeps": 10, "burn_in": 2, "chains": 0},
    ])
    def test_invalid_mcmc_params(self, kwargs):
        with pytest.raises(ConfigurationError):
            MCMCParams(**kwargs)


class TestEnergy:
    def test_ground_state(self):
        assert energy(np.ones((4, 4)), BETA) == 0.0
        assert energy(-np.ones((4, 4)), BETA) == 0.0

    def test_zero_field_has_only_potential(self):
        assert energy(np.zeros((6, 6)), BETA) == 36.0

    def test_single_flipped_site(self):
        x = np.ones((4, 4))
        x[1, 2] = -1.0
        assert energy(x, BETA) == pytest.approx(16 * BETA)
        assert energy(x, BETA) == pytest.approx(10.88)

    def test_batched_energy(self, rng):
        batch = rng.standard_normal((3, 4, 4))
        np.testing.assert_allclose(energy(batch, BETA), [energy(x, BETA) for x in batch])

    def test_non_square_field(self):
        with pytest.raises(ShapeError):
            energy(np.zeros((4, 6)), BETA)


class TestDerivatives:
    def test_gradient_vanishes_on_ground_states(self):
        np.testing.assert_array_equal(grad_energy(np.ones((4, 4)), BETA), 0.0)
        np.testing.assert_array_equal(grad_energy(-np.ones((4, 4)), BETA), 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        x = np.random.default_rng(seed).standard_normal((4, 4))
        h = 1e-5
        numeric = np.zeros_like(x)
        for index in np.ndindex(x.shape):
            e = np.zeros_like(x)
            e[index] = h
            numeric[index] = (energy(x + e, BETA) - energy(x - e, BETA)) / (2 * h)
        np.testing.assert_allclose(grad_energy(x, BETA), numeric, rtol=1e-6, atol=1e-6)

    def test_coupling_gradient_is_linear_in_beta(self, rng):
        x = rng.standard_normal((4, 4))
        coupling = lambda beta: grad_energy(x, beta) - grad_energy(x, 0.0)
        np.testing.assert_allclose(coupling(1.5), 1.5 * coupling(1.0), atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_hessian_matches_gradient_differences(self, seed):
        x = np.random.default_rng(seed).standard_normal((4, 4))
        hessian = hessian_logp(x, BETA)
        h = 1e-5
        for column in range(16):
            e = np.zeros(16)
            e[column] = h
            e = e.reshape(4, 4)
            numeric = (grad_energy(x + e, BETA) - grad_energy(x - e, BETA)).ravel() / (2 * h)
            np.testing.assert_allclose(hessian[:, column], numeric, rtol=1e-5, atol=1e-5)

    def test_hessian_is_symmetric(self, rng):
        hessian = hessian_logp(rng.standard_normal((8, 8)), BETA)
        np.testing.assert_array_equal(hessian, hessian.T)

    def test_ground_state_hessian_is_bounded_below(self):
        hessian = hessian_logp(np.ones((8, 8)), BETA)
        np.testing.assert_allclose(hessian, coupling_matrix(8, BETA) + 8 * np.eye(64))
        assert np.linalg.eigvalsh(hessian).min() >= 8 - 1e-9

    def test_coupling_is_positive_semidefinite(self):
        assert np.linalg.eigvalsh(coupling_matrix(8, BETA)).min() >= -1e-10

    def test_dense_cap(self):
        with pytest.raises(ResourceCapError):
            coupling_matrix(64, BETA)

    def test_hessian_needs_a_single_field(self):
        with pytest.raises(ShapeError):
            hessian_logp(np.zeros((2, 4, 4)), BETA)


class TestProjectedHessian:
    def test_projection_interlaces(self, haar, rng):
        x = rng.standard_normal((8, 8))
        gamma = 1.3
        full = np.linalg.eigvalsh(hessian_logp(x, BETA))
        projected = np.linalg.eigvalsh(projected_hessian(x, BETA, haar, gamma))
        assert projected.shape == (48,)
        assert projected.min() >= gamma ** 2 * full.min() - 1e-9
        assert projected.max() <= gamma ** 2 * full.max() + 1e-9

    def test_projected_hessian_is_symmetric(self, filters, rng):
        matrix = projected_hessian(rng.standard_normal((8, 8)), BETA, filters, 1.0)
        np.testing.assert_allclose(matrix, matrix.T, atol=1e-12)


class TestMetropolis:
    def test_output_shape(self, rng):
        params = MCMCParams(sweeps=20, burn_in=10, thinning=5, chains=3)
        samples = mcmc_sample(Phi4Config(4), params, rng)
        assert params.kept_per_chain == 2
        assert samples.shape == (6, 4, 4)
        assert np.all(np.isfinite(samples))

    def test_acceptance_rate_is_logged(self, rng, log_messages):
        mcmc_sample(Phi4Config(4), MCMCParams(sweeps=20, burn_in=10), rng)
        assert any("接受率" in record["message"] for record in log_messages)

    @pytest.mark.slow
    def test_uncoupled_marginal_matches_quadrature(self, rng):
        params = MCMCParams(sweeps=1200, burn_in=200, thinning=10, chains=32)
        samples = mcmc_sample(Phi4Config(8, beta=0.0), params, rng)

        bins = 30
        fine = np.linspace(-3.0, 3.0, bins * 200 + 1)
        mids = 0.5 * (fine[:-1] + fine[1:])
        density = np.exp(-(mids ** 2 - 1.0) ** 2)
        oracle = density.reshape(bins, 200).sum(axis=1)
        oracle /= oracle.sum()

        masses, _ = marginal_histogram(samples, bins=bins)
        assert d2_marginal_tv(masses, oracle) < 0.02

    @pytest.mark.slow
    def test_energy_is_stationary_after_burn_in(self, rng):
        params = MCMCParams(sweeps=2200, burn_in=200, thinning=10, chains=16)
        samples = mcmc_sample(Phi4Config(8, beta=BETA), params, rng)
        energies = energy(samples, BETA)
        first, second = np.array_split(energies, 2)
        spread = energies.std() / np.sqrt(len(first))
        assert abs(first.mean() - second.mean()) < 8 * spread


class TestHessianStats:
    def test_constant_dataset_has_no_spread(self, haar):
        stats = hessian_stats(np.ones((3, 8, 8)), BETA, haar, 1.0)
        for domain in stats.domains().values():
            summary = domain.summary()
            assert summary["kappa_std"] == pytest.approx(0.0, abs=1e-9)
            assert summary["lambda_min_std"] == pytest.approx(0.0, abs=1e-9)

    def test_condition_numbers_are_at_least_one(self, haar, rng):
        stats = hessian_stats(rng.standard_normal((4, 8, 8)), BETA, haar, 1.1)
        assert np.all(stats.pixel.kappa >= 1.0)
        assert np.all(stats.wavelet.kappa >= 1.0)
        counts, edges = stats.pixel.histograms(bins=5)["kappa"]
        assert counts.sum() == 4
        assert len(edges) == 6
        assert stats.metadata["count"] == 4

    def test_single_field_is_accepted(self, haar):
        stats = hessian_stats(np.ones((8, 8)), BETA, haar, 1.0)
        assert stats.pixel.kappa.shape == (1,)

    def test_summary_reports_robust_kappa(self):
        kappa = np.array([1.0] * 9 + [1000.0])
        lambda_min = np.array([-1.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        summary = DomainStats(lambda_min=lambda_min, lambda_max=np.full(10, 5.0), kappa=kappa).summary()
        assert summary["kappa_mean"] == pytest.approx(100.9)
        assert summary["kappa_median"] == 1.0
        assert summary["kappa_trimmed_mean"] == pytest.approx(1.0)
        assert summary["indefinite_fraction"] == pytest.approx(0.2)

    @pytest.mark.slow
    def test_wavelet_projection_narrows_the_conditioning_gap(self, haar, rng):
        params = MCMCParams(sweeps=1200, burn_in=200, thinning=40, chains=16)
        dataset = mcmc_sample(Phi4Config(16, beta=BETA), params, rng)
        gamma = estimate_normalizers(dataset, 1, haar, dims=2).gamma[0]
        stats = hessian_stats(dataset, BETA, haar, gamma)

        pixel, wavelet = stats.pixel.kappa, stats.wavelet.kappa
        assert len(pixel) == 400
        assert pixel.mean() >= 5 * wavelet.mean()
        assert wavelet.std() / wavelet.mean() < pixel.std() / pixel.mean()
        assert np.median(pixel) > np.median(wavelet)
