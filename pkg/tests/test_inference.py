#!/usr/bin/env python3
"""Tests for return levels, intervals and the rank bootstrap."""

import unittest

import numpy as np
import pytest

from evt_autoselect.utils.errors import CovarianceUnavailableError, DomainError
from evt_autoselect.utils.estimation import CoefficientSet, LinkedModelSpec, fit_gevr_mle, fit_gpd_mle, fit_rfa_mle
from evt_autoselect.utils.evd_core import GevParams, GpdParams, sample_gevr, sample_gpd
from evt_autoselect.utils.inference import (
    ProfileTarget,
    RfaCovariates,
    delta_method_ci,
    delta_method_se,
    gev_return_level,
    gpd_return_level,
    profile_likelihood_ci,
    random_ranks,
    resample_uniforms,
    rfa_return_level,
    semiparametric_bootstrap,
)
from evt_autoselect.utils.simkit import gen_gaussian_copula_sites


@pytest.mark.unit
class TestReturnLevels(unittest.TestCase):
    """Closed-form return levels."""

    def test_gev_hundred_year_level(self):
        self.assertAlmostEqual(gev_return_level(100, GevParams(0.0, 1.0, 0.0)), 4.6001, places=4)

    def test_gev_level_increases_with_period(self):
        params = GevParams(10.0, 2.0, 0.1)
        levels = [gev_return_level(t, params) for t in (2, 10, 50, 100, 1000)]
        self.assertTrue(np.all(np.diff(levels) > 0))

    def test_gpd_level_exponential(self):
        level = gpd_return_level(100, 0.0, GpdParams(1.0, 0.0), n_per_year=365, zeta_u=1.0)
        self.assertAlmostEqual(level, np.log(36500.0), places=3)

    def test_invalid_inputs(self):
        with self.assertRaises(DomainError):
            gev_return_level(1.0, GevParams(0.0, 1.0, 0.0))
        with self.assertRaises(DomainError):
            gpd_return_level(10, 0.0, GpdParams(1.0, 0.0), 1.0, 0.0)
        with self.assertRaises(DomainError):
            ProfileTarget("median")
        with self.assertRaises(DomainError):
            ProfileTarget("return_level")


@pytest.mark.unit
class TestDeltaMethod(unittest.TestCase):
    """Wald intervals from the fitted covariance."""

    def setUp(self):
        self.sample = sample_gevr(300, 1, GevParams(0.0, 1.0, 0.0), seed=1)
        self.fit = fit_gevr_mle(self.sample)

    def test_shape_se_is_covariance_entry(self):
        se = delta_method_se(self.fit, ProfileTarget.shape())
        self.assertAlmostEqual(se, np.sqrt(self.fit.covariance[2, 2]), places=6)

    def test_return_level_se_scales_with_units(self):
        target = ProfileTarget.return_level(100)
        scaled = fit_gevr_mle(self.sample.affine(10.0, 0.0))
        self.assertAlmostEqual(
            delta_method_se(scaled, target) / delta_method_se(self.fit, target), 10.0, delta=0.05
        )

    def test_interval_is_symmetric(self):
        estimate = delta_method_ci(self.fit, ProfileTarget.return_level(50))
        self.assertAlmostEqual(estimate.estimate - estimate.ci_low, estimate.ci_high - estimate.estimate, places=8)
        self.assertEqual(estimate.method, "delta")

    def test_missing_covariance(self):
        fit = fit_gpd_mle(sample_gpd(100, GpdParams(1.0, 0.1), seed=2), covariance=False)
        with self.assertRaises(CovarianceUnavailableError):
            delta_method_se(fit, ProfileTarget.shape())


@pytest.mark.unit
class TestProfileLikelihood(unittest.TestCase):
    """Profile-likelihood intervals."""

    def test_return_level_interval_contains_estimate_and_is_skewed(self):
        fit = fit_gevr_mle(sample_gevr(200, 1, GevParams(0.0, 1.0, 0.1), seed=3))
        estimate = profile_likelihood_ci(fit, ProfileTarget.return_level(100))
        self.assertEqual(estimate.method, "profile")
        self.assertLess(estimate.ci_low, estimate.estimate)
        self.assertGreater(estimate.ci_high, estimate.estimate)
        # long upper tail of the return-level likelihood
        self.assertGreater(estimate.ci_high - estimate.estimate, estimate.estimate - estimate.ci_low)

    def test_agrees_with_delta_method_on_large_gumbel_sample(self):
        fit = fit_gevr_mle(sample_gevr(3000, 1, GevParams(0.0, 1.0, 0.0), seed=4))
        profile = profile_likelihood_ci(fit, ProfileTarget.shape())
        wald = delta_method_ci(fit, ProfileTarget.shape())
        half_profile = 0.5 * (profile.ci_high - profile.ci_low)
        half_wald = 0.5 * (wald.ci_high - wald.ci_low)
        self.assertLess(abs(half_profile - half_wald) / half_wald, 0.25)

    def test_return_level_half_widths_agree_on_large_sample(self):
        fit = fit_gevr_mle(sample_gevr(5000, 1, GevParams(10.0, 2.0, 0.0), seed=14))
        target = ProfileTarget.return_level(10)
        profile = profile_likelihood_ci(fit, target)
        wald = delta_method_ci(fit, target)
        self.assertAlmostEqual(profile.estimate, wald.estimate, places=6)
        half_profile = 0.5 * (profile.ci_high - profile.ci_low)
        half_wald = 0.5 * (wald.ci_high - wald.ci_low)
        self.assertLess(abs(half_profile - half_wald) / half_wald, 0.25)

    def test_intervals_nest(self):
        fits = [
            fit_gevr_mle(sample_gevr(150, 1, GevParams(0.0, 1.0, 0.1), seed=15)),
            fit_gevr_mle(sample_gevr(100, 3, GevParams(5.0, 2.0, -0.2), seed=16)),
            fit_gpd_mle(sample_gpd(300, GpdParams(1.0, 0.2), seed=17)),
        ]
        for fit in fits:
            targets = [ProfileTarget.shape()]
            if fit.model is not None and fit.params.size == 3:
                targets.append(ProfileTarget.return_level(50))
            for target in targets:
                narrow = profile_likelihood_ci(fit, target, level=0.90)
                wide = profile_likelihood_ci(fit, target, level=0.95)
                self.assertLessEqual(wide.ci_low, narrow.ci_low)
                self.assertGreaterEqual(wide.ci_high, narrow.ci_high)
                for estimate in (narrow, wide):
                    self.assertLessEqual(estimate.ci_low, estimate.estimate)
                    self.assertGreaterEqual(estimate.ci_high, estimate.estimate)

    def test_gpd_return_level_interval(self):
        y = sample_gpd(500, GpdParams(1.0, 0.1), seed=5)
        fit = fit_gpd_mle(y)
        target = ProfileTarget.return_level(100, n_per_year=50.0, exceedance_rate=0.1, threshold=3.0)
        estimate = profile_likelihood_ci(fit, target)
        expected = gpd_return_level(100, 3.0, fit.coefficients, 50.0, 0.1)
        self.assertAlmostEqual(estimate.estimate, expected, places=6)
        self.assertLess(estimate.ci_low, expected)
        self.assertGreater(estimate.ci_high, expected)

    def test_needs_likelihood_fit(self):
        from evt_autoselect.utils.estimation import fit_mps

        fit = fit_mps(sample_gpd(100, GpdParams(1.0, 0.1), seed=6), "gpd")
        with self.assertRaises(DomainError):
            profile_likelihood_ci(fit, ProfileTarget.shape())


@pytest.mark.unit
class TestRegionalReturnLevels(unittest.TestCase):
    """Return levels implied by the flood-index links."""

    def setUp(self):
        self.spec = LinkedModelSpec.build(2, 4, loc_covariates=np.arange(4.0))
        self.coefs = CoefficientSet(np.array([10.0, 20.0, 0.5]), np.array([np.log(0.3)]), np.array([0.1]))

    def test_zero_covariates_match_stationary_site(self):
        estimate = rfa_return_level(self.coefs, self.spec, 1, 100)
        expected = gev_return_level(100, GevParams(20.0, 6.0, 0.1))
        self.assertAlmostEqual(estimate.estimate, expected, places=10)
        self.assertTrue(np.isnan(estimate.ci_low))
        self.assertEqual(estimate.method, "point")

    def test_covariate_shift(self):
        cov = RfaCovariates(np.array([2.0]), np.zeros(0), np.zeros(0))
        shifted = rfa_return_level(self.coefs, self.spec, 0, 50, covariates=cov)
        expected = gev_return_level(50, GevParams(11.0, 3.3, 0.1))
        self.assertAlmostEqual(shifted.estimate, expected, places=10)
        self.assertEqual(shifted.conditioning["loc"], [2.0])

    def test_monotone_in_period(self):
        levels = [rfa_return_level(self.coefs, self.spec, 0, t).estimate for t in (5, 20, 100)]
        self.assertTrue(np.all(np.diff(levels) > 0))

    def test_site_out_of_range(self):
        with self.assertRaises(DomainError):
            rfa_return_level(self.coefs, self.spec, 2, 100)


@pytest.mark.unit
class TestRanks(unittest.TestCase):
    """Random tie-breaking ranks and rank-preserving uniforms."""

    def test_ranks_are_permutations(self):
        rng = np.random.default_rng(0)
        ranks = random_ranks(np.array([[3.0, 1.0, 2.0, 1.0], [0.5, 0.4, 0.3, 0.2]]), rng)
        self.assertEqual(sorted(ranks[0].tolist()), [0, 1, 2, 3])
        self.assertEqual(ranks[1].tolist(), [3, 2, 1, 0])
        self.assertEqual(ranks[0, 0], 3)

    def test_uniforms_follow_ranks(self):
        rng = np.random.default_rng(1)
        ranks = random_ranks(rng.random((3, 20)), rng)
        uniforms, reranked = resample_uniforms(ranks, 2)
        for s in range(3):
            order = np.argsort(uniforms[s])
            np.testing.assert_array_equal(np.argsort(order), reranked[s])
        self.assertTrue(np.all((uniforms > 0) & (uniforms < 1)))


@pytest.mark.slow
class TestSemiparametricBootstrap(unittest.TestCase):
    """Rank bootstrap of a regional fit."""

    def test_bootstrap_intervals_cover_estimates(self):
        spec = LinkedModelSpec.stationary(3, 30)
        truth = CoefficientSet(np.array([5.0, 6.0, 7.0]), np.array([-1.0]), np.array([0.05]))
        data = gen_gaussian_copula_sites(3, 30, np.array([[1.0, 1.0], [2.0, 2.0], [8.0, 8.0]]), 2.0, truth.implied(spec), seed=3)
        fit = fit_rfa_mle(data, spec)
        boot = semiparametric_bootstrap(data, spec, "mle", B=50, seed=4, fit=fit)
        self.assertEqual(boot.replicates.shape[1], spec.n_coefficients)
        self.assertGreaterEqual(boot.size, 40)
        self.assertTrue(np.all(boot.ci_low <= boot.ci_high))
        self.assertTrue(np.all(boot.se > 0))
        estimate = rfa_return_level(fit.coefficients, spec, 0, 100, bootstrap=boot)
        self.assertEqual(estimate.method, "bootstrap")
        self.assertLess(estimate.ci_low, estimate.ci_high)

    def test_bootstrap_is_reproducible(self):
        spec = LinkedModelSpec.stationary(2, 25)
        truth = CoefficientSet(np.array([5.0, 6.0]), np.array([-1.0]), np.array([0.0]))
        data = gen_gaussian_copula_sites(2, 25, np.array([[1.0, 1.0], [3.0, 3.0]]), 1.0, truth.implied(spec), seed=5)
        first = semiparametric_bootstrap(data, spec, "mle", B=10, seed=6)
        second = semiparametric_bootstrap(data, spec, "mle", B=10, seed=6)
        np.testing.assert_array_equal(first.replicates, second.replicates)

    def test_bootstrap_size(self):
        spec = LinkedModelSpec.stationary(2, 25)
        with self.assertRaises(DomainError):
            semiparametric_bootstrap(np.ones((2, 25)), spec, "mle", B=0)


if __name__ == "__main__":
    unittest.main()
