#!/usr/bin/env python3
"""Tests for the stationary and regional estimators."""

import unittest
from unittest.mock import patch

import numpy as np
import pytest
from scipy import optimize, stats

from evt_autoselect.utils.errors import DomainError, NumericalError
from evt_autoselect.utils.estimation import (
    CoefficientSet,
    GevrDesign,
    LinkedModelSpec,
    _minimize,
    fit_gev_lmom,
    fit_gevr_mle,
    fit_gpd_mle,
    fit_mps,
    fit_rfa_hybrid,
    fit_rfa_mle,
    fit_rfa_mps,
    frechet_inverse,
    frechet_transform,
    gev_scalefree_lmoments,
    lmom_solve_gev_scalefree,
    sample_lmoments,
    spacings_objective,
)
from evt_autoselect.utils.evd_core import GevParams, GpdParams, TopROrderSample, gev_quantile, sample_gevr, sample_gpd
from evt_autoselect.utils.simkit import gen_gaussian_copula_sites, rfa_truth_design


@pytest.mark.unit
class TestLMoments(unittest.TestCase):
    """Sample L-moments and the unit-location solver."""

    def test_two_point_sample(self):
        l1, l2 = sample_lmoments([0.0, 1.0])
        self.assertAlmostEqual(l1, 0.5)
        self.assertAlmostEqual(l2, 0.5)

    def test_l2_is_half_mean_absolute_difference(self):
        x = np.array([3.0, 1.0, 4.0, 1.5, 9.0, 2.6])
        diffs = np.abs(x[:, None] - x[None, :])
        n = x.size
        _, l2 = sample_lmoments(x)
        self.assertAlmostEqual(l2, diffs.sum() / (n * (n - 1)) / 2.0, places=12)

    def test_gumbel_limits(self):
        y = np.random.default_rng(3).gumbel(size=200000)
        l1, l2 = sample_lmoments(y)
        self.assertAlmostEqual(l1, np.euler_gamma, delta=0.01)
        self.assertAlmostEqual(l2, np.log(2.0), delta=0.01)

    def test_single_value_rejected(self):
        with self.assertRaises(DomainError):
            sample_lmoments([1.0])

    def test_scalefree_solver_inverts_population_moments(self):
        for gamma0, xi0 in [(-1.041, -0.0186), (-0.5, 0.2), (-1.5, -0.3)]:
            l1, l2 = gev_scalefree_lmoments(gamma0, xi0)
            solved = lmom_solve_gev_scalefree(l1, l2)
            self.assertAlmostEqual(solved[0], gamma0, places=6)
            self.assertAlmostEqual(solved[1], xi0, places=6)

    def test_scalefree_solver_without_solution(self):
        with self.assertRaises(NumericalError):
            lmom_solve_gev_scalefree(0.5, 0.2)
        with self.assertRaises(NumericalError):
            lmom_solve_gev_scalefree(1.2, 0.0)

    def test_lmom_gev_fit_recovers_parameters(self):
        truth = GevParams(10.0, 2.0, 0.1)
        y = sample_gevr(5000, 1, truth, seed=8).values[:, 0]
        fit = fit_gev_lmom(y)
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.coefficients.loc, 10.0, delta=0.15)
        self.assertAlmostEqual(fit.coefficients.scale, 2.0, delta=0.15)
        self.assertAlmostEqual(fit.coefficients.shape, 0.1, delta=0.05)


@pytest.mark.unit
class TestGevrMle(unittest.TestCase):
    """Maximum likelihood for the GEV_r law."""

    def test_recovers_parameters(self):
        truth = GevParams(0.0, 1.0, 0.1)
        fit = fit_gevr_mle(sample_gevr(1000, 3, truth, seed=21))
        self.assertTrue(fit.converged)
        self.assertEqual(fit.param_names, ("loc", "scale", "shape"))
        np.testing.assert_allclose(fit.params, truth.as_array(), atol=0.1)
        self.assertEqual(fit.covariance.shape, (3, 3))
        self.assertTrue(np.all(fit.se > 0))

    def test_equivariant_under_affine_change(self):
        sample = sample_gevr(300, 2, GevParams(0.0, 1.0, 0.0), seed=5)
        base = fit_gevr_mle(sample)
        moved = fit_gevr_mle(sample.affine(100.0, 50.0))
        self.assertAlmostEqual(moved.coefficients.loc, 100.0 * base.coefficients.loc + 50.0, delta=1e-3 * 100)
        self.assertAlmostEqual(moved.coefficients.scale, 100.0 * base.coefficients.scale, delta=1e-3 * 100)
        self.assertAlmostEqual(moved.coefficients.shape, base.coefficients.shape, places=3)

    def test_too_few_blocks(self):
        with self.assertRaises(DomainError):
            fit_gevr_mle(TopROrderSample(np.array([[2.0, 1.0], [3.0, 0.0]])))

    def test_constant_data(self):
        with self.assertRaises(DomainError):
            fit_gevr_mle(TopROrderSample(np.ones((10, 1))))

    def test_location_trend_design(self):
        rng = np.random.default_rng(2)
        n = 400
        x = np.linspace(-1.0, 1.0, n)
        base = sample_gevr(n, 2, GevParams(0.0, 1.0, 0.0), seed=rng).values
        shifted = TopROrderSample(base + 2.0 * x[:, None])
        fit = fit_gevr_mle(shifted, GevrDesign.with_covariate(x))
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.coefficients.loc[1], 2.0, delta=0.3)

    def test_design_row_mismatch(self):
        sample = sample_gevr(20, 2, GevParams(0.0, 1.0, 0.0), seed=1)
        with self.assertRaises(DomainError):
            fit_gevr_mle(sample, GevrDesign.with_covariate(np.arange(10.0)))


@pytest.mark.unit
class TestGpdFits(unittest.TestCase):
    """GPD likelihood and product spacings fits."""

    def test_mle_recovers_parameters(self):
        y = sample_gpd(3000, GpdParams(2.0, 0.25), seed=4)
        fit = fit_gpd_mle(y)
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.coefficients.scale, 2.0, delta=0.2)
        self.assertAlmostEqual(fit.coefficients.shape, 0.25, delta=0.07)
        self.assertIsNotNone(fit.covariance)

    def test_mle_without_covariance(self):
        fit = fit_gpd_mle(sample_gpd(200, GpdParams(1.0, 0.0), seed=4), covariance=False)
        self.assertIsNone(fit.covariance)
        self.assertIsNone(fit.se)

    def test_excess_validation(self):
        with self.assertRaises(DomainError):
            fit_gpd_mle([1.0, 2.0, 3.0])
        with self.assertRaises(DomainError):
            fit_gpd_mle([1.0, 2.0, -3.0, 4.0, 5.0, 6.0])

    def test_mps_close_to_mle_on_regular_data(self):
        y = sample_gpd(2000, GpdParams(1.0, 0.1), seed=12)
        mps = fit_mps(y, "gpd")
        mle = fit_gpd_mle(y)
        self.assertTrue(mps.converged)
        self.assertAlmostEqual(mps.coefficients.shape, mle.coefficients.shape, delta=0.05)

    def test_mps_gev(self):
        y = sample_gevr(2000, 1, GevParams(5.0, 2.0, -0.2), seed=13).values[:, 0]
        fit = fit_mps(y, "gev")
        self.assertTrue(fit.converged)
        self.assertEqual(fit.param_names, ("loc", "scale", "shape"))
        self.assertAlmostEqual(fit.coefficients.shape, -0.2, delta=0.06)

    def test_mps_unknown_family(self):
        with self.assertRaises(DomainError):
            fit_mps([1.0, 2.0, 3.0, 4.0, 5.0], "weibull")

    def test_tied_probabilities_are_merged(self):
        expected = -(2.0 * np.log(0.2) + np.log(0.3) + np.log(0.5))
        self.assertAlmostEqual(spacings_objective(np.array([0.2, 0.2, 0.5])), expected, places=12)

    def test_mps_finite_with_one_tied_pair(self):
        y = sample_gpd(200, GpdParams(1.0, 0.2), seed=14)
        y[1] = y[0]
        fit = fit_mps(y, "gpd")
        self.assertTrue(fit.converged)
        self.assertTrue(np.isfinite(fit.max_objective))
        self.assertAlmostEqual(fit.coefficients.shape, 0.2, delta=0.25)


@pytest.mark.unit
class TestOptimizerRestarts(unittest.TestCase):
    """Choice among Nelder-Mead restarts."""

    def test_converged_restart_beats_unconverged_incumbent(self):
        results = [
            optimize.OptimizeResult(x=np.array([1.0, 1.0]), fun=1.0, success=False),
            optimize.OptimizeResult(x=np.array([1.1, 1.0]), fun=1.001, success=True),
            optimize.OptimizeResult(x=np.array([0.9, 1.0]), fun=0.999, success=False),
        ]
        with patch("evt_autoselect.utils.estimation.optimize.minimize", side_effect=results):
            best = _minimize(lambda x: float(np.sum(x**2)), np.array([1.0, 1.0]))
        self.assertTrue(best.success)
        self.assertEqual(best.fun, 1.001)

    def test_lower_objective_wins_among_converged(self):
        results = [
            optimize.OptimizeResult(x=np.array([1.0]), fun=2.0, success=True),
            optimize.OptimizeResult(x=np.array([0.5]), fun=1.0, success=True),
            optimize.OptimizeResult(x=np.array([0.4]), fun=np.inf, success=True),
        ]
        with patch("evt_autoselect.utils.estimation.optimize.minimize", side_effect=results):
            best = _minimize(lambda x: float(np.sum(x**2)), np.array([1.0]))
        self.assertEqual(best.fun, 1.0)


@pytest.mark.unit
class TestFrechet(unittest.TestCase):
    """Unit Frechet transform."""

    def test_inverse_and_gumbel_limit(self):
        params = GevParams(2.0, 1.5, 0.2)
        y = np.array([1.0, 2.0, 5.0])
        np.testing.assert_allclose(frechet_inverse(frechet_transform(y, params), params), y, rtol=1e-12)
        gumbel = GevParams(2.0, 1.5, 0.0)
        np.testing.assert_allclose(frechet_transform(y, gumbel), np.exp((y - 2.0) / 1.5), rtol=1e-12)

    def test_transformed_sample_is_unit_frechet(self):
        params = GevParams(0.0, 1.0, 0.3)
        y = sample_gevr(3000, 1, params, seed=9).values[:, 0]
        z = frechet_transform(y, params)
        self.assertGreater(stats.kstest(z, lambda v: np.exp(-1.0 / v)).pvalue, 0.001)

    def test_outside_support(self):
        with self.assertRaises(DomainError):
            frechet_transform(10.0, GevParams(0.0, 1.0, -0.5))


@pytest.mark.unit
class TestLinkedModelSpec(unittest.TestCase):
    """Design matrices and coefficient vectors of the flood-index model."""

    def test_stationary_spec(self):
        spec = LinkedModelSpec.stationary(3, 4)
        self.assertEqual(spec.loc_design.shape, (12, 3))
        self.assertEqual(spec.n_coefficients, 5)
        self.assertTrue(spec.is_stationary)
        self.assertFalse(spec.nonstationary_mask().any())

    def test_trend_spec(self):
        spec = LinkedModelSpec.build(2, 5, loc_covariates=np.arange(5.0))
        self.assertEqual(spec.p_mu, 1)
        self.assertEqual(spec.nonstationary_mask().tolist(), [False, False, True, False, False])

    def test_coefficients_round_trip_and_implied_scale(self):
        spec = LinkedModelSpec.stationary(2, 3)
        coefs = CoefficientSet(np.array([4.0, 6.0]), np.array([np.log(0.5)]), np.array([0.1]))
        again = CoefficientSet.from_vector(coefs.to_vector(), spec)
        np.testing.assert_array_equal(again.to_vector(), coefs.to_vector())
        mu, sigma, xi = coefs.implied(spec)
        np.testing.assert_allclose(sigma, 0.5 * mu)
        np.testing.assert_allclose(xi, [0.1, 0.1, 0.1])

    def test_bad_indicator_columns(self):
        with self.assertRaises(DomainError):
            LinkedModelSpec(2, 2, np.ones((4, 2)), np.ones((2, 1)), np.ones((2, 1)))


@pytest.mark.slow
class TestRegionalFits(unittest.TestCase):
    """Regional estimators on simulated independent sites."""

    @classmethod
    def setUpClass(cls):
        spec = LinkedModelSpec.stationary(5, 40)
        cls.spec = spec
        cls.truth = CoefficientSet(np.array([5.0, 6.0, 4.5, 7.0, 5.5]), np.array([-1.0]), np.array([0.1]))
        cls.data = gen_gaussian_copula_sites(5, 40, np.zeros((5, 2)), 0.0, cls.truth.implied(spec), seed=31)

    def check_fit(self, fit):
        self.assertTrue(fit.converged)
        self.assertAlmostEqual(fit.coefficients.beta_gamma0, -1.0, delta=0.25)
        self.assertAlmostEqual(fit.coefficients.beta_xi0, 0.1, delta=0.2)

    def test_mle(self):
        self.check_fit(fit_rfa_mle(self.data, self.spec))

    def test_mps(self):
        self.check_fit(fit_rfa_mps(self.data, self.spec))

    def test_hybrid_trace_never_decreases(self):
        spec, truth, coords = rfa_truth_design(5, 30, seed=4)
        data = gen_gaussian_copula_sites(5, 30, coords, 0.0, truth.implied(spec), seed=5)
        fit = fit_rfa_hybrid(data, spec)
        self.assertTrue(fit.converged)
        self.assertTrue(np.all(np.diff(fit.trace) >= -1e-6))

    def test_wrong_shape_rejected(self):
        with self.assertRaises(DomainError):
            fit_rfa_mle(self.data[:, :10], self.spec)


@pytest.mark.unit
class TestStationaryHybrid(unittest.TestCase):
    """Without covariates the hybrid fit is the pooled L-moment fit."""

    def test_matches_pooled_lmoment_solution(self):
        spec = LinkedModelSpec.stationary(4, 30)
        truth = CoefficientSet(np.array([5.0, 6.0, 4.5, 7.0]), np.array([-1.0]), np.array([0.1]))
        data = gen_gaussian_copula_sites(4, 30, np.zeros((4, 2)), 0.0, truth.implied(spec), seed=41)

        locs = np.array([fit_gev_lmom(data[s]).coefficients.loc for s in range(4)])
        gamma0, xi0 = lmom_solve_gev_scalefree(*sample_lmoments((data / locs[:, None]).ravel()))

        fit = fit_rfa_hybrid(data, spec)
        self.assertTrue(fit.converged)
        self.assertEqual(len(fit.trace), 1)
        np.testing.assert_allclose(fit.coefficients.beta_mu[:4], locs, rtol=1e-12)
        self.assertAlmostEqual(fit.coefficients.beta_gamma0, gamma0, places=10)
        self.assertAlmostEqual(fit.coefficients.beta_xi0, xi0, places=10)
        self.assertNotIn("stopped_on_decrease", fit.flags)


@pytest.mark.unit
class TestQuantileConsistency(unittest.TestCase):
    def test_lmom_fit_on_quantile_grid(self):
        params = GevParams(0.0, 1.0, 0.0)
        y = gev_quantile((np.arange(1, 2001) - 0.35) / 2000.0, params)
        fit = fit_gev_lmom(y)
        self.assertAlmostEqual(fit.coefficients.shape, 0.0, delta=0.02)


if __name__ == "__main__":
    unittest.main()
