#!/usr/bin/env python3
"""Tests for the GEV_r score and entropy-difference tests."""

import unittest

import numpy as np
import pytest

from evt_autoselect.utils.errors import DomainError
from evt_autoselect.utils.estimation import fit_gevr_mle
from evt_autoselect.utils.evd_core import GevParams, sample_gevr
from evt_autoselect.utils.gof_gevr import (
    ed_test,
    entropy_difference_mean,
    entropy_difference_statistic,
    entropy_differences,
    score_statistic,
    score_test_multiplier,
    score_test_parametric,
)
from evt_autoselect.utils.simkit import gen_scheme1_kumgev


@pytest.mark.unit
class TestEntropyDifference(unittest.TestCase):
    """Null mean and standardized statistic of the entropy difference."""

    def test_null_means_at_unit_gumbel(self):
        theta = GevParams(0.0, 1.0, 0.0)
        self.assertAlmostEqual(entropy_difference_mean(1, theta), -1.0 - np.euler_gamma, places=10)
        self.assertAlmostEqual(entropy_difference_mean(2, theta), -np.euler_gamma, places=10)

    def test_needs_two_columns(self):
        sample = sample_gevr(60, 1, GevParams(0.0, 1.0, 0.0), seed=1)
        with self.assertRaises(DomainError):
            ed_test(sample)

    def test_statistic_unchanged_by_units(self):
        sample = sample_gevr(200, 3, GevParams(0.0, 1.0, 0.1), seed=2)
        theta = fit_gevr_mle(sample).coefficients
        moved = GevParams(10.0 * theta.loc + 3.0, 10.0 * theta.scale, theta.shape)
        self.assertAlmostEqual(
            entropy_difference_statistic(sample, theta),
            entropy_difference_statistic(sample.affine(10.0, 3.0), moved),
            places=8,
        )

    def test_null_p_value_is_valid(self):
        outcome = ed_test(sample_gevr(200, 4, GevParams(0.0, 1.0, 0.1), seed=3))
        self.assertEqual(outcome.method, "ed")
        self.assertTrue(0.0 <= outcome.p_value <= 1.0)
        self.assertTrue(outcome.reliable)

    def test_simulated_mean_matches_null_mean(self):
        n = 20000
        for r in (2, 5, 10):
            for shape in (-0.25, 0.0, 0.25):
                theta = GevParams(1.0, 2.0, shape)
                d = entropy_differences(sample_gevr(n, r, theta, seed=100 + r), theta)
                standard_error = d.std(ddof=1) / np.sqrt(n)
                self.assertLess(
                    abs(d.mean() - entropy_difference_mean(r, theta)),
                    3.5 * standard_error,
                    msg=f"r={r}, shape={shape}",
                )


@pytest.mark.unit
class TestScoreStatistic(unittest.TestCase):
    """Score statistic and its bootstrap calibrations."""

    def test_near_zero_at_mle(self):
        sample = sample_gevr(200, 3, GevParams(0.0, 1.0, 0.0), seed=4)
        fit = fit_gevr_mle(sample)
        self.assertLess(score_statistic(sample, fit.coefficients), 1e-6)

    def test_large_away_from_mle(self):
        sample = sample_gevr(200, 3, GevParams(0.0, 1.0, 0.0), seed=4)
        self.assertGreater(score_statistic(sample, GevParams(0.5, 1.5, 0.0)), 10.0)

    def test_multiplier_bootstrap(self):
        sample = sample_gevr(150, 3, GevParams(0.0, 1.0, 0.1), seed=5)
        outcome = score_test_multiplier(sample, L=199, seed=6)
        self.assertEqual(outcome.method, "score_mb")
        self.assertEqual(outcome.bootstrap_size, 199)
        self.assertTrue(0.0 <= outcome.p_value <= 1.0)

    def test_multiplier_bootstrap_is_seeded(self):
        sample = sample_gevr(100, 2, GevParams(0.0, 1.0, 0.0), seed=7)
        first = score_test_multiplier(sample, L=99, seed=8).p_value
        second = score_test_multiplier(sample, L=99, seed=8).p_value
        self.assertEqual(first, second)

    def test_bootstrap_size_minimum(self):
        sample = sample_gevr(50, 2, GevParams(0.0, 1.0, 0.0), seed=7)
        with self.assertRaises(DomainError):
            score_test_multiplier(sample, L=10)
        with self.assertRaises(DomainError):
            score_test_parametric(sample, L=10)


@pytest.mark.slow
class TestScorePower(unittest.TestCase):
    """Parametric bootstrap on null data and on a strong alternative."""

    def test_parametric_bootstrap_on_null_data(self):
        sample = sample_gevr(100, 2, GevParams(0.0, 1.0, 0.0), seed=9)
        outcome = score_test_parametric(sample, L=99, seed=10)
        self.assertEqual(outcome.method, "score_pb")
        self.assertGreater(outcome.bootstrap_size, 80)
        self.assertTrue(0.0 <= outcome.p_value <= 1.0)

    def test_ed_rejects_strong_kumgev_contamination(self):
        rejected = 0
        for seed in range(20):
            sample = gen_scheme1_kumgev(100, GevParams(0.0, 1.0, 0.0), 0.4, 0.4, seed=seed)
            rejected += ed_test(sample).p_value <= 0.05
        self.assertGreaterEqual(rejected, 16)


if __name__ == "__main__":
    unittest.main()
