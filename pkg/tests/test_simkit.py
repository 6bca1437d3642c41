#!/usr/bin/env python3
"""Tests for the data-generating schemes and the experiment runner."""

import unittest
from unittest.mock import patch

import numpy as np
import pytest

from evt_autoselect.utils.errors import DomainError
from evt_autoselect.utils.evd_core import GevParams
from evt_autoselect.utils.sequential import ThresholdSelection, adjust_sequence
from evt_autoselect.utils.simkit import (
    GPD_ALTERNATIVES,
    SchemeSpec,
    exponential_correlation,
    gen_beta_gpd_splice,
    gen_gaussian_copula_sites,
    gen_gpd_alternative,
    gen_rselect_design,
    gen_scheme1_kumgev,
    gen_scheme2_mixing,
    generate,
    rfa_truth_design,
    run_experiment,
    trimmed_rmse,
)


@pytest.mark.unit
class TestTopRSchemes(unittest.TestCase):
    """Contaminated top-r generators."""

    def setUp(self):
        self.gumbel = GevParams(0.0, 1.0, 0.0)

    def test_kumgev_rows_are_ordered(self):
        sample = gen_scheme1_kumgev(200, self.gumbel, 0.4, 0.4, seed=1)
        self.assertEqual(sample.values.shape, (200, 5))
        self.assertTrue(np.all(np.diff(sample.values, axis=1) <= 0))

    def test_kumgev_is_reproducible(self):
        first = gen_scheme1_kumgev(50, self.gumbel, 2.0, 0.5, seed=2).values
        second = gen_scheme1_kumgev(50, self.gumbel, 2.0, 0.5, seed=2).values
        np.testing.assert_array_equal(first, second)

    def test_mixing_keeps_first_four_columns(self):
        full = gen_scheme2_mixing(100, self.gumbel, 1.0, seed=3).values
        mixed = gen_scheme2_mixing(100, self.gumbel, 0.0, seed=3).values
        np.testing.assert_array_equal(full[:, :4], mixed[:, :4])
        self.assertTrue(np.all(mixed[:, 4] <= full[:, 4]))
        with self.assertRaises(DomainError):
            gen_scheme2_mixing(10, self.gumbel, 1.5)

    def test_rselect_design_has_six_columns(self):
        sample = gen_rselect_design(100, self.gumbel, seed=4)
        self.assertEqual(sample.r, 6)
        self.assertTrue(np.all(np.diff(sample.values, axis=1) <= 0))


@pytest.mark.unit
class TestThresholdSchemes(unittest.TestCase):
    """Splice and alternative generators."""

    def test_splice_sizes_and_ranges(self):
        y = gen_beta_gpd_splice(300, 200, seed=5)
        self.assertEqual(y.size, 500)
        self.assertEqual(int(np.sum(y > 5.0)), 200)
        self.assertTrue(np.all(y >= 0.0))
        with self.assertRaises(DomainError):
            gen_beta_gpd_splice(0, 10)

    def test_every_alternative_is_positive(self):
        for name in GPD_ALTERNATIVES:
            y = gen_gpd_alternative(name, 200, seed=6)
            self.assertEqual(y.size, 200)
            self.assertTrue(np.all(y >= 0.0), name)
        with self.assertRaises(DomainError):
            gen_gpd_alternative("cauchy", 10)


@pytest.mark.unit
class TestRegionalSchemes(unittest.TestCase):
    """Gaussian copula sites."""

    def test_identity_correlation_without_range(self):
        coords = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
        np.testing.assert_array_equal(exponential_correlation(coords, 0.0), np.eye(3))
        corr = exponential_correlation(coords, 2.0)
        self.assertAlmostEqual(corr[0, 1], np.exp(-np.sqrt(2.0) / 2.0), places=12)

    def test_shapes_and_reproducibility(self):
        spec, coefs, coords = rfa_truth_design(4, 30, seed=7)
        first = gen_gaussian_copula_sites(4, 30, coords, 1.0, coefs.implied(spec), seed=8)
        second = gen_gaussian_copula_sites(4, 30, coords, 1.0, coefs.implied(spec), seed=8)
        self.assertEqual(first.shape, (4, 30))
        np.testing.assert_array_equal(first, second)

    def test_truth_design_locations(self):
        spec, coefs, coords = rfa_truth_design(20, 10, seed=9)
        self.assertTrue(np.all(coefs.beta_mu[:20] > 0.5))
        self.assertAlmostEqual(coefs.beta_mu[20], 0.003)
        self.assertTrue(np.all((coords >= 0.0) & (coords <= 10.0)))
        self.assertEqual(spec.m, 20)

    def test_invalid_inputs(self):
        spec, coefs, coords = rfa_truth_design(3, 5, seed=10)
        with self.assertRaises(DomainError):
            gen_gaussian_copula_sites(3, 5, coords + 20.0, 1.0, coefs.implied(spec))
        with self.assertRaises(DomainError):
            gen_gaussian_copula_sites(2, 5, coords, 1.0, coefs.implied(spec))


@pytest.mark.unit
class TestSchemeSpec(unittest.TestCase):
    """Scheme validation and dispatch."""

    def test_validation(self):
        with self.assertRaises(DomainError):
            SchemeSpec("unknown")
        with self.assertRaises(DomainError):
            SchemeSpec("kumgev_contam", {"a": 0.0})
        with self.assertRaises(DomainError):
            SchemeSpec("gpd_alternative", {"name": "cauchy"})
        with self.assertRaises(DomainError):
            SchemeSpec("pure_gevr", {"n": 0})

    def test_generate_dispatch(self):
        sample = generate(SchemeSpec("pure_gevr", {"n": 40, "r": 3}), seed=11)
        self.assertEqual(sample.values.shape, (40, 3))
        y = generate(SchemeSpec("pure_gpd", {"n": 60}), seed=11)
        self.assertEqual(y.shape, (60,))
        with self.assertRaises(DomainError):
            generate(SchemeSpec("gaussian_copula_sites"))

    def test_params_json_is_sorted(self):
        self.assertEqual(SchemeSpec("pure_gpd", {"n": 5, "a": 1}).params_json(), '{"a": 1, "n": 5}')


@pytest.mark.unit
class TestSummaries(unittest.TestCase):
    """Summary statistics of the experiment runner."""

    def test_trimmed_rmse_drops_largest_errors(self):
        errors = np.concatenate([np.ones(98), [100.0, -100.0]])
        rmse, mc = trimmed_rmse(errors)
        self.assertAlmostEqual(rmse, 1.0)
        self.assertAlmostEqual(mc, 0.0)

    def test_replicate_minimum(self):
        with self.assertRaises(DomainError):
            run_experiment(SchemeSpec("pure_gevr", {"n": 40}), "ed", replicates=10)

    def test_unadjusted_fwer_counts_any_small_p_value(self):
        p = [0.3, 0.01, 0.02] + [0.5] * 7
        selection = adjust_sequence(p, 0.05)
        chosen = ThresholdSelection(selection, 0, 0.0, False, "strong", "moran", [])
        spec = SchemeSpec("pure_gpd", {"n": 200, "sequential": True}, seed=3)
        with patch("evt_autoselect.utils.simkit.select_threshold", return_value=chosen):
            frame = run_experiment(spec, "moran", replicates=100)
        self.assertEqual(metric(frame, "median_rejections_none")[0], 0.0)
        self.assertEqual(metric(frame, "fwer_none")[0], 1.0)
        self.assertEqual(metric(frame, "fwer_forward")[0], 0.0)

    def test_subject_must_match_scheme(self):
        with self.assertRaises(DomainError):
            run_experiment(SchemeSpec("pure_gevr", {"n": 40}), "moran", replicates=100)


@pytest.mark.slow
class TestExperiments(unittest.TestCase):
    """Small Monte Carlo runs."""

    def test_ed_size_on_null_scheme(self):
        spec = SchemeSpec("pure_gevr", {"n": 60, "r": 3}, seed=12)
        frame = run_experiment(spec, "ed", replicates=100)
        self.assertEqual(list(frame.columns), ["scheme", "params", "subject", "metric", "value", "mc_error"])
        rate = frame.loc[frame["metric"] == "rejection_rate", "value"].iloc[0]
        self.assertLess(rate, 0.2)

    def test_summary_is_independent_of_workers(self):
        spec = SchemeSpec("pure_gpd", {"n": 100, "shape": 0.2}, seed=13)
        serial = run_experiment(spec, "moran", replicates=100, workers=1)
        parallel = run_experiment(spec, "moran", replicates=100, workers=2)
        self.assertTrue(serial.equals(parallel))


def metric(frame, name):
    row = frame.loc[frame["metric"] == name].iloc[0]
    return float(row["value"]), float(row["mc_error"])


@pytest.mark.slow
class TestErrorRateControl(unittest.TestCase):
    """Family-wise and false discovery rates of the stopping rules."""

    @classmethod
    def setUpClass(cls):
        # ten ordered tests at the 5th..50th percentiles of pure GPD data, all nulls true
        spec = SchemeSpec("pure_gpd", {"n": 1000, "shape": 0.25, "sequential": True}, seed=21)
        cls.null_frame = run_experiment(spec, "moran", replicates=400, alpha=0.05)

    def test_no_failed_replicates_dominate(self):
        failures, _ = metric(self.null_frame, "failures")
        self.assertLess(failures, 40)

    def test_strongstop_controls_fwer(self):
        value, _ = metric(self.null_frame, "fwer_strong")
        self.assertLessEqual(value, 0.05 + 0.05)

    def test_forwardstop_controls_fdr_under_global_null(self):
        # with every null true the false discovery rate equals the family-wise rate
        value, _ = metric(self.null_frame, "fwer_forward")
        self.assertLessEqual(value, 0.05 + 0.05)

    def test_unadjusted_testing_inflates_fwer(self):
        unadjusted, _ = metric(self.null_frame, "fwer_none")
        strong, _ = metric(self.null_frame, "fwer_strong")
        self.assertGreaterEqual(unadjusted, 1.5 * 0.05)
        self.assertGreater(unadjusted, strong)

    def test_forwardstop_fdr_on_misspecified_depths(self):
        spec = SchemeSpec("rselect_design", {"n": 500, "rule": "forward"}, seed=22)
        frame = run_experiment(spec, "ed", replicates=100, alpha=0.05, L=99)
        fdr, _ = metric(frame, "false_discovery_rate")
        self.assertLessEqual(fdr, 0.05 + 0.05)
        at_most_true, _ = metric(frame, "chosen_r_le_4")
        self.assertGreater(at_most_true, 0.5)


if __name__ == "__main__":
    unittest.main()
