#!/usr/bin/env python3
"""Tests for the ordered stopping rules and the automatic selections."""

import unittest
from unittest.mock import patch

import numpy as np
import pytest

from evt_autoselect.utils.errors import DomainError, NumericalError
from evt_autoselect.utils.evd_core import GevParams, GpdParams, sample_gevr, sample_gpd
from evt_autoselect.utils.gof_gevr import TestOutcome
from evt_autoselect.utils.gof_gpd import PERCENTILE_GRID, SHAPE_GRID, NullTable
from evt_autoselect.utils.sequential import (
    ThresholdGrid,
    adjust_sequence,
    decluster_top_r,
    forward_stop,
    forwardstop_path,
    order_statistic_grid,
    percentile_threshold_grid,
    select_r,
    select_threshold,
    strong_stop,
    strongstop_path,
    unadjusted_stop,
)
from evt_autoselect.utils.simkit import gen_beta_gpd_splice, gen_rselect_design


@pytest.mark.unit
class TestStoppingRules(unittest.TestCase):
    """ForwardStop, StrongStop and the unadjusted rule."""

    def test_forwardstop_path_values(self):
        p = np.array([0.01, 0.5, 0.9])
        expected = np.cumsum(-np.log(1.0 - p)) / np.arange(1, 4)
        np.testing.assert_allclose(forwardstop_path(p), expected)

    def test_forward_stop_examples(self):
        self.assertEqual(forward_stop([0.001] * 5, 0.05), 5)
        self.assertEqual(forward_stop([0.9, 0.9, 0.9], 0.05), 0)
        # a large first p-value can be compensated by later small ones
        self.assertEqual(forward_stop([0.06, 0.001, 0.001, 0.001], 0.05), 4)

    def test_strongstop_last_value(self):
        p = np.array([0.001, 0.02, 0.3, 0.04])
        path = strongstop_path(p)
        self.assertAlmostEqual(path[-1], np.exp(np.log(0.04) / 4) * 4 / 4, places=12)

    def test_strong_stop_rejects_clear_prefix(self):
        p = [1e-6, 1e-6, 1e-6, 0.8, 0.9, 0.7]
        k = strong_stop(p, 0.05)
        self.assertEqual(k, 3)

    def test_unadjusted_examples(self):
        self.assertEqual(unadjusted_stop([0.01, 0.02, 0.03], 0.05), 3)
        self.assertEqual(unadjusted_stop([0.2, 0.01], 0.05), 0)
        self.assertEqual(unadjusted_stop([0.01, 0.2, 0.01], 0.05), 1)

    def test_alpha_boundary_counts_as_rejection(self):
        self.assertEqual(forward_stop([1.0 - np.exp(-0.05)], 0.05), 1)

    def test_invalid_p_values(self):
        with self.assertRaises(DomainError):
            forward_stop([], 0.05)
        with self.assertRaises(DomainError):
            strong_stop([0.1, 1.2], 0.05)
        with self.assertRaises(DomainError):
            adjust_sequence([0.1, np.nan], 0.05)

    def test_adjust_sequence_collects_every_rule(self):
        selection = adjust_sequence([0.001, 0.002, 0.5], 0.05)
        self.assertEqual(set(selection.k_hat), {"forward", "strong", "none"})
        self.assertEqual(selection.k_hat["none"], 2)
        self.assertEqual(selection.m, 3)
        with self.assertRaises(DomainError):
            adjust_sequence([0.1], 1.5)


@pytest.mark.unit
class TestThresholdGrids(unittest.TestCase):
    """Candidate threshold grids."""

    def test_percentile_grid_has_37_thresholds(self):
        y = np.random.default_rng(1).exponential(size=2000)
        grid = percentile_threshold_grid(y)
        self.assertEqual(len(grid), 37)
        self.assertTrue(np.all(np.diff(grid.thresholds) > 0))
        self.assertTrue(np.all(np.diff(grid.counts) <= 0))

    def test_tied_data_collapse(self):
        y = np.repeat(np.arange(1.0, 6.0), 100)
        grid = percentile_threshold_grid(y)
        self.assertLess(len(grid), 37)
        self.assertTrue(np.all(np.diff(grid.thresholds) > 0))
        self.assertEqual(len(percentile_threshold_grid(np.full(50, 2.0))), 1)

    def test_order_statistic_grid(self):
        y = np.arange(1.0, 101.0)
        grid = order_statistic_grid(y, count=5, step=10)
        self.assertEqual(grid.counts.tolist(), [100, 90, 80, 70, 60])
        with self.assertRaises(DomainError):
            order_statistic_grid(y, count=20, step=10)

    def test_grid_validation(self):
        with self.assertRaises(DomainError):
            ThresholdGrid(np.array([2.0, 1.0]), np.array([5, 3]))


@pytest.mark.unit
class TestDecluster(unittest.TestCase):
    """Storm declustering within blocks."""

    def test_peaks_are_separated(self):
        values = np.array([1.0, 5.0, 4.9, 1.0, 3.0, 1.0, 2.0, 0.5])
        result = decluster_top_r(values, 3, tau=2.0, blocks=np.zeros(8, dtype=int))
        self.assertEqual(result.sample.values.tolist(), [[5.0, 3.0, 2.0]])

    def test_short_and_tied_blocks_excluded(self):
        values = np.array([3.0, 2.0, 1.0, 4.0, 4.0, 1.0, 9.0, 8.0, 7.0])
        blocks = np.repeat([2000, 2001, 2002], 3)
        result = decluster_top_r(values, 3, tau=0.0, blocks=blocks)
        self.assertEqual(result.blocks, [2000, 2002])
        self.assertEqual(result.tied_blocks, [2001])
        with self.assertRaises(DomainError):
            decluster_top_r(values, 3, tau=4.0, blocks=blocks)

    def test_negative_tau(self):
        with self.assertRaises(DomainError):
            decluster_top_r(np.arange(5.0), 1, -1.0, np.zeros(5))


def uniform_null_table() -> NullTable:
    # every observed statistic maps to p = 0.999, so nothing is rejected
    critical = np.tile(1e6 + np.arange(PERCENTILE_GRID.size, dtype=float), (SHAPE_GRID.size, 1))
    return NullTable(SHAPE_GRID, PERCENTILE_GRID, {"ad": critical, "cvm": critical.copy()}, 10000, 1000)


@pytest.mark.unit
class TestThresholdSelection(unittest.TestCase):
    """Automatic threshold choice with a table that never rejects."""

    def test_lowest_threshold_kept_when_nothing_rejected(self):
        y = sample_gpd(4000, GpdParams(1.0, 0.1), seed=2)
        grid = percentile_threshold_grid(y)
        result = select_threshold(y, grid, "ad", "forward", 0.05, table=uniform_null_table(), seed=3)
        self.assertEqual(result.chosen_index, 0)
        self.assertAlmostEqual(result.chosen_threshold, grid.thresholds[0])
        self.assertFalse(result.all_rejected)
        self.assertEqual(len(result.steps), len(grid))

    def test_sparse_threshold_rejected(self):
        y = sample_gpd(100, GpdParams(1.0, 0.1), seed=2)
        grid = percentile_threshold_grid(y)
        with self.assertRaises(DomainError):
            select_threshold(y, grid, "ad", table=uniform_null_table())

    def test_unknown_rule(self):
        y = sample_gpd(4000, GpdParams(1.0, 0.1), seed=2)
        with self.assertRaises(DomainError):
            select_threshold(y, percentile_threshold_grid(y), "ad", "bonferroni", table=uniform_null_table())

    def run_with_failing_tail(self, p_value: float, working: int = 3):
        y = sample_gpd(4000, GpdParams(1.0, 0.1), seed=2)
        grid = percentile_threshold_grid(y)
        calls = []

        def gpd_test(excesses, test, table=None, seed=None):
            calls.append(excesses.size)
            if len(calls) > working:
                raise NumericalError("fit did not converge")
            return TestOutcome(1.0, p_value, GpdParams(1.0, 0.1), test)

        with patch("evt_autoselect.utils.sequential.run_gpd_test", side_effect=gpd_test):
            return grid, select_threshold(y, grid, "moran", "forward", 0.05, seed=3)

    def test_untested_threshold_is_never_chosen(self):
        grid, result = self.run_with_failing_tail(1e-6)
        self.assertTrue(result.failed)
        self.assertFalse(result.all_rejected)
        self.assertIsNone(result.chosen_index)
        self.assertIsNone(result.chosen_threshold)
        self.assertEqual(result.selection.m, 3)
        self.assertIn("3 tested thresholds", result.reason)
        self.assertFalse(result.steps[3].ok)
        self.assertEqual(len(result.steps), len(grid))

    def test_tested_threshold_still_chosen_before_failures(self):
        grid, result = self.run_with_failing_tail(0.9)
        self.assertFalse(result.failed)
        self.assertEqual(result.chosen_index, 0)
        self.assertAlmostEqual(result.chosen_threshold, grid.thresholds[0])


@pytest.mark.slow
class TestSelections(unittest.TestCase):
    """End-to-end selections on simulated data."""

    def test_select_r_on_well_specified_data(self):
        sample = sample_gevr(100, 4, GevParams(0.0, 1.0, 0.1), seed=4)
        result = select_r(sample, 4, test="score_mb", rule="forward", alpha=0.05, L=199, seed=5)
        self.assertFalse(result.failed)
        self.assertGreaterEqual(result.chosen_r, 1)
        self.assertEqual(len(result.steps), 4)
        self.assertEqual(result.selection.m, 4)

    def test_select_r_is_reproducible(self):
        sample = sample_gevr(80, 3, GevParams(0.0, 1.0, 0.0), seed=6)
        first = select_r(sample, 3, test="ed", L=99, seed=7)
        second = select_r(sample, 3, test="ed", L=99, seed=7)
        self.assertEqual(first.chosen_r, second.chosen_r)
        np.testing.assert_array_equal(first.selection.raw_p, second.selection.raw_p)

    def test_select_r_stays_at_or_below_true_depth(self):
        # the 5th and 6th columns are misspecified, so r = 4 is the correct choice
        chosen = []
        for k in range(10):
            sample = gen_rselect_design(500, GevParams(0.0, 1.0, 0.0), seed=200 + k)
            result = select_r(sample, sample.r, test="ed", rule="forward", alpha=0.05, L=99, seed=300 + k)
            self.assertFalse(result.failed)
            chosen.append(result.chosen_r)
        self.assertGreaterEqual(sum(r <= 4 for r in chosen), 7, msg=f"chosen r: {chosen}")

    def test_moran_threshold_on_splice(self):
        y = gen_beta_gpd_splice(500, 500, seed=8)
        grid = order_statistic_grid(y, count=20, step=40, lower=0.0)
        result = select_threshold(y, grid, "moran", "forward", 0.05, seed=9)
        self.assertFalse(result.failed)
        self.assertGreater(result.selection.k_hat["forward"], 0)


if __name__ == "__main__":
    unittest.main()
