import unittest

import numpy as np
import scipy.linalg

from lporl import AVERAGE, DISCOUNTED
from lporl.coverage import (chi_square, coverage_from_occupancies, coverage_report,
                            dagger_ratio, diamond_ratio, empirical_coverage_report,
                            generalized_ratio, is_one_hot, whitened_variance)
from lporl.exceptions import NearSingular, UnsupportedPoint
from lporl.linmdp import occupancy, random_linear_mdp, random_tabular_mdp
from lporl.sampling import draw_dataset

from . import random_policy


class WorkedExampleTestCase(unittest.TestCase):
    def setUp(self):
        self.features = np.eye(2)
        self.report = coverage_from_occupancies([1.0, 0.0], [0.5, 0.5], self.features)

    def test_ratios(self):
        self.assertAlmostEqual(self.report.c_phi_half, 2.0)
        self.assertAlmostEqual(self.report.c_phi_one, 4.0)
        self.assertAlmostEqual(self.report.c_diamond, 2.0)
        self.assertAlmostEqual(self.report.c_dagger, 2.0)
        self.assertAlmostEqual(self.report.chi_square, 1.0)
        self.assertAlmostEqual(self.report.variance_term, 0.0)

    def test_checks(self):
        self.assertTrue(self.report.ordering_ok)
        self.assertTrue(self.report.variance_identity_ok)
        self.assertTrue(self.report.one_hot_identity_ok)
        self.assertEqual(self.report.dim, 2)
        self.assertFalse(self.report.approximate)

    def test_beta_radius(self):
        self.assertAlmostEqual(self.report.beta_radius(0.5), 2.0)
        self.assertAlmostEqual(self.report.beta_radius(1.0), 4.0)
        small = coverage_from_occupancies([0.5, 0.5], [0.5, 0.5], self.features)
        self.assertAlmostEqual(small.beta_radius(0.5), 1.0)

    def test_ratio_by_exponent(self):
        self.assertEqual(self.report.ratio(0.5), self.report.c_phi_half)
        self.assertEqual(self.report.ratio(1), self.report.c_phi_one)


class OnPolicyCoverageTestCase(unittest.TestCase):
    def test_target_equals_behavior(self):
        mdp = random_tabular_mdp(4, 3, seed=1)
        policy = random_policy(4, 3, 1)
        for setting in [DISCOUNTED, AVERAGE]:
            report = coverage_report(mdp, policy, policy, setting)
            self.assertAlmostEqual(report.c_phi_half, 1.0, places=9)
            self.assertAlmostEqual(report.c_diamond, mdp.dim, places=8)
            self.assertAlmostEqual(report.c_dagger, 1.0, places=9)
            self.assertAlmostEqual(report.chi_square, 0.0, places=12)
            self.assertEqual(report.setting, setting)

    def test_linear_features(self):
        mdp = random_linear_mdp(6, 2, 3, seed=4)
        policy = random_policy(6, 2, 4)
        report = coverage_report(mdp, policy, policy)
        self.assertAlmostEqual(report.c_diamond, 3.0, places=8)
        self.assertAlmostEqual(report.c_dagger, 1.0, places=9)
        self.assertLessEqual(report.c_phi_half, 1.0 + 1e-9)
        self.assertIsNone(report.one_hot_identity_ok)


class RatioFormsTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.features = rng.uniform(size=(7, 3))
        self.mu_star = rng.dirichlet(np.ones(7))
        self.mu_b = rng.dirichlet(np.ones(7))
        self.lam = self.features.T @ (self.mu_b[:, None] * self.features)
        self.second = self.features.T @ (self.mu_star[:, None] * self.features)

    def test_diamond_is_a_weighted_sum(self):
        inverse = np.linalg.inv(self.lam)
        expected = sum(w * phi @ inverse @ phi for w, phi in zip(self.mu_star, self.features))
        self.assertAlmostEqual(diamond_ratio(self.mu_star, self.lam, self.features), expected)

    def test_dagger_is_a_generalized_eigenvalue(self):
        expected = scipy.linalg.eigh(self.second, self.lam, eigvals_only=True).max()
        self.assertAlmostEqual(dagger_ratio(self.mu_star, self.lam, self.features), expected)

    def test_dagger_bounds_rayleigh_quotients(self):
        value = dagger_ratio(self.mu_star, self.lam, self.features)
        rng = np.random.default_rng(0)
        for v in rng.normal(size=(50, 3)):
            self.assertLessEqual((v @ self.second @ v) / (v @ self.lam @ v), value + 1e-9)

    def test_generalized_ratio(self):
        mean = self.features.T @ self.mu_star
        self.assertAlmostEqual(
            generalized_ratio(self.mu_star, self.lam, self.features, 1.0),
            mean @ np.linalg.inv(self.lam @ self.lam) @ mean)
        self.assertAlmostEqual(
            generalized_ratio(self.mu_star, self.lam, self.features, 0.5),
            mean @ np.linalg.inv(self.lam) @ mean)

    def test_variance_identity(self):
        self.assertAlmostEqual(
            generalized_ratio(self.mu_star, self.lam, self.features, 0.5)
            + whitened_variance(self.mu_star, self.lam, self.features),
            diamond_ratio(self.mu_star, self.lam, self.features))

    def test_singular_covariance(self):
        features = np.array([[1.0, 0.0], [1.0, 0.0]])
        with self.assertRaises(NearSingular):
            generalized_ratio([0.5, 0.5], features.T @ features, features, 0.5)


class ChiSquareTestCase(unittest.TestCase):
    def test_value(self):
        self.assertAlmostEqual(chi_square([0.2, 0.8], [0.5, 0.5]), 0.36 / 0.5)

    def test_zero_mass_both_sides(self):
        self.assertAlmostEqual(chi_square([0.5, 0.5, 0.0], [0.25, 0.75, 0.0]),
                               0.0625 / 0.25 + 0.0625 / 0.75)

    def test_unsupported(self):
        with self.assertRaises(UnsupportedPoint):
            chi_square([0.5, 0.5], [1.0, 0.0])

    def test_report_without_chi_square(self):
        features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        report = coverage_from_occupancies([0.0, 0.0, 1.0], [0.5, 0.5, 0.0], features)
        self.assertIsNone(report.chi_square)
        self.assertIsNone(report.one_hot_identity_ok)
        self.assertAlmostEqual(report.c_phi_half, 4.0)

    def test_one_hot_detection(self):
        self.assertTrue(is_one_hot(np.eye(3)))
        self.assertFalse(is_one_hot(np.array([[1.0, 0.0], [0.5, 0.5]])))
        self.assertFalse(is_one_hot(np.array([[1.0, 1.0], [0.0, 1.0]])))


class RandomInstancesTestCase(unittest.TestCase):
    def test_tabular_identities(self):
        rng = np.random.default_rng(8)
        for seed in range(100):
            num_states, num_actions = int(rng.integers(2, 6)), int(rng.integers(1, 4))
            mdp = random_tabular_mdp(num_states, num_actions, seed)
            behavior = random_policy(num_states, num_actions, seed)
            target = random_policy(num_states, num_actions, seed + 1000)
            report = coverage_report(mdp, behavior, target)
            self.assertTrue(report.ordering_ok, seed)
            self.assertTrue(report.variance_identity_ok, seed)
            self.assertTrue(report.one_hot_identity_ok, seed)
            mu_star = occupancy(mdp, target, DISCOUNTED).mu
            mu_b = occupancy(mdp, behavior, DISCOUNTED).mu
            self.assertAlmostEqual(report.c_phi_one, float(np.sum((mu_star / mu_b) ** 2)),
                                   delta=1e-7 * report.c_phi_one)

    def test_linear_ordering(self):
        for seed in range(20):
            mdp = random_linear_mdp(6, 2, 3, seed=seed)
            report = coverage_report(mdp, random_policy(6, 2, seed), random_policy(6, 2, seed + 1))
            self.assertTrue(report.ordering_ok, seed)
            self.assertTrue(report.variance_identity_ok, seed)
            self.assertLessEqual(report.c_dagger, report.c_diamond + 1e-9)
            self.assertLessEqual(report.c_diamond, 3 * report.c_dagger + 1e-9)


class EmpiricalCoverageTestCase(unittest.TestCase):
    def test_plug_in_close_to_exact(self):
        mdp = random_tabular_mdp(3, 2, seed=2)
        behavior = random_policy(3, 2, 2)
        target = random_policy(3, 2, 3)
        exact = coverage_report(mdp, behavior, target)
        estimate = empirical_coverage_report(
            mdp, draw_dataset(mdp, behavior, 200000, seed=0),
            draw_dataset(mdp, target, 200000, seed=1))
        self.assertTrue(estimate.approximate)
        self.assertAlmostEqual(estimate.c_phi_half, exact.c_phi_half,
                               delta=0.05 * exact.c_phi_half)
        self.assertAlmostEqual(estimate.c_diamond, exact.c_diamond, delta=0.05 * exact.c_diamond)
