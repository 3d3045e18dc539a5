import math
import unittest

import numpy as np
import pytest

from lporl import DISCOUNTED
from lporl.coverage import coverage_report
from lporl.exceptions import ConfigInvalid, DatasetExhausted
from lporl.linmdp import (Policy, cycle2, occupancy, optimal_policy,
                          policy_values, random_linear_mdp,
                          random_tabular_mdp, seeded_rng)
from lporl.pd_discounted import (Iterate, Oracle, ProblemBounds, SolverConfig,
                                 discounted_constants, duality_gap_report,
                                 estimator_bias, grad_beta_estimate,
                                 grad_theta_estimate, occupancy_from_beta,
                                 regret_bounds, run, theoretical_bound, tune,
                                 tune_for_budget)
from lporl.sampling import (Transition, behavior_occupancy, draw_dataset)

from . import random_policy


def random_vector(dim, radius, rng):
    v = rng.normal(size=dim)
    return radius * v / np.linalg.norm(v)


class EstimatorTestCase(unittest.TestCase):
    def setUp(self):
        self.mdp = cycle2(0.5)
        self.features = self.mdp.feature_map()
        self.policy = Policy.uniform(2, 1)
        _, self.covariance = behavior_occupancy(self.mdp, self.policy)

    def test_theta_estimate_by_hand(self):
        sample = Transition(x0=0, x=0, a=0, r=1.0, x_next=1)
        grad = grad_theta_estimate(
            sample, self.policy, np.array([1.0, 0.0]), self.covariance, self.features, 1.0)
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_theta_estimate_zero_beta(self):
        sample = Transition(x0=1, x=0, a=0, r=1.0, x_next=1)
        grad = grad_theta_estimate(
            sample, self.policy, np.zeros(2), self.covariance, self.features, 1.0)
        np.testing.assert_allclose(grad, [0.0, 0.5])

    def test_beta_estimate_by_hand(self):
        sample = Transition(x0=0, x=0, a=0, r=1.0, x_next=1)
        grad = grad_beta_estimate(
            sample, self.policy, np.array([1.0, 0.0]), self.covariance, self.features, 1.0)
        np.testing.assert_allclose(grad, [0.0, 0.0])

    def test_beta_estimate_zero_theta(self):
        sample = Transition(x0=0, x=0, a=0, r=1.0, x_next=1)
        grad = grad_beta_estimate(
            sample, self.policy, np.zeros(2), self.covariance, self.features, 0.5)
        expected = self.covariance.power(-0.5) @ np.array([1.0, 0.0])
        np.testing.assert_allclose(grad, expected)

    def test_half_needs_covariance(self):
        sample = Transition(x0=0, x=0, a=0, r=1.0, x_next=1)
        with self.assertRaises(ConfigInvalid):
            grad_beta_estimate(sample, self.policy, np.zeros(2), None, self.features, 0.5)


class UnbiasednessTestCase(unittest.TestCase):
    def check_unbiased(self, mdp, behavior, seed):
        rng = np.random.default_rng(seed)
        _, covariance = behavior_occupancy(mdp, behavior)
        policy = random_policy(mdp.num_states, mdp.num_actions, seed)
        for c in [0.5, 1.0]:
            bias = estimator_bias(
                mdp, behavior, policy, random_vector(mdp.dim, 2.0, rng),
                random_vector(mdp.dim, 3.0, rng), covariance, c)
            self.assertLess(bias['theta'], 1e-10)
            self.assertLess(bias['beta'], 1e-10)

    def test_cycle2(self):
        self.check_unbiased(cycle2(0.5), Policy.uniform(2, 1), 0)

    def test_random_tabular(self):
        rng = np.random.default_rng(1)
        for seed in range(10):
            num_states, num_actions = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            mdp = random_tabular_mdp(num_states, num_actions, seed)
            self.check_unbiased(mdp, random_policy(num_states, num_actions, seed + 100), seed)

    def test_random_linear(self):
        mdp = random_linear_mdp(4, 2, 3, seed=8)
        self.check_unbiased(mdp, Policy.uniform(4, 2), 8)


class TuningTestCase(unittest.TestCase):
    def test_theta_constant(self):
        bounds = ProblemBounds(phi_bound=1.0, discount=0.5, num_actions=2, dim=3)
        constants = discounted_constants(bounds, 1.0, 1.0, 1.0, lambda_norm=0.5)
        self.assertAlmostEqual(constants.G2_theta, 2.625)

    def test_half_exponent_uses_dimension(self):
        bounds = ProblemBounds(phi_bound=2.0, discount=0.9, num_actions=2, dim=7)
        constants = discounted_constants(bounds, 1.0, 1.5, 0.5, lambda_norm=0.3, lambda_trace=99.0)
        self.assertAlmostEqual(constants.G2_theta, 3 * 4 * (0.01 + 1.81 * 2.25))
        self.assertAlmostEqual(constants.G2_beta, 3 * (1 + 1.81 * 4) * 7)

    def test_eta_decreases_with_discount(self):
        etas = []
        for gamma in [0.5, 0.7, 0.9, 0.99]:
            bounds = ProblemBounds(phi_bound=1.0, discount=gamma, num_actions=2, dim=2)
            etas.append(tune(bounds, 2.0, 1.0, 1.0, T=100).eta)
        self.assertTrue(all(a > b for a, b in zip(etas, etas[1:])))

    def test_rates_and_inner_length(self):
        bounds = ProblemBounds(phi_bound=1.0, discount=0.9, num_actions=3, dim=4)
        D_theta, D_beta, T = 5.0, 2.0, 64
        config = tune(bounds, D_theta, D_beta, 1.0, T=T)
        k = config.constants
        log_actions = math.log(3)
        expected_K = math.ceil(T * (2 * D_beta ** 2 * k.G2_beta + D_theta ** 2 * log_actions)
                               / (2 * D_theta ** 2 * k.G2_theta))
        self.assertEqual(config.K, max(1, expected_K))
        self.assertAlmostEqual(config.zeta, 2 * D_beta / math.sqrt(k.G2_beta * T))
        self.assertAlmostEqual(config.eta, 2 * D_theta / math.sqrt(k.G2_theta * config.K))
        self.assertAlmostEqual(config.alpha, math.sqrt(2 * log_actions) / (D_theta * math.sqrt(T)))

    def test_tune_for_epsilon(self):
        bounds = ProblemBounds(phi_bound=1.0, discount=0.5, num_actions=2, dim=2)
        config = tune(bounds, 2.0, 1.0, 1.0, epsilon=0.5)
        self.assertLessEqual(theoretical_bound(config), 0.5)
        self.assertGreater(theoretical_bound(tune(bounds, 2.0, 1.0, 1.0, T=1)), 0.5)

    def test_tune_for_budget(self):
        bounds = ProblemBounds(phi_bound=1.0, discount=0.9, num_actions=2, dim=10)
        config = tune_for_budget(bounds, 10.0, 2.0, 1.0, 100000)
        self.assertLessEqual(config.samples_needed, 100000)
        self.assertGreaterEqual(config.T, 1)

    def test_regret_bounds_terms(self):
        config = tune(ProblemBounds(1.0, 0.9, 2, 4), 3.0, 2.0, 1.0, T=10)
        bounds = regret_bounds(config)
        self.assertEqual(sorted(bounds), ['term_beta', 'term_pi', 'term_theta'])
        self.assertAlmostEqual(theoretical_bound(config), sum(bounds.values()) / 10)

    def test_manual_validation(self):
        with self.assertRaises(ConfigInvalid):
            SolverConfig(T=0, K=1, c=1.0, alpha=0, zeta=0, eta=0, D_theta=1, D_beta=1).validate()
        with self.assertRaises(ConfigInvalid):
            SolverConfig(T=1, K=1, c=0.7, alpha=0, zeta=0, eta=0, D_theta=1, D_beta=1).validate()
        with self.assertRaises(ConfigInvalid):
            SolverConfig(T=1, K=1, c=1.0, alpha=-1, zeta=0, eta=0, D_theta=1, D_beta=1).validate()


class RunTestCase(unittest.TestCase):
    def setUp(self):
        self.mdp = random_tabular_mdp(4, 2, seed=5)
        self.behavior = Policy.uniform(4, 2)
        _, self.covariance = behavior_occupancy(self.mdp, self.behavior)
        self.oracle = Oracle(self.mdp, self.behavior, setting=DISCOUNTED,
                             covariance=self.covariance)

    def test_no_op_run(self):
        config = SolverConfig(T=1, K=1, c=1.0, alpha=0.0, zeta=0.0, eta=0.0,
                              D_theta=1.0, D_beta=1.0)
        dataset = draw_dataset(self.mdp, self.behavior, 1, seed=0)
        result = run(self.mdp.feature_map(), dataset, config)
        np.testing.assert_allclose(result.policy(self.mdp.feature_map(), 0).probs,
                                   np.full((4, 2), 0.5))
        np.testing.assert_array_equal(result.thetas[0], np.zeros(self.mdp.dim))
        np.testing.assert_array_equal(result.betas[0], np.zeros(self.mdp.dim))
        self.assertEqual(result.samples_used, 1)
        self.assertIsNone(result.mixture_return)

    def test_single_action_mixture(self):
        mdp = cycle2(0.5)
        behavior = Policy.uniform(2, 1)
        config = tune(ProblemBounds.from_features(mdp.feature_map()), 3.0, 2.0, 1.0, T=5)
        dataset = draw_dataset(mdp, behavior, config.samples_needed, seed=1)
        result = run(mdp.feature_map(), dataset, config, oracle=Oracle(mdp, behavior))
        self.assertAlmostEqual(result.mixture_return, 2 / 3)
        self.assertAlmostEqual(result.suboptimality, 0.0)

    def test_iterates_feasible(self):
        config = SolverConfig(T=30, K=5, c=1.0, alpha=1.0, zeta=5.0, eta=5.0,
                              D_theta=0.7, D_beta=0.4)
        dataset = draw_dataset(self.mdp, self.behavior, config.samples_needed, seed=2)
        result = run(self.mdp.feature_map(), dataset, config, oracle=self.oracle,
                     covariance=self.covariance)
        self.assertTrue(np.all(np.linalg.norm(result.thetas, axis=1) <= 0.7 + 1e-12))
        self.assertTrue(np.all(np.linalg.norm(result.betas, axis=1) <= 0.4 + 1e-12))
        self.assertEqual(result.trace[-1].t, 30)
        self.assertEqual(result.trace[-1].samples, 150)
        self.assertIsNotNone(result.gap_report)

    def test_deterministic(self):
        config = tune(ProblemBounds.from_features(self.mdp.feature_map()), 5.0, 2.0, 1.0, T=8)
        dataset = draw_dataset(self.mdp, self.behavior, config.samples_needed, seed=3)
        first = run(self.mdp.feature_map(), dataset, config)
        second = run(self.mdp.feature_map(), dataset, config)
        self.assertTrue(np.array_equal(first.policies, second.policies))
        self.assertTrue(np.array_equal(first.betas, second.betas))

    def test_dataset_too_short(self):
        config = SolverConfig(T=3, K=4, c=1.0, alpha=0.1, zeta=0.1, eta=0.1,
                              D_theta=1.0, D_beta=1.0)
        dataset = draw_dataset(self.mdp, self.behavior, 11, seed=0)
        with self.assertRaises(DatasetExhausted):
            run(self.mdp.feature_map(), dataset, config)

    def test_policy_regret_within_bound(self):
        features = self.mdp.feature_map()
        config = tune(ProblemBounds.from_features(features), 5.0, 3.0, 1.0, T=40)
        dataset = draw_dataset(self.mdp, self.behavior, config.samples_needed, seed=4)
        result = run(features, dataset, config, oracle=self.oracle, covariance=self.covariance)
        bound = regret_bounds(config)['term_pi']
        self.assertLessEqual(result.gap_report.term_pi * config.T, bound + 1e-9)

    @pytest.mark.slow
    def test_regret_terms_within_bounds_on_average(self):
        features = self.mdp.feature_map()
        comparator, _ = optimal_policy(self.mdp)
        D_beta = coverage_report(self.mdp, self.behavior, comparator).beta_radius(1.0)
        config = tune(ProblemBounds.from_features(features), self.mdp.theta_bound, D_beta,
                      1.0, T=50)
        reports = []
        for seed in range(20):
            dataset = draw_dataset(self.mdp, self.behavior, config.samples_needed, seed=seed)
            result = run(features, dataset, config, oracle=self.oracle,
                         covariance=self.covariance)
            reports.append(result.gap_report)
        bounds = regret_bounds(config)
        for term in ['term_theta', 'term_beta', 'term_pi']:
            average = np.mean([getattr(report, term) for report in reports])
            self.assertLessEqual(average * config.T, bounds[term])

    @pytest.mark.slow
    def test_converges_on_tabular_benchmark(self):
        mdp = random_tabular_mdp(5, 2, seed=11, discount=0.9)
        behavior = Policy.uniform(5, 2)
        comparator, _ = optimal_policy(mdp)
        _, covariance = behavior_occupancy(mdp, behavior)
        D_beta = coverage_report(mdp, behavior, comparator).beta_radius(1.0)
        features = mdp.feature_map()
        config = tune_for_budget(
            ProblemBounds.from_features(features), mdp.theta_bound, D_beta, 1.0, 4000000,
            lambda_norm=covariance.spectral_norm, lambda_trace=covariance.trace_power(1.0),
            gap_diagnostics=False, eval_every=1000)
        dataset = draw_dataset(mdp, behavior, config.samples_needed, seed=0)
        result = run(features, dataset, config, oracle=Oracle(mdp, behavior, comparator),
                     covariance=covariance)
        self.assertLessEqual(result.suboptimality, 0.05)


class DualityGapTestCase(unittest.TestCase):
    def setUp(self):
        self.mdp = random_tabular_mdp(4, 2, seed=6)
        self.behavior = Policy.uniform(4, 2)
        _, self.covariance = behavior_occupancy(self.mdp, self.behavior)
        self.comparator, _ = optimal_policy(self.mdp)
        self.mu_star = occupancy(self.mdp, self.comparator, DISCOUNTED).mu

    def beta_star(self, c):
        return self.covariance.power(-c) @ (self.mdp.features.T @ self.mu_star)

    def test_reconstructs_optimal_occupancy(self):
        for c in [0.5, 1.0]:
            mu = occupancy_from_beta(self.mdp, self.comparator, self.beta_star(c),
                                     self.covariance.power(c))
            np.testing.assert_allclose(mu, self.mu_star, atol=1e-10)

    def test_saddle_point_has_zero_gap(self):
        theta = policy_values(self.mdp, self.comparator).theta
        iterates = [Iterate(self.comparator, theta, self.beta_star(1.0))] * 3
        report = duality_gap_report(self.mdp, self.behavior, iterates, self.comparator, 1.0)
        self.assertAlmostEqual(report.gap, 0.0, places=10)
        self.assertAlmostEqual(report.suboptimality, 0.0, places=10)

    def test_gap_identities_on_arbitrary_trace(self):
        rng = seeded_rng(0)
        for seed in range(10):
            mdp = random_tabular_mdp(4, 2, seed=seed)
            comparator, _ = optimal_policy(mdp)
            for c in [0.5, 1.0]:
                iterates = [
                    Iterate(random_policy(4, 2, 100 * seed + t), random_vector(mdp.dim, 3.0, rng),
                            random_vector(mdp.dim, 2.0, rng))
                    for t in range(6)
                ]
                report = duality_gap_report(mdp, self.behavior, iterates, comparator, c)
                msg = 'mdp seed %d, c=%s' % (seed, c)
                self.assertAlmostEqual(report.gap, report.suboptimality, delta=1e-8, msg=msg)
                self.assertAlmostEqual(report.gap, report.terms_total, delta=1e-9, msg=msg)
                self.assertEqual(report.T, 6)
