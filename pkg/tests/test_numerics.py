import unittest

import numpy as np

from lporl.exceptions import NearSingular, NonFinite, NotSymmetric
from lporl.numerics import (BallDomain, clamp_interval, clamped_path,
                            project_ball, projected_path, psd_power,
                            softmax_rows)


class PsdPowerTestCase(unittest.TestCase):
    def test_identity(self):
        for p in [-1, -0.5, 0, 0.5, 1, 2]:
            np.testing.assert_allclose(psd_power(np.eye(3), p), np.eye(3), atol=1e-12)

    def test_diagonal_root(self):
        np.testing.assert_allclose(psd_power(np.diag([4.0, 9.0]), 0.5), np.diag([2.0, 3.0]))

    def test_root_squares_back(self):
        rng = np.random.default_rng(5)
        factor = rng.normal(size=(4, 4))
        matrix = factor @ factor.T
        root = psd_power(matrix, 0.5)
        np.testing.assert_allclose(root @ root, matrix, atol=1e-8)

    def test_zero_power_is_exact_identity(self):
        self.assertTrue(np.array_equal(psd_power(np.diag([2.0, 0.0]), 0), np.eye(2)))

    def test_negative_power_needs_invertible(self):
        with self.assertRaises(NearSingular):
            psd_power(np.diag([1.0, 0.0]), -1)
        # positive powers of a singular matrix are fine
        np.testing.assert_allclose(psd_power(np.diag([1.0, 0.0]), 0.5), np.diag([1.0, 0.0]))

    def test_rejects_asymmetric(self):
        with self.assertRaises(NotSymmetric):
            psd_power(np.array([[1.0, 0.5], [0.0, 1.0]]), 0.5)

    def test_rejects_non_finite(self):
        with self.assertRaises(NonFinite):
            psd_power(np.array([[np.nan, 0.0], [0.0, 1.0]]), 0.5)


class ProjectionTestCase(unittest.TestCase):
    def test_inside_unchanged(self):
        v = np.array([0.3, -0.4])
        np.testing.assert_array_equal(project_ball(v, BallDomain(1.0)), v)

    def test_scaled_to_radius(self):
        np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), BallDomain(1.0)), [0.6, 0.8])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        domain = BallDomain(2.0)
        for _ in range(20):
            once = project_ball(rng.normal(scale=5, size=4), domain)
            self.assertLessEqual(np.linalg.norm(once), 2.0 + 1e-12)
            np.testing.assert_array_equal(project_ball(once, domain), once)

    def test_radius_positive(self):
        with self.assertRaises(ValueError):
            BallDomain(0.0)

    def test_projected_path(self):
        steps = np.array([[2.0, 0.0], [0.0, 0.5], [-0.5, 0.0]])
        path = projected_path(np.zeros(2), steps, 1.0)
        self.assertEqual(path.shape, (4, 2))
        np.testing.assert_array_equal(path[0], [0.0, 0.0])
        np.testing.assert_allclose(path[1], [1.0, 0.0])
        for row in path:
            self.assertLessEqual(np.linalg.norm(row), 1.0 + 1e-12)

    def test_projected_path_no_steps(self):
        path = projected_path(np.array([0.1, 0.2]), np.empty((0, 2)), 1.0)
        np.testing.assert_array_equal(path, [[0.1, 0.2]])


class ClampTestCase(unittest.TestCase):
    def test_clamp(self):
        self.assertEqual(clamp_interval(0.5, 0, 1), 0.5)
        self.assertEqual(clamp_interval(-2, 0, 1), 0)
        self.assertEqual(clamp_interval(7, 0, 1), 1)

    def test_clamped_path(self):
        np.testing.assert_allclose(clamped_path(0.5, [0.7, -0.2, -2.0]), [0.5, 1.0, 0.8, 0.0])


class SoftmaxTestCase(unittest.TestCase):
    def test_zero_row_uniform(self):
        np.testing.assert_allclose(softmax_rows(np.zeros((2, 4))), np.full((2, 4), 0.25))

    def test_log_two(self):
        np.testing.assert_allclose(softmax_rows([[np.log(2), 0.0]]), [[2 / 3, 1 / 3]], atol=1e-12)

    def test_shift_invariant(self):
        logits = np.array([[0.3, -1.2, 2.0]])
        np.testing.assert_allclose(softmax_rows(logits + 100), softmax_rows(logits), atol=1e-12)

    def test_rows_sum_to_one(self):
        logits = np.random.default_rng(0).normal(scale=30, size=(5, 3))
        np.testing.assert_allclose(softmax_rows(logits).sum(axis=1), np.ones(5), atol=1e-12)

    def test_non_finite(self):
        with self.assertRaises(NonFinite):
            softmax_rows([[np.inf, 0.0]])


class RandomizedNumericsTestCase(unittest.TestCase):
    cases = 1000
    powers = [-1, -0.5, 0, 0.5, 1]

    def random_spd(self, rng):
        dim = rng.integers(2, 6)
        basis, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        eigenvalues = rng.uniform(0.5, 2.0, size=dim)
        matrix = basis @ np.diag(eigenvalues) @ basis.T
        return (matrix + matrix.T) / 2

    def test_psd_power_round_trips(self):
        rng = np.random.default_rng(11)
        for case in range(self.cases):
            matrix = self.random_spd(rng)
            a, b = rng.choice(self.powers, size=2)
            np.testing.assert_allclose(
                psd_power(matrix, a) @ psd_power(matrix, b), psd_power(matrix, a + b),
                atol=1e-7, err_msg='case %d, powers %s %s' % (case, a, b))

    def test_projection_idempotent_and_nonexpansive(self):
        rng = np.random.default_rng(12)
        for case in range(self.cases):
            dim = rng.integers(1, 8)
            domain = BallDomain(rng.uniform(0.1, 5.0))
            u = rng.normal(scale=rng.uniform(0.1, 10.0), size=dim)
            v = rng.normal(scale=rng.uniform(0.1, 10.0), size=dim)
            pu, pv = project_ball(u, domain), project_ball(v, domain)
            self.assertLessEqual(np.linalg.norm(pu), domain.radius + 1e-12, msg=case)
            np.testing.assert_allclose(project_ball(pu, domain), pu, atol=1e-12)
            self.assertLessEqual(np.linalg.norm(pu - pv), np.linalg.norm(u - v) + 1e-12, msg=case)

    def test_softmax_properties(self):
        rng = np.random.default_rng(13)
        for case in range(self.cases):
            rows, cols = rng.integers(1, 5), rng.integers(2, 6)
            logits = rng.normal(scale=rng.uniform(0.1, 20.0), size=(rows, cols))
            shift = rng.uniform(-100.0, 100.0, size=(rows, 1))
            probs = softmax_rows(logits)
            np.testing.assert_allclose(softmax_rows(logits + shift), probs, atol=1e-12,
                                       err_msg='case %d' % case)
            np.testing.assert_allclose(probs.sum(axis=1), np.ones(rows), atol=1e-12)
            np.testing.assert_array_equal(probs.argmax(axis=1), logits.argmax(axis=1))
