# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining tests for the brute-force oracles and distribution metrics."""

import numpy as np
from quotient_diffusion.v0 import interpolant_schedule, oracles_metrics, testing
from scipy.spatial.transform import Rotation


def _planar_rotation(angle):
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


class TestFiniteDifferences(testing.BaseQuotientTestCase):
    """Tests `oracles_metrics.fd_logdet_grad()`."""

    def test_planar_closed_form(self):
        """Tests the planar gradient against -x / ||x||^2."""
        x = np.array([[2.0, 0.0]])
        self.assertArrayClose(oracles_metrics.fd_logdet_grad(x), [[-0.5, 0.0]], atol=1e-8)
        x = np.array([[0.3, -1.2], [0.5, 0.7]])
        self.assertArrayClose(
            oracles_metrics.fd_logdet_grad(x), -x / np.sum(x * x), atol=1e-8)

    def test_shape_space_closed_form(self):
        """Tests the 3D gradient against -(tr K^-1 I - K^-1) x."""
        x = self.rng.standard_normal((5, 3))
        x -= x.mean(axis=0)
        k = np.sum(x * x) * np.eye(3) - x.T @ x
        k_inv = np.linalg.inv(k)
        expected = -x @ (np.trace(k_inv) * np.eye(3) - k_inv)
        self.assertRelativeError(oracles_metrics.fd_logdet_grad(x), expected, 1e-6)

    def test_bad_inputs(self):
        """Tests `oracles_metrics.fd_logdet_grad()` input validation."""
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.fd_logdet_grad(np.zeros((1, 2)))
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.fd_logdet_grad(
                np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.fd_logdet_grad(np.ones((2, 4)))
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.fd_logdet_grad(np.array([[1.0, 0.0]]), step=1e-2)


class TestConditionalExpectation(testing.BaseQuotientTestCase):
    """Tests `oracles_metrics.mc_conditional_expectation()`."""

    def setUp(self):
        super().setUp()
        self.schedule = interpolant_schedule.LinearOneSidedSchedule()

    @staticmethod
    def _gaussian(rng, n):
        return rng.standard_normal((n, 1, 2))

    def test_default_bandwidth(self):
        """Tests `oracles_metrics.default_bandwidth()`."""
        self.assertAlmostEqual(
            oracles_metrics.default_bandwidth(0.5, (1, 2)), 0.05 * np.sqrt(2.0))
        self.assertAlmostEqual(oracles_metrics.default_bandwidth(1.0, (4, 3)), 0.3)

    def test_gaussian_posterior_mean(self):
        """Tests the estimate against the closed-form Gaussian posterior mean."""
        # For a unit Gaussian target at t = 0.5, E[x1 | x_t] = x_t.
        x_t = np.array([[0.5, 0.0]])
        estimate, stderr = oracles_metrics.mc_conditional_expectation(
            self._gaussian, self.schedule, x_t, 0.5, 100000, rng=self.rng, n_bootstrap=50)
        self.assertEqual(estimate.shape, (1, 2))
        self.assertArrayClose(estimate, x_t, atol=0.15)
        self.assertTrue(np.all(stderr > 0))
        self.assertTrue(np.all(stderr < 0.1))

    def test_transform(self):
        """Tests averaging a transformed quantity."""
        estimate, _ = oracles_metrics.mc_conditional_expectation(
            self._gaussian, self.schedule, np.array([[0.5, 0.0]]), 0.5, 20000,
            bandwidth=0.5, rng=self.rng, transform=lambda x1, x_t: np.ones(len(x1)),
            n_bootstrap=10)
        self.assertAlmostEqual(float(estimate), 1.0)

    def test_insufficient_samples(self):
        """Tests the sample-count and effective-sample-size guards."""
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.mc_conditional_expectation(
                self._gaussian, self.schedule, np.zeros((1, 2)), 0.5, 100, rng=self.rng)
        with self.assertRaises(oracles_metrics.InsufficientSamplesError):
            oracles_metrics.mc_conditional_expectation(
                self._gaussian, self.schedule, np.array([[0.5, 0.0]]), 0.5, 10000,
                bandwidth=1e-4, rng=self.rng)
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.mc_conditional_expectation(
                self._gaussian, self.schedule, np.zeros((1, 2)), 0.5, 10000, bandwidth=0.0,
                rng=self.rng)


class TestRotations(testing.BaseQuotientTestCase):
    """Tests the rotation oracles."""

    def test_brute_force_best_rotation(self):
        """Tests `oracles_metrics.brute_force_best_rotation()`."""
        y = np.array([[1.0, 0.0], [-1.0, 0.5]])
        x = y @ _planar_rotation(0.7)
        rotation, residual = oracles_metrics.brute_force_best_rotation(x, y, 5000, self.rng)
        self.assertLess(residual, 0.01)
        self.assertArrayClose(rotation, _planar_rotation(0.7), atol=0.01)

        # The identity is always a candidate:
        rotation, residual = oracles_metrics.brute_force_best_rotation(y, y, 1, self.rng)
        self.assertEqual(residual, 0.0)
        self.assertArrayClose(rotation, np.eye(2), atol=0.0)

        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.brute_force_best_rotation(x, y, 0, self.rng)

    def test_orientation_drift(self):
        """Tests `oracles_metrics.orientation_drift()`."""
        start = np.array([[1.0, 0.0], [0.0, 2.0]])
        states = np.stack([start, 1.5 * start, 1.5 * start @ _planar_rotation(0.3).T])
        self.assertAlmostEqual(oracles_metrics.orientation_drift(states), 0.3)

        cloud = self.rng.standard_normal((5, 3))
        cloud -= cloud.mean(axis=0)
        rotated = Rotation.from_rotvec([0.0, 0.4, 0.0]).apply(cloud)
        batch = np.stack([np.stack([cloud, cloud]), np.stack([rotated, cloud])], axis=0)
        self.assertArrayClose(oracles_metrics.orientation_drift(batch), [0.4, 0.0], atol=1e-7)

        # Degenerate frames are reported:
        degenerate = np.stack([start, np.zeros_like(start)])
        with self.assertLogs(oracles_metrics.logger, level="WARNING"):
            oracles_metrics.orientation_drift(degenerate)
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.orientation_drift(states[:1])

    def test_orientation_drift_composes_steps(self):
        """Tests that drift composes the rotations between consecutive frames."""
        start = np.array([[1.0, 0.0], [0.0, 2.0]])
        turned = start @ _planar_rotation(0.3).T
        self.assertAlmostEqual(
            oracles_metrics.orientation_drift(np.stack([start, turned, start])), 0.0)
        self.assertAlmostEqual(
            oracles_metrics.orientation_drift(np.stack([start, turned, 2.0 * turned])), 0.3)

        cloud = self.rng.standard_normal((6, 3))
        cloud -= cloud.mean(axis=0)
        first = Rotation.from_rotvec([0.0, 0.0, 0.2])
        second = Rotation.from_rotvec([0.3, 0.0, 0.0])
        states = np.stack([cloud, first.apply(cloud), (second * first).apply(cloud)])
        self.assertAlmostEqual(
            oracles_metrics.orientation_drift(states), (second * first).magnitude(), places=7)

        # A purely radial path is not rotated, however far it moves:
        radial = np.stack([scale * cloud for scale in np.linspace(1.0, 3.0, 5)])
        self.assertAlmostEqual(oracles_metrics.orientation_drift(radial), 0.0, places=7)


class TestMetrics(testing.BaseQuotientTestCase):
    """Tests the distributional metrics."""

    def test_energy_distance(self):
        """Tests `oracles_metrics.energy_distance()`."""
        a = self.rng.standard_normal((200, 2))
        self.assertAlmostEqual(oracles_metrics.energy_distance(a, a), 0.0)
        self.assertGreater(oracles_metrics.energy_distance(a, a + 3.0), 1.0)

        # Sample sets compare over flattened coordinates:
        clouds = oracles_metrics.SampleSet(a.reshape(100, 2, 2), "a")
        self.assertAlmostEqual(oracles_metrics.energy_distance(clouds, clouds), 0.0)

        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.energy_distance(a, np.zeros((3, 3)))

    def test_energy_permutation_test(self):
        """Tests `oracles_metrics.energy_permutation_test()`."""
        a = self.rng.standard_normal((60, 2))
        b = self.rng.standard_normal((40, 2)) + 2.0
        result = oracles_metrics.energy_permutation_test(a, b, 100, self.rng)
        self.assertAlmostEqual(result.statistic, oracles_metrics.energy_distance(a, b))
        self.assertEqual(len(result.null), 100)
        self.assertLess(result.quantile(0.95), result.statistic)
        self.assertLessEqual(result.p_value, 0.02)

    def test_ks_statistic(self):
        """Tests `oracles_metrics.ks_statistic()`."""
        a = self.rng.standard_normal(100)
        self.assertEqual(oracles_metrics.ks_statistic(a, a), 0.0)
        self.assertEqual(oracles_metrics.ks_statistic(a, a + 100.0), 1.0)
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.ks_statistic(a, [])

    def test_shape_descriptor(self):
        """Tests `oracles_metrics.shape_descriptor()`."""
        triangle = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
        self.assertArrayClose(oracles_metrics.shape_descriptor(triangle), [3.0, 4.0, 5.0])
        batch = np.stack([triangle, 2.0 * triangle])
        self.assertArrayClose(
            oracles_metrics.shape_descriptor(batch), [[3.0, 4.0, 5.0], [6.0, 8.0, 10.0]])

        # Invariant under rotations:
        rotated = triangle @ _planar_rotation(1.1).T
        self.assertArrayClose(
            oracles_metrics.shape_descriptor(rotated), [3.0, 4.0, 5.0], atol=1e-12)

        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.shape_descriptor(np.zeros((1, 3)))

    def test_sample_set(self):
        """Tests `oracles_metrics.SampleSet` validation."""
        samples = oracles_metrics.SampleSet(np.zeros((4, 3, 2)), "zeros")
        self.assertEqual(len(samples), 4)
        self.assertEqual(samples.flat().shape, (4, 6))
        self.assertEqual(samples.descriptors().shape, (4, 3))

        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.SampleSet(np.zeros((4, 3)))
        with self.assertRaises(oracles_metrics.OracleInputError):
            oracles_metrics.SampleSet(np.zeros((0, 3, 2)))
