# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining tests for the ODE / SDE samplers."""

from unittest import mock

import numpy as np
from quotient_diffusion.v0 import (
    denoiser,
    interpolant_schedule,
    oracles_metrics,
    samplers,
    symmetry_geometry,
    testing,
)


class _IdentityDenoiser(denoiser.BaseDenoiser):
    """D(x_t, t) = x_t, whose one-sided linear velocity is identically zero."""

    def forward(self, x_t, t):
        return np.asarray(x_t, dtype=float)


class TestSamplerConfig(testing.BaseQuotientTestCase):
    """Tests `samplers.SamplerConfig`."""

    def test_validation(self):
        """Tests `samplers.SamplerConfig` rejects invalid settings."""
        for kwargs in [
                {"mode": "pc"},
                {"variant": "aligned"},
                {"steps": 0},
                {"steps": 2.5},
                {"noise_scale": -0.1},
                {"cutoff": 0.0},
                {"cutoff": 0.2},
                {"n_samples": 0},
                {"grid": [0.0, 0.5, 0.9]},
                {"grid": [0.0, 0.6, 0.4, 1.0]},
                {"grid": [0.1, 1.0]}]:
            with self.assertRaises(ValueError, msg=str(kwargs)):
                samplers.SamplerConfig(**kwargs)

    def test_time_grid(self):
        """Tests `samplers.SamplerConfig.time_grid`."""
        self.assertArrayClose(
            samplers.SamplerConfig(steps=4).time_grid(), [0.0, 0.25, 0.5, 0.75, 1.0])
        config = samplers.SamplerConfig(grid=[0.0, 0.1, 1.0])
        self.assertEqual(config.steps, 2)
        self.assertArrayClose(config.time_grid(), [0.0, 0.1, 1.0])

    def test_diffusion_strength(self):
        """Tests `samplers.SamplerConfig.diffusion_strength`."""
        self.assertEqual(samplers.SamplerConfig(mode="ode").diffusion_strength(0.5), 0.0)
        config = samplers.SamplerConfig(mode="sde", noise_scale=0.5, eta=lambda t: 2.0 * t)
        self.assertAlmostEqual(config.diffusion_strength(0.25), 0.25)
        self.assertEqual(config.diffusion_strength(0.9995), 0.0)

        with self.assertRaises(ValueError):
            samplers.SamplerConfig(mode="sde", eta=-1.0).diffusion_strength(0.5)


class TestSampling(testing.BaseQuotientTestCase):
    """Tests `samplers.sample()` and the single steps."""

    def setUp(self):
        super().setUp()
        self.schedule = interpolant_schedule.LinearOneSidedSchedule()
        self.space = symmetry_geometry.PlanarRotationSpace()
        self.model = denoiser.AnalyticGaussianDenoiser(2.0, self.schedule, self.space)

    def test_quotient_ode_stays_on_ray(self):
        """Tests that radial fields keep planar samples on their initial ray."""
        x0 = self.random_clouds(self.space, 20)
        config = samplers.SamplerConfig(steps=50)
        trajectory = samplers.sample(config, self.space, self.model, self.schedule, x0=x0)
        self.assertEqual(trajectory.states.shape, (51, 20, 1, 2))
        angles = np.arctan2(trajectory.states[..., 1], trajectory.states[..., 0])
        self.assertArrayClose(angles - angles[0], np.zeros_like(angles), atol=1e-9)
        self.assertTrue(np.all(trajectory.frame_rot_angle < 1e-9))
        self.assertTrue(np.all(trajectory.vertical_norm < 1e-9))

    def test_quotient_sde_is_horizontal(self):
        """Tests that quotient SDE steps carry no angular momentum."""
        x0 = self.random_clouds(self.space, 20)
        config = samplers.SamplerConfig(mode="sde", steps=40, seed=3)
        trajectory = samplers.sample(config, self.space, self.model, self.schedule, x0=x0)
        self.assertTrue(np.all(trajectory.ang_mom_norm < 1e-9))
        self.assertTrue(np.all(np.isfinite(trajectory.final)))

        # The conventional SDE does rotate the samples:
        config = samplers.SamplerConfig(
            mode="sde", variant="conventional", steps=40, seed=3)
        trajectory = samplers.sample(config, self.space, self.model, self.schedule, x0=x0)
        self.assertGreater(trajectory.ang_mom_norm.max(), 1e-3)

    def test_sde_without_noise_equals_ode(self):
        """Tests that a zero noise scale reproduces the ODE bit for bit."""
        space = symmetry_geometry.ShapeSpace(4)
        model = denoiser.AnalyticGaussianDenoiser(1.0, self.schedule, space)
        x0 = self.random_clouds(space, 5)
        for variant in samplers.VALID_VARIANTS:
            ode = samplers.sample(
                samplers.SamplerConfig(steps=20, variant=variant), space, model,
                self.schedule, x0=x0)
            sde = samplers.sample(
                samplers.SamplerConfig(mode="sde", noise_scale=0.0, steps=20, variant=variant),
                space, model, self.schedule, x0=x0)
            np.testing.assert_array_equal(ode.states, sde.states)

    def test_sde_step_past_cutoff_draws_no_noise(self):
        """Tests `samplers.sde_step()` beyond the stochastic cutoff."""
        rng = mock.MagicMock()
        config = samplers.SamplerConfig(mode="sde", cutoff=0.01)
        x = self.random_clouds(self.space, 3)
        result = samplers.sde_step(
            "quotient", self.space, self.model, self.schedule, config, x, 0.995, 0.005, rng)
        rng.standard_normal.assert_not_called()
        expected = samplers.ode_step(
            "quotient", self.space, self.model, self.schedule, x, 0.995, 0.005)
        np.testing.assert_array_equal(result, expected)

        with self.assertRaises(ValueError):
            samplers.ode_step("quotient", self.space, self.model, self.schedule, x, 0.5, 0.0)

    def test_zero_velocity(self):
        """Tests a single step under an identically zero velocity."""
        model = _IdentityDenoiser(self.space)
        x0 = self.random_clouds(self.space, 4)
        trajectory = samplers.sample(
            samplers.SamplerConfig(steps=1), self.space, model, self.schedule, x0=x0)
        self.assertArrayClose(trajectory.final, x0, atol=0.0)
        self.assertArrayClose(samplers.trajectory_length(trajectory), np.zeros(4))

    def test_degenerate_start_raises(self):
        """Tests that the quotient sampler refuses degenerate clouds."""
        x0 = np.zeros((2, 1, 2))
        with self.assertRaises(symmetry_geometry.DegenerateCloudError):
            samplers.sample(
                samplers.SamplerConfig(steps=2), self.space, self.model, self.schedule, x0=x0)

    def test_single_cloud_and_noise_start(self):
        """Tests the starting points accepted by `samplers.sample()`."""
        trajectory = samplers.sample(
            samplers.SamplerConfig(steps=3), self.space, self.model, self.schedule,
            x0=np.array([[1.0, 1.0]]))
        self.assertEqual(trajectory.final.shape, (1, 1, 2))

        config = samplers.SamplerConfig(steps=3, n_samples=7, seed=11)
        first = samplers.sample(config, self.space, self.model, self.schedule)
        second = samplers.sample(config, self.space, self.model, self.schedule)
        self.assertEqual(first.final.shape, (7, 1, 2))
        np.testing.assert_array_equal(first.states, second.states)

    def test_keep_states(self):
        """Tests that dropping the intermediate states keeps the diagnostics."""
        x0 = self.random_clouds(self.space, 6)
        full = samplers.sample(
            samplers.SamplerConfig(steps=10), self.space, self.model, self.schedule, x0=x0)
        light = samplers.sample(
            samplers.SamplerConfig(steps=10, keep_states=False), self.space, self.model,
            self.schedule, x0=x0)
        self.assertTrue(full.has_all_states)
        self.assertFalse(light.has_all_states)
        self.assertEqual(len(light.states), 2)
        np.testing.assert_array_equal(light.final, full.final)
        self.assertArrayClose(
            samplers.trajectory_length(light), samplers.trajectory_length(full), atol=1e-12)

    def test_clamped_steps(self):
        """Tests that steps evaluated below the alpha_hat floor are counted."""
        model = _IdentityDenoiser(self.space)
        x0 = self.random_clouds(self.space, 3)
        config = samplers.SamplerConfig(grid=[0.0, 0.5, 0.99995, 1.0])
        with self.assertLogs(samplers.logger, level="INFO") as logs:
            trajectory = samplers.sample(config, self.space, model, self.schedule, x0=x0)
        self.assertEqual(trajectory.clamped_steps, 1)
        self.assertIn("below the floor", "\n".join(logs.output))
        self.assertArrayClose(trajectory.final, x0, atol=0.0)

        trajectory = samplers.sample(
            samplers.SamplerConfig(steps=200), self.space, model, self.schedule, x0=x0)
        self.assertEqual(trajectory.clamped_steps, 0)

    def test_quotient_sde_keeps_orientation(self):
        """Tests that quotient SDE samples accumulate no rotation between frames."""
        space = symmetry_geometry.ShapeSpace(5)
        model = denoiser.AnalyticGaussianDenoiser(1.0, self.schedule, space)
        x0 = self.random_clouds(space, 20)
        trajectory = samplers.sample(
            samplers.SamplerConfig(mode="sde", steps=50, seed=5), space, model,
            self.schedule, x0=x0)
        drift = oracles_metrics.orientation_drift(trajectory.states)
        self.assertEqual(drift.shape, (20,))
        self.assertLess(drift.max(), 1e-3)


class TestTrajectoryLength(testing.BaseQuotientTestCase):
    """Tests `samplers.trajectory_length()`."""

    def test_trajectory_length(self):
        """Tests the summed step norms of stacked states."""
        states = np.array([[[0.0, 0.0]], [[3.0, 4.0]], [[3.0, 4.0]], [[0.0, 0.0]]])
        self.assertAlmostEqual(float(samplers.trajectory_length(states)), 10.0)

        # Batched as (S, B, N, d):
        batched = np.stack([states, 2.0 * states], axis=1)
        self.assertArrayClose(samplers.trajectory_length(batched), [10.0, 20.0])

        with self.assertRaises(ValueError):
            samplers.trajectory_length(states[:1])
