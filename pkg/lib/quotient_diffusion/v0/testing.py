# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining base testing utilities for the library and its users."""

import unittest
from unittest import mock

import numpy as np

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 2

DEFAULT_TEST_SEED = 20260


class BaseQuotientTestCase(unittest.TestCase):
    """Base TestCase class for quick test setup.

    This class offers the following functionality:
    * a seeded `numpy.random.Generator` per test as `self.rng`
    * random non-degenerate clouds and random rotations for any space
    * a `patch()` helper which stops its mock on cleanup
    * array assertions with relative tolerances
    * reusable `_test_*` checks which any `SymmetrySpace` must pass
    """

    seed = DEFAULT_TEST_SEED

    def setUp(self):
        self.rng = np.random.default_rng(self.seed)

    def patch(self, obj, method, **kwargs):
        """Returns a Mock for the given method name."""
        _m = mock.patch.object(obj, method, **kwargs)
        mck = _m.start()
        self.addCleanup(_m.stop)
        return mck

    def random_clouds(self, space, count):
        """Returns `count` standard-normal clouds on M, redrawing degenerate ones."""
        clouds = space.sample_noise(self.rng, count)
        mask = space.degenerate_mask(clouds)
        while np.any(mask):
            clouds[mask] = space.sample_noise(self.rng, int(np.sum(mask)))
            mask = space.degenerate_mask(clouds)
        return clouds

    def random_tangents(self, space, count):
        return space.sample_noise(self.rng, count)

    def random_rotations(self, space, count):
        return space.random_rotation(self.rng, count)

    def assertArrayClose(self, actual, expected, rtol=0.0, atol=1e-9, msg=None):
        np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol, err_msg=msg or "")

    def assertRelativeError(self, actual, expected, tolerance):
        """Asserts ||actual - expected|| <= tolerance * ||expected||."""
        actual = np.asarray(actual, dtype=float)
        expected = np.asarray(expected, dtype=float)
        error = np.linalg.norm(actual - expected)
        self.assertLessEqual(
            error, tolerance * np.linalg.norm(expected),
            "relative error %.3g exceeds %.3g" % (
                error / max(np.linalg.norm(expected), 1e-300), tolerance))

    @staticmethod
    def flat_norms(v):
        v = np.asarray(v)
        return np.sqrt(np.einsum("...ni,...ni->...", v, v))

    def _test_projection_algebra(self, space, count=50):
        x = self.random_clouds(space, count)
        v = self.random_tangents(space, count)
        w = self.random_tangents(space, count)
        pv = space.horizontal_project(x, v)
        pw = space.horizontal_project(x, w)
        scale = self.flat_norms(v)

        # Idempotent:
        self.assertTrue(np.all(
            self.flat_norms(space.horizontal_project(x, pv) - pv) <= 1e-9 * scale))

        # Self-adjoint:
        lhs = np.einsum("bni,bni->b", pv, w)
        rhs = np.einsum("bni,bni->b", v, pw)
        self.assertTrue(np.all(np.abs(lhs - rhs) <= 1e-9 * scale * self.flat_norms(w)))

        # Kills the vertical basis:
        basis = space.vertical_basis(x)
        projected = space.horizontal_project(np.broadcast_to(x[:, None], basis.shape), basis)
        self.assertTrue(np.all(self.flat_norms(projected) <= 1e-9 * self.flat_norms(basis)))

        # Horizontal vectors carry no angular momentum:
        momentum = np.asarray(space.angular_momentum(x, pv)).reshape(count, -1)
        self.assertTrue(np.all(
            np.linalg.norm(momentum, axis=1) <= 1e-9 * self.flat_norms(x) * scale))

    def _test_equivariance(self, space, count=50):
        x = self.random_clouds(space, count)
        v = self.random_tangents(space, count)
        g = self.random_rotations(space, count)
        gx = space.apply_group(g, x)
        self.assertArrayClose(
            space.horizontal_project(gx, space.apply_group(g, v)),
            space.apply_group(g, space.horizontal_project(x, v)))
        self.assertArrayClose(
            space.mean_curvature(gx), space.apply_group(g, space.mean_curvature(x)))

    def _test_curvature_is_horizontal(self, space, count=50):
        x = self.random_clouds(space, count)
        curvature = space.mean_curvature(x)
        self.assertArrayClose(space.horizontal_project(x, curvature), curvature)
