# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining tests for the quotient-space geometry library."""

import numpy as np
from quotient_diffusion.v0 import symmetry_geometry, testing

TRIANGLE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
COLLINEAR = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def _logdet_gradient(x, step=1e-5):
    """Central differences of -1/2 log det K(x) for a single 3D cloud."""
    gradient = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        gradient[index] = (
            np.linalg.slogdet(symmetry_geometry.inertia_matrix(plus))[1]
            - np.linalg.slogdet(symmetry_geometry.inertia_matrix(minus))[1]) / (2 * step)
    return -0.5 * gradient


class UtilsTestCase(testing.BaseQuotientTestCase):
    """TestCase covering the module-level helpers."""

    def test_com_center(self):
        """Tests `symmetry_geometry.com_center()`."""
        centered = symmetry_geometry.com_center([[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
        self.assertArrayClose(centered, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

        # Batched:
        clouds = self.rng.standard_normal((4, 6, 3))
        self.assertArrayClose(
            symmetry_geometry.com_center(clouds).sum(axis=1), np.zeros((4, 3)))

        # Bad inputs:
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.com_center([[np.nan, 0.0, 0.0], [1.0, 0.0, 0.0]])
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.com_center([1.0, 2.0, 3.0])

    def test_inertia_matrix(self):
        """Tests `symmetry_geometry.inertia_matrix()`."""
        self.assertArrayClose(
            symmetry_geometry.inertia_matrix(TRIANGLE),
            [[2.0, -1.0, 0.0], [-1.0, 2.0, 0.0], [0.0, 0.0, 4.0]])
        self.assertArrayClose(
            symmetry_geometry.inertia_matrix(COLLINEAR), np.diag([0.0, 2.0, 2.0]))

        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.inertia_matrix(np.zeros((3, 2)))

    def test_regularized_inverse(self):
        """Tests `symmetry_geometry.regularized_inverse()`."""
        self.assertArrayClose(
            symmetry_geometry.regularized_inverse(np.zeros((3, 3))), 1e8 * np.eye(3),
            rtol=1e-12, atol=0.0)

        k = symmetry_geometry.inertia_matrix(TRIANGLE)
        inverse = symmetry_geometry.regularized_inverse(k)
        self.assertArrayClose(inverse, inverse.T, atol=0.0)
        self.assertArrayClose(inverse @ k, np.eye(3), atol=1e-7)

        # Bad inputs:
        for eps in (0.0, -1e-8):
            with self.assertRaises(symmetry_geometry.InvalidInputError):
                symmetry_geometry.regularized_inverse(k, eps)

    def test_corrected_inverse(self):
        """Tests `symmetry_geometry.corrected_inverse()`."""
        k = np.diag([1e-4, 3.0, 4.0])
        exact = np.diag([1e4, 1.0 / 3.0, 0.25])
        self.assertRelativeError(symmetry_geometry.corrected_inverse(k), exact, 1e-14)
        # The plain regularized inverse is off by eps / lambda_min:
        self.assertGreater(
            np.linalg.norm(symmetry_geometry.regularized_inverse(k) - exact),
            1e-5 * np.linalg.norm(exact))

    def test_angular_momentum(self):
        """Tests `symmetry_geometry.angular_momentum()`."""
        field = np.cross([0.0, 0.0, 1.0], TRIANGLE)
        self.assertArrayClose(symmetry_geometry.angular_momentum(TRIANGLE, field), [0, 0, 4])

        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.angular_momentum(TRIANGLE, field[:2])

    def test_planar_angular_momentum(self):
        """Tests `symmetry_geometry.planar_angular_momentum()`."""
        x = np.array([[2.0, 0.0]])
        self.assertAlmostEqual(
            float(symmetry_geometry.planar_angular_momentum(x, [[0.0, 3.0]])), 6.0)
        self.assertAlmostEqual(
            float(symmetry_geometry.planar_angular_momentum(x, [[5.0, 0.0]])), 0.0)

    def test_check_rotation(self):
        """Tests `symmetry_geometry.check_rotation()`."""
        rotation = symmetry_geometry.ShapeSpace(3).random_rotation(self.rng)
        self.assertIs(symmetry_geometry.check_rotation(rotation), rotation)

        # Bad inputs:
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.check_rotation(np.diag([1.0, 1.0, -1.0]))
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.check_rotation(2.0 * np.eye(3))
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.check_rotation(np.eye(3)[:2])

    def test_apply_group_and_rotation_angle(self):
        """Tests `symmetry_geometry.apply_group()` and `rotation_angle()`."""
        angle = 0.3
        rotation = np.array([
            [np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rotated = symmetry_geometry.apply_group(rotation, [[1.0, 0.0]])
        self.assertArrayClose(rotated, [[np.cos(angle), np.sin(angle)]])
        self.assertAlmostEqual(float(symmetry_geometry.rotation_angle(rotation)), angle)
        self.assertAlmostEqual(float(symmetry_geometry.rotation_angle(np.eye(3))), 0.0)

        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.rotation_angle(np.eye(4))

    def test_make_space(self):
        """Tests `symmetry_geometry.make_space()`."""
        space = symmetry_geometry.make_space("so2")
        self.assertIsInstance(space, symmetry_geometry.PlanarRotationSpace)
        self.assertEqual(space.cloud_shape, (1, 2))

        space = symmetry_geometry.make_space("so3", 4)
        self.assertIsInstance(space, symmetry_geometry.ShapeSpace)
        self.assertEqual(space.ambient_dim, 9)
        self.assertEqual(space.group_dim, 3)

        # Bad inputs:
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.make_space("so4")
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.make_space("so3", 2)
        with self.assertRaises(symmetry_geometry.InvalidInputError):
            symmetry_geometry.make_space("so2", 0)


class TestShapeSpace(testing.BaseQuotientTestCase):
    """Tests the SO(3) shape space."""

    def setUp(self):
        super().setUp()
        self.space = symmetry_geometry.ShapeSpace(5)

    def test_vertical_basis(self):
        """Tests `symmetry_geometry.ShapeSpace.vertical_basis`."""
        space = symmetry_geometry.ShapeSpace(3)
        basis = space.vertical_basis(TRIANGLE)
        self.assertEqual(basis.shape, (3, 3, 3))
        self.assertArrayClose(basis[2], [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, -1.0, 0.0]])

    def test_degenerate_clouds(self):
        """Tests the degenerate set of `symmetry_geometry.ShapeSpace`."""
        space = symmetry_geometry.ShapeSpace(3)
        self.assertEqual(
            space.degenerate_mask(np.stack([TRIANGLE, COLLINEAR])).tolist(), [False, True])
        with self.assertRaises(symmetry_geometry.DegenerateCloudError):
            space.horizontal_project(COLLINEAR, TRIANGLE)
        with self.assertRaises(symmetry_geometry.DegenerateCloudError):
            space.mean_curvature(np.zeros((3, 3)))

    def test_horizontal_project(self):
        """Tests `symmetry_geometry.ShapeSpace.horizontal_project`."""
        self._test_projection_algebra(self.space)

        # Rigid rotations are purely vertical:
        x = self.random_clouds(self.space, 10)
        omega = self.rng.standard_normal((10, 1, 3))
        rigid = np.cross(omega, x)
        self.assertTrue(np.all(
            self.flat_norms(self.space.horizontal_project(x, rigid))
            <= 1e-9 * self.flat_norms(rigid)))

        # The result always lies on M:
        v = self.rng.standard_normal(x.shape)
        self.assertTrue(np.all(self.space.is_com_free(self.space.horizontal_project(x, v))))

    def test_mean_curvature(self):
        """Tests `symmetry_geometry.ShapeSpace.mean_curvature`."""
        self._test_curvature_is_horizontal(self.space)
        for x in self.random_clouds(self.space, 5):
            self.assertRelativeError(
                self.space.mean_curvature(x), _logdet_gradient(x), 1e-5)

    def test_equivariance(self):
        """Tests rotation equivariance of `symmetry_geometry.ShapeSpace`."""
        self._test_equivariance(self.space)

    def test_covariance_projector(self):
        """Tests `symmetry_geometry.ShapeSpace.covariance_projector`."""
        projector = self.space.covariance_projector()
        self.assertArrayClose(projector @ projector, projector)
        self.assertAlmostEqual(np.trace(projector), self.space.ambient_dim)

    def test_sample_noise(self):
        """Tests `symmetry_geometry.SymmetrySpace.sample_noise`."""
        noise = self.space.sample_noise(self.rng, 7)
        self.assertEqual(noise.shape, (7, 5, 3))
        self.assertTrue(np.all(self.space.is_com_free(noise)))


class TestPlanarRotationSpace(testing.BaseQuotientTestCase):
    """Tests the SO(2) punctured plane."""

    def setUp(self):
        super().setUp()
        self.space = symmetry_geometry.PlanarRotationSpace()

    def test_horizontal_project(self):
        """Tests `symmetry_geometry.PlanarRotationSpace.horizontal_project`."""
        self.assertArrayClose(
            self.space.horizontal_project([[1.0, 0.0]], [[1.0, 1.0]]), [[1.0, 0.0]])
        self._test_projection_algebra(self.space)

        with self.assertRaises(symmetry_geometry.DegenerateCloudError):
            self.space.horizontal_project([[0.0, 0.0]], [[1.0, 1.0]])

    def test_mean_curvature(self):
        """Tests `symmetry_geometry.PlanarRotationSpace.mean_curvature`."""
        self.assertArrayClose(self.space.mean_curvature([[2.0, 0.0]]), [[-0.5, 0.0]])
        self._test_curvature_is_horizontal(self.space)

        # Several points share one orbit metric:
        space = symmetry_geometry.PlanarRotationSpace(2)
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        self.assertArrayClose(space.mean_curvature(x), -x / 2.0)

    def test_equivariance(self):
        """Tests rotation equivariance of `symmetry_geometry.PlanarRotationSpace`."""
        self._test_equivariance(self.space)

    def test_vertical_component(self):
        """Tests `symmetry_geometry.SymmetrySpace.vertical_component`."""
        self.assertArrayClose(
            self.space.vertical_component([[1.0, 0.0]], [[1.0, 1.0]]), [[0.0, 1.0]])
