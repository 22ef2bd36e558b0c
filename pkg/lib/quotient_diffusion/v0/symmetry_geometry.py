# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining the quotient-space geometry of point clouds under rotations.

Point clouds and tangent vectors are plain `numpy` arrays laid out as
``(..., N, d)``: any number of leading batch axes, then `N` points of
dimension `d`. A tangent vector always has the same shape as the cloud it is
attached to.

Two symmetry spaces are offered:
* `ShapeSpace`: SO(3) acting on the center-of-mass-free subspace of R^{3N},
  whose quotient is the shape space of N-point configurations.
* `PlanarRotationSpace`: SO(2) acting on the punctured plane (one point by
  default), whose quotient is the half-line of radii.

Both expose the vertical/horizontal decomposition of tangent vectors, the
horizontal projection `P_x` and the horizontal lift of the mean curvature
vector of the quotient, `h(x) = -1/2 grad log det G(x)` where `G` is the
Gram matrix of the vertical basis.
"""

import abc
import logging

import numpy as np
from scipy.spatial.transform import Rotation

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 4

logger = logging.getLogger(__name__)

DEFAULT_INVERSION_EPS = 1e-8
DEFAULT_NEUMANN_ORDER = 3
DEFAULT_DEGENERACY_TOL = 1e-6
SO2_MIN_NORM = 1e-9
ORTHOGONALITY_TOL = 1e-10
COM_FREE_TOL = 1e-9


class InvalidInputError(ValueError):
    """Raised on non-finite, mis-shaped or otherwise invalid arguments."""


class DegenerateCloudError(ValueError):
    """Raised when a cloud lies on the set where the group orbit degenerates."""


def _as_cloud(x, name="x", dim=None):
    x = np.asarray(x, dtype=float)
    if x.ndim < 2:
        raise InvalidInputError(
            "Argument '%s' must have shape (..., N, d). Got: %s" % (name, x.shape))
    if dim is not None and x.shape[-1] != dim:
        raise InvalidInputError(
            "Argument '%s' must have points of dimension %d. Got: %s" % (
                name, dim, x.shape))
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("Argument '%s' contains non-finite entries." % name)
    return x


def _check_same_shape(x, v):
    if np.shape(x) != np.shape(v):
        raise InvalidInputError(
            "Tangent vector of shape %s is not attached to a cloud of shape %s" % (
                np.shape(v), np.shape(x)))


def com_center(raw):
    """Removes the (equal-weight) center of mass of each cloud.

    Args:
        raw: array of shape (..., N, d), N >= 1, finite entries.

    Returns:
        Array of the same shape whose rows sum to zero over the point axis.

    Raises:
        InvalidInputError: on non-finite or mis-shaped input.
    """
    raw = _as_cloud(raw, "raw")
    if raw.shape[-2] < 1:
        raise InvalidInputError("Cannot center a cloud with no points.")
    return raw - raw.mean(axis=-2, keepdims=True)


def inertia_matrix(x):
    """Returns K = sum ||x_n||^2 I - sum x_n x_n^T for each 3D cloud."""
    x = _as_cloud(x, dim=3)
    squared_norm = np.einsum("...ni,...ni->...", x, x)
    outer = np.einsum("...ni,...nj->...ij", x, x)
    return squared_norm[..., None, None] * np.eye(3) - outer


def regularized_inverse(k, eps=DEFAULT_INVERSION_EPS):
    """Returns the symmetric matrix (K + eps I)^-1.

    Args:
        k: array of shape (..., m, m) of symmetric matrices.
        eps: strictly positive regularizer.

    Raises:
        InvalidInputError: if eps is not strictly positive.
    """
    if not eps > 0:
        raise InvalidInputError("Regularizer must be strictly positive. Got: %r" % eps)
    k = np.asarray(k, dtype=float)
    inverse = np.linalg.inv(k + eps * np.eye(k.shape[-1]))
    return 0.5 * (inverse + np.swapaxes(inverse, -1, -2))


def corrected_inverse(k, eps=DEFAULT_INVERSION_EPS, order=DEFAULT_NEUMANN_ORDER):
    """Returns the regularized inverse refined towards K^-1 by a truncated Neumann series.

    With R = (K + eps I)^-1 the exact inverse is R sum_j (eps R)^j. Keeping
    `order` correction terms leaves a relative error of (eps / lambda_min)^(order + 1),
    so the projection identities hold to round-off for non-degenerate clouds of unit scale.
    """
    base = regularized_inverse(k, eps)
    inverse, term = base, base
    for _ in range(order):
        term = eps * (term @ base)
        inverse = inverse + term
    return 0.5 * (inverse + np.swapaxes(inverse, -1, -2))


def angular_momentum(x, v):
    """Returns the total angular momentum sum_n x_n cross v_n of 3D clouds."""
    x = _as_cloud(x, dim=3)
    v = _as_cloud(v, "v", dim=3)
    _check_same_shape(x, v)
    return np.cross(x, v).sum(axis=-2)


def planar_angular_momentum(x, v):
    """Returns the scalar total angular momentum of 2D clouds."""
    x = _as_cloud(x, dim=2)
    v = _as_cloud(v, "v", dim=2)
    _check_same_shape(x, v)
    return (x[..., 0] * v[..., 1] - x[..., 1] * v[..., 0]).sum(axis=-1)


def check_rotation(g):
    """Validates that `g` is a (batch of) proper rotation matrices.

    Raises:
        InvalidInputError: if g^T g deviates from I by more than 1e-10 or det g != +1.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim < 2 or g.shape[-1] != g.shape[-2]:
        raise InvalidInputError("Rotation must be a square matrix. Got: %s" % (g.shape,))
    gram = np.einsum("...ki,...kj->...ij", g, g)
    if not np.all(np.abs(gram - np.eye(g.shape[-1])) <= ORTHOGONALITY_TOL):
        raise InvalidInputError("Matrix is not orthogonal within %g." % ORTHOGONALITY_TOL)
    if not np.all(np.linalg.det(g) > 0):
        raise InvalidInputError("Matrix is a reflection, not a rotation.")
    return g


def apply_group(g, x):
    """Rotates every point of `x` by the rotation matrix `g`.

    `g` may carry the same leading batch axes as `x`, one rotation per cloud.
    """
    g = check_rotation(g)
    x = _as_cloud(x, dim=g.shape[-1])
    return np.einsum("...ij,...nj->...ni", g, x)


def rotation_angle(g):
    """Returns the rotation angle(s) in radians of 2x2 or 3x3 rotation matrices."""
    g = np.asarray(g, dtype=float)
    if g.shape[-1] == 2:
        return np.abs(np.arctan2(g[..., 1, 0], g[..., 0, 0]))
    if g.shape[-1] == 3:
        flat = g.reshape(-1, 3, 3)
        angles = Rotation.from_matrix(flat).magnitude()
        return np.reshape(angles, g.shape[:-2])
    raise InvalidInputError("Only 2x2 and 3x3 rotations are supported. Got: %s" % (g.shape,))


class SymmetrySpace(abc.ABC):
    """Base class describing a total space M acted on by a rotation group G.

    Key methods to override would be:
    * center: map raw coordinates onto M
    * degenerate_mask: flag clouds on which the orbit degenerates
    * vertical_basis: G generators of the orbit at x
    * horizontal_project: orthogonal projection P_x onto the horizontal space
    * mean_curvature: horizontal lift of the quotient mean curvature vector
    * angular_momentum: the moment map whose zero level set is horizontal
    """

    name = None
    dim = None

    def __init__(
            self, n_points, degeneracy_tol=DEFAULT_DEGENERACY_TOL,
            eps=DEFAULT_INVERSION_EPS):
        if int(n_points) != n_points or n_points < 1:
            raise InvalidInputError("Number of points must be a positive integer. Got: %r" % (
                n_points,))
        self.n_points = int(n_points)
        self.degeneracy_tol = degeneracy_tol
        self.eps = eps

    def __repr__(self):
        return "%s(n_points=%d)" % (type(self).__name__, self.n_points)

    @property
    def cloud_shape(self):
        """Returns the (N, d) shape of one cloud."""
        return (self.n_points, self.dim)

    @property
    @abc.abstractmethod
    def ambient_dim(self):
        """Returns the dimension of the total space M."""
        raise NotImplementedError("No ambient dimension defined.")

    @property
    @abc.abstractmethod
    def group_dim(self):
        """Returns the dimension of the symmetry group G."""
        raise NotImplementedError("No group dimension defined.")

    @abc.abstractmethod
    def center(self, x):
        """Maps raw coordinates onto the total space M."""
        raise NotImplementedError("No centering defined.")

    @abc.abstractmethod
    def degenerate_mask(self, x):
        """Returns a boolean array over the batch axes, True where x is degenerate."""
        raise NotImplementedError("No degeneracy test defined.")

    @abc.abstractmethod
    def vertical_basis(self, x):
        """Returns the G vertical generators at x, stacked as (..., G, N, d)."""
        raise NotImplementedError("No vertical basis defined.")

    @abc.abstractmethod
    def horizontal_project(self, x, v):
        """Returns P_x(v), the horizontal component of the tangent vector v."""
        raise NotImplementedError("No horizontal projection defined.")

    @abc.abstractmethod
    def mean_curvature(self, x):
        """Returns the lifted mean curvature vector field at x."""
        raise NotImplementedError("No mean curvature defined.")

    @abc.abstractmethod
    def angular_momentum(self, x, v):
        """Returns the total angular momentum of v at x."""
        raise NotImplementedError("No angular momentum defined.")

    @abc.abstractmethod
    def random_rotation(self, rng, size=None):
        """Returns uniformly distributed rotation matrices."""
        raise NotImplementedError("No rotation sampler defined.")

    def check_nondegenerate(self, x):
        """Raises `DegenerateCloudError` if any cloud in the batch is degenerate."""
        mask = self.degenerate_mask(x)
        if np.any(mask):
            raise DegenerateCloudError(
                "%d of %d clouds lie on the degenerate set of %s." % (
                    int(np.sum(mask)), int(np.size(mask)), self))
        return x

    def apply_group(self, g, x):
        """Rotates the cloud(s) x by g."""
        return apply_group(g, x)

    def sample_noise(self, rng, size):
        """Draws standard normal noise restricted to M, shape (size, N, d)."""
        raw = rng.standard_normal((size,) + self.cloud_shape)
        return self.center(raw)

    def vertical_component(self, x, v):
        """Returns v - P_x(v)."""
        v = self.center(v)
        return v - self.horizontal_project(x, v)

    def covariance_projector(self):
        """Returns the orthogonal projector onto M in flattened (N * d) coordinates."""
        return np.eye(self.n_points * self.dim)


class ShapeSpace(SymmetrySpace):
    """SO(3) acting on the center-of-mass-free subspace of R^{3N}."""

    name = "so3"
    dim = 3

    def __init__(self, n_points, **kwargs):
        super().__init__(n_points, **kwargs)
        if self.n_points < 3:
            raise InvalidInputError(
                "The shape space needs at least 3 points so the group acts with "
                "lower dimension than M. Got: %d" % self.n_points)

    @property
    def ambient_dim(self):
        return 3 * self.n_points - 3

    @property
    def group_dim(self):
        return 3

    def center(self, x):
        return com_center(x)

    def is_com_free(self, x):
        """Returns True where each cloud's mean is zero within 1e-9 * max(1, rms-norm)."""
        x = _as_cloud(x, dim=3)
        rms = np.sqrt(np.mean(np.einsum("...ni,...ni->...n", x, x), axis=-1))
        mean_norm = np.linalg.norm(x.mean(axis=-2), axis=-1)
        return mean_norm <= COM_FREE_TOL * np.maximum(1.0, rms)

    def degenerate_mask(self, x):
        k = inertia_matrix(x)
        eigenvalues = np.linalg.eigvalsh(k)
        return eigenvalues[..., 0] <= self.degeneracy_tol * np.trace(k, axis1=-2, axis2=-1)

    def vertical_basis(self, x):
        x = self.check_nondegenerate(_as_cloud(x, dim=3))
        generators = np.eye(3)[:, None, :]
        return np.cross(generators, x[..., None, :, :])

    def horizontal_project(self, x, v):
        x = self.check_nondegenerate(_as_cloud(x, dim=3))
        v = self.center(v)
        _check_same_shape(x, v)
        k_inv = corrected_inverse(inertia_matrix(x), self.eps)
        omega = np.einsum("...ij,...j->...i", k_inv, angular_momentum(x, v))
        return v - np.cross(omega[..., None, :], x)

    def mean_curvature(self, x):
        x = self.check_nondegenerate(_as_cloud(x, dim=3))
        k_inv = corrected_inverse(inertia_matrix(x), self.eps)
        trace = np.trace(k_inv, axis1=-2, axis2=-1)
        operator = trace[..., None, None] * np.eye(3) - k_inv
        return -np.einsum("...ij,...nj->...ni", operator, x)

    def angular_momentum(self, x, v):
        return angular_momentum(x, v)

    def random_rotation(self, rng, size=None):
        return Rotation.random(size, random_state=rng).as_matrix()

    def covariance_projector(self):
        n = self.n_points
        return np.kron(np.eye(n) - np.full((n, n), 1.0 / n), np.eye(3))


class PlanarRotationSpace(SymmetrySpace):
    """SO(2) acting jointly on the points of a planar cloud (one point by default).

    There is no translation to remove. The orbit metric is the scalar
    G(x) = sum ||x_n||^2, so the lifted curvature is -x / sum ||x_n||^2, i.e.
    -x / ||x||^2 for a single point.
    """

    name = "so2"
    dim = 2

    def __init__(self, n_points=1, **kwargs):
        super().__init__(n_points, **kwargs)

    @property
    def ambient_dim(self):
        return 2 * self.n_points

    @property
    def group_dim(self):
        return 1

    def center(self, x):
        return _as_cloud(x, dim=2)

    def _squared_norm(self, x):
        return np.einsum("...ni,...ni->...", x, x)

    def degenerate_mask(self, x):
        x = _as_cloud(x, dim=2)
        return np.sqrt(self._squared_norm(x)) <= SO2_MIN_NORM

    def _rotate_quarter(self, x):
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def vertical_basis(self, x):
        x = self.check_nondegenerate(_as_cloud(x, dim=2))
        return self._rotate_quarter(x)[..., None, :, :]

    def horizontal_project(self, x, v):
        x = self.check_nondegenerate(_as_cloud(x, dim=2))
        v = _as_cloud(v, "v", dim=2)
        _check_same_shape(x, v)
        coefficient = planar_angular_momentum(x, v) / self._squared_norm(x)
        return v - coefficient[..., None, None] * self._rotate_quarter(x)

    def mean_curvature(self, x):
        x = self.check_nondegenerate(_as_cloud(x, dim=2))
        return -x / self._squared_norm(x)[..., None, None]

    def angular_momentum(self, x, v):
        return planar_angular_momentum(x, v)

    def random_rotation(self, rng, size=None):
        angle = rng.uniform(0.0, 2.0 * np.pi, size=size)
        cos, sin = np.cos(angle), np.sin(angle)
        return np.stack([
            np.stack([cos, -sin], axis=-1),
            np.stack([sin, cos], axis=-1)], axis=-2)


SPACES = {
    ShapeSpace.name: ShapeSpace,
    PlanarRotationSpace.name: PlanarRotationSpace,
}


def make_space(kind, n_points=None, **kwargs):
    """Builds a symmetry space from its short name ("so2" or "so3")."""
    if kind not in SPACES:
        raise InvalidInputError(
            "Unknown symmetry space '%s'. Valid spaces are: %s" % (kind, sorted(SPACES)))
    if n_points is None:
        n_points = 1 if kind == PlanarRotationSpace.name else 5
    logger.debug("Building symmetry space '%s' with %d points", kind, n_points)
    return SPACES[kind](n_points, **kwargs)
