# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining rotation-invariant target distributions for the experiments.

Every target is a callable (rng, n) -> n clouds on its space's total space M.
"""

import abc
import logging

import numpy as np
from scipy.spatial.transform import Rotation

from quotient_diffusion.v0 import symmetry_geometry

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 1

logger = logging.getLogger(__name__)


class Target(abc.ABC):
    """Base class for target distributions invariant under the space's group."""

    name = None

    def __init__(self, space):
        self.space = space

    @abc.abstractmethod
    def sample(self, rng, n):
        """Returns n clouds of shape (n, N, d)."""
        raise NotImplementedError("No target sampler defined.")

    def __call__(self, rng, n):
        return self.sample(rng, n)

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, self.space)


def planar_radii(x):
    """Returns the distance of each single-point planar cloud from the origin."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.einsum("...ni,...ni->...", x, x))


class RadialMixtureTarget(Target):
    """Point in R^2 with uniform angle and radius from a Gaussian mixture.

    Stand-in for a two-ring distribution on the plane with SO(2) symmetry.
    """

    name = "radial-mixture"

    def __init__(self, space, radii=(1.0, 2.5), radius_scale=0.15, weights=None):
        if not isinstance(space, symmetry_geometry.PlanarRotationSpace) or space.n_points != 1:
            raise ValueError("The radial mixture lives on the single-point SO(2) space.")
        super().__init__(space)
        self.radii = np.asarray(radii, dtype=float)
        if weights is None:
            weights = np.full(len(self.radii), 1.0 / len(self.radii))
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != self.radii.shape or not np.isclose(self.weights.sum(), 1.0):
            raise ValueError("Mixture weights must match the radii and sum to one.")
        if not radius_scale > 0:
            raise ValueError("Radius scale must be positive. Got: %r" % radius_scale)
        self.radius_scale = float(radius_scale)

    def sample(self, rng, n):
        component = rng.choice(len(self.radii), size=n, p=self.weights)
        radius = np.abs(self.radii[component] + self.radius_scale * rng.standard_normal(n))
        angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
        points = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
        return points[:, None, :]


class GaussianTarget(Target):
    """Isotropic N(0, sigma^2 I) restricted to M; its denoiser is known in closed form."""

    name = "gaussian"

    def __init__(self, space, sigma=1.0):
        super().__init__(space)
        if not sigma > 0:
            raise ValueError("Target scale must be positive. Got: %r" % sigma)
        self.sigma = float(sigma)

    def sample(self, rng, n):
        return self.sigma * self.space.sample_noise(rng, n)


class TemplateTarget(Target):
    """A fixed template cloud plus isotropic shape noise, uniformly rotated."""

    name = "template"

    def __init__(self, space, noise=0.05, template_seed=0, template=None):
        if not isinstance(space, symmetry_geometry.ShapeSpace):
            raise ValueError("The template target lives on the SO(3) shape space.")
        super().__init__(space)
        if template is None:
            template = np.random.default_rng(template_seed).standard_normal(space.cloud_shape)
        self.template = space.check_nondegenerate(space.center(np.asarray(template, dtype=float)))
        if self.template.shape != space.cloud_shape:
            raise ValueError("Template of shape %s does not fit %s" % (
                self.template.shape, space))
        self.noise = float(noise)

    def sample(self, rng, n):
        shapes = self.template + self.noise * rng.standard_normal((n,) + self.space.cloud_shape)
        rotations = Rotation.random(n, random_state=rng).as_matrix()
        return self.space.center(symmetry_geometry.apply_group(rotations, shapes))


class DiatomicTarget:
    """Two points at distance `bond` with uniformly random orientation.

    Collinear, hence on the degenerate set of the shape space; it only serves
    the conditional-expectation illustration and has no space.
    """

    name = "diatomic"
    cloud_shape = (2, 3)

    def __init__(self, bond=1.0):
        if not bond > 0:
            raise ValueError("Bond length must be positive. Got: %r" % bond)
        self.bond = float(bond)

    def sample(self, rng, n):
        axis = rng.standard_normal((n, 3))
        axis /= np.linalg.norm(axis, axis=1, keepdims=True)
        half = 0.5 * self.bond * axis
        return np.stack([half, -half], axis=1)

    def __call__(self, rng, n):
        return self.sample(rng, n)


def bond_length(x):
    """Returns the distance between the two points of diatomic cloud(s)."""
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x[..., 0, :] - x[..., 1, :], axis=-1)


TARGETS = {
    RadialMixtureTarget.name: RadialMixtureTarget,
    GaussianTarget.name: GaussianTarget,
    TemplateTarget.name: TemplateTarget,
}


def make_target(name, space, **kwargs):
    """Builds a target from its short name for the given space."""
    if name not in TARGETS:
        raise ValueError("Unknown target '%s'. Valid targets are: %s" % (name, sorted(TARGETS)))
    logger.debug("Building target '%s' on %s with %s", name, space, kwargs)
    return TARGETS[name](space, **kwargs)
