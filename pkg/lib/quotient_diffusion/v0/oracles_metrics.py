# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining brute-force oracles and distributional metrics.

Nothing here calls into `symmetry_geometry` or `objectives`: the oracles
recompute what they need (inertia matrices, optimal rotations) through
independent code paths so they can check those modules.
"""

import dataclasses
import logging

import numpy as np
from scipy import stats
from scipy.spatial import distance
from scipy.spatial.transform import Rotation

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 3

logger = logging.getLogger(__name__)

MIN_EFFECTIVE_SAMPLES = 100
MIN_MC_SAMPLES = 10 ** 4
FD_STEP_RANGE = (1e-7, 1e-3)
DEFAULT_PERMUTATIONS = 200
DEFAULT_BOOTSTRAP = 200


class InsufficientSamplesError(ValueError):
    """Raised when a kernel estimate has too few effective samples."""


class OracleInputError(ValueError):
    """Raised for malformed or degenerate oracle inputs."""


@dataclasses.dataclass
class SampleSet:
    """A homogeneous set of clouds of shape (n, N, d) with a provenance label."""

    clouds: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.clouds = np.asarray(self.clouds, dtype=float)
        if self.clouds.ndim != 3:
            raise OracleInputError(
                "Sample set '%s' must have shape (n, N, d). Got: %s" % (
                    self.label, self.clouds.shape))
        if not len(self.clouds):
            raise OracleInputError("Sample set '%s' is empty." % self.label)

    def __len__(self):
        return len(self.clouds)

    def flat(self):
        return self.clouds.reshape(len(self.clouds), -1)

    def descriptors(self):
        return shape_descriptor(self.clouds)


def _as_rows(samples):
    if isinstance(samples, SampleSet):
        return samples.flat()
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if not len(samples):
        raise OracleInputError("Empty sample set.")
    return samples.reshape(len(samples), -1)


def _center_points(x):
    """Removes the center of mass of 3D clouds; planar clouds are left alone."""
    if x.shape[-1] == 3:
        return x - x.mean(axis=-2, keepdims=True)
    return x


def _negative_half_logdet(flat, shape):
    x = flat.reshape(shape)
    if shape[-1] == 2:
        return -0.5 * np.log(np.sum(x * x))
    k = np.sum(x * x) * np.eye(3) - x.T @ x
    sign, logdet = np.linalg.slogdet(k)
    if sign <= 0:
        raise OracleInputError("Inertia matrix is singular; the cloud is degenerate.")
    return -0.5 * logdet


def fd_logdet_grad(x, step=1e-5):
    """Returns the central-difference gradient of -1/2 log det K(x).

    For planar clouds the orbit volume is ||x||^2 and the function is
    -1/2 log ||x||^2.

    Args:
        x: a single cloud (N, 2) or a CoM-free cloud (N, 3).
        step: finite-difference step in [1e-7, 1e-3].

    Raises:
        OracleInputError: on a degenerate cloud or an out-of-range step.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[-1] not in (2, 3):
        raise OracleInputError("Expected one (N, 2) or (N, 3) cloud. Got: %s" % (x.shape,))
    if not FD_STEP_RANGE[0] <= step <= FD_STEP_RANGE[1]:
        raise OracleInputError("Step must lie in %s. Got: %r" % (FD_STEP_RANGE, step))
    if x.shape[-1] == 2 and np.sum(x * x) <= 0:
        raise OracleInputError("The origin is a degenerate planar cloud.")
    flat = x.ravel()
    gradient = np.zeros_like(flat)
    for index in range(flat.size):
        forward, backward = flat.copy(), flat.copy()
        forward[index] += step
        backward[index] -= step
        gradient[index] = (
            _negative_half_logdet(forward, x.shape)
            - _negative_half_logdet(backward, x.shape)) / (2.0 * step)
    return gradient.reshape(x.shape)


def default_bandwidth(alpha_hat, cloud_shape):
    """Returns 0.1 alpha_hat sqrt(ambient dim), the ambient dim excluding CoM for 3D."""
    n_points, dim = cloud_shape
    ambient = n_points * dim - (3 if dim == 3 else 0)
    return 0.1 * float(alpha_hat) * np.sqrt(ambient)


def mc_conditional_expectation(
        target_sampler, schedule, x_t, t, n, bandwidth=None, rng=None, transform=None,
        n_bootstrap=DEFAULT_BOOTSTRAP):
    """Kernel-weighted Monte-Carlo estimate of E[f(x1) | x_t].

    Draws n joint pairs (x1_i, x_t_i = alpha_hat noise_i + beta x1_i) and
    weights them by exp(-||x_t_i - x_t||^2 / (2 bandwidth^2)).

    Args:
        target_sampler: callable (rng, n) -> n target clouds.
        schedule: the interpolant schedule.
        x_t: the conditioning cloud (N, d).
        t: scalar time.
        n: number of joint draws, at least 10^4.
        bandwidth: kernel width; defaults to `default_bandwidth`.
        rng: `numpy.random.Generator`; a fresh default one when omitted.
        transform: optional callable (x1 batch, x_t) -> values to average in
            place of x1 (e.g. x1 aligned onto x_t).
        n_bootstrap: bootstrap replicates for the standard error.

    Returns:
        Tuple of (estimate, bootstrap standard error), both shaped like x_t.

    Raises:
        InsufficientSamplesError: if the effective sample size is below 100.
    """
    if n < MIN_MC_SAMPLES:
        raise OracleInputError("Need at least %d joint draws. Got: %d" % (MIN_MC_SAMPLES, n))
    rng = rng if rng is not None else np.random.default_rng()
    x_t = np.asarray(x_t, dtype=float)
    alpha_hat, beta, _, _ = schedule.coeffs(t)
    if bandwidth is None:
        bandwidth = default_bandwidth(alpha_hat, x_t.shape)
    if not bandwidth > 0:
        raise OracleInputError("Bandwidth must be positive. Got: %r" % bandwidth)

    x1 = _center_points(np.asarray(target_sampler(rng, n), dtype=float))
    noise = _center_points(rng.standard_normal(x1.shape))
    joint = float(alpha_hat) * noise + float(beta) * x1
    offsets = (joint - x_t).reshape(n, -1)
    log_weights = -np.einsum("ij,ij->i", offsets, offsets) / (2.0 * bandwidth ** 2)
    weights = np.exp(log_weights - log_weights.max())
    effective = weights.sum() ** 2 / np.sum(weights ** 2)
    logger.debug(
        "MC conditional expectation: n=%d, bandwidth=%g, effective samples %.1f",
        n, bandwidth, effective)
    if effective < MIN_EFFECTIVE_SAMPLES:
        raise InsufficientSamplesError(
            "Effective sample size %.1f is below %d (n=%d, bandwidth=%g)" % (
                effective, MIN_EFFECTIVE_SAMPLES, n, bandwidth))

    values = x1 if transform is None else np.asarray(transform(x1, x_t), dtype=float)
    estimate = np.einsum("i,i...->...", weights, values) / weights.sum()
    replicates = []
    for _ in range(n_bootstrap):
        index = rng.integers(0, n, size=n)
        resampled = weights[index]
        replicates.append(np.einsum("i,i...->...", resampled, values[index]) / resampled.sum())
    return estimate, np.std(replicates, axis=0, ddof=1)


def _random_rotations(dim, trials, rng):
    if dim == 3:
        return Rotation.random(trials, random_state=rng).as_matrix()
    angle = rng.uniform(0.0, 2.0 * np.pi, size=trials)
    cos, sin = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)


def brute_force_best_rotation(x, y, trials, rng):
    """Returns the best of `trials` uniform rotations (and the identity) by ||g x - y||."""
    if trials < 1:
        raise OracleInputError("Need at least one trial. Got: %r" % trials)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dim = x.shape[-1]
    candidates = np.concatenate([np.eye(dim)[None], _random_rotations(dim, trials, rng)])
    rotated = np.einsum("kij,nj->kni", candidates, x)
    residuals = np.sqrt(np.sum((rotated - y) ** 2, axis=(1, 2)))
    best = int(np.argmin(residuals))
    return candidates[best], float(residuals[best])


def energy_distance(a, b):
    """Returns the (V-statistic) energy distance 2E|a-b| - E|a-a'| - E|b-b'|.

    Sample sets are compared over flattened coordinates; pass descriptor
    arrays to compare shapes.
    """
    a, b = _as_rows(a), _as_rows(b)
    if a.shape[1] != b.shape[1]:
        raise OracleInputError(
            "Cannot compare samples of width %d and %d" % (a.shape[1], b.shape[1]))
    return float(
        2.0 * distance.cdist(a, b).mean()
        - distance.cdist(a, a).mean() - distance.cdist(b, b).mean())


@dataclasses.dataclass
class PermutationResult:
    statistic: float
    null: np.ndarray

    def quantile(self, q):
        return float(np.quantile(self.null, q))

    @property
    def p_value(self):
        return float((1 + np.sum(self.null >= self.statistic)) / (1 + len(self.null)))


def energy_permutation_test(a, b, n_permutations=DEFAULT_PERMUTATIONS, rng=None):
    """Returns the energy distance of (a, b) and its label-permutation null."""
    a, b = _as_rows(a), _as_rows(b)
    rng = rng if rng is not None else np.random.default_rng()
    pooled = np.concatenate([a, b])
    pairwise = distance.squareform(distance.pdist(pooled))
    labels = np.concatenate([np.full(len(a), 1.0 / len(a)), np.full(len(b), -1.0 / len(b))])

    def statistic(signs):
        return -float(signs @ pairwise @ signs)

    null = np.array([statistic(rng.permutation(labels)) for _ in range(n_permutations)])
    return PermutationResult(statistic=statistic(labels), null=null)


def ks_statistic(a, b):
    """Returns sup |F_a - F_b| of the two empirical CDFs."""
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    if not len(a) or not len(b):
        raise OracleInputError("KS statistic needs two nonempty samples.")
    return float(stats.ks_2samp(a, b).statistic)


def shape_descriptor(x):
    """Returns the ascending pairwise distances of a cloud, or of each cloud in a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-2] < 2:
        raise OracleInputError("Shape descriptors need at least two points.")
    if x.ndim == 2:
        return np.sort(distance.pdist(x))
    flat = x.reshape((-1,) + x.shape[-2:])
    descriptors = np.stack([np.sort(distance.pdist(cloud)) for cloud in flat])
    return descriptors.reshape(x.shape[:-2] + descriptors.shape[-1:])


def _step_rotations(previous, current):
    """Returns the rotations best mapping each `current` cloud onto `previous`.

    Both arguments have shape (B, N, d). Also returns a per-cloud flag for
    frames whose optimal rotation is not unique.
    """
    previous, current = _center_points(previous), _center_points(current)
    if previous.shape[-1] == 2:
        cross = np.sum(current[..., 0] * previous[..., 1] - current[..., 1] * previous[..., 0],
                       axis=-1)
        dot = np.sum(current * previous, axis=(-2, -1))
        angles = np.arctan2(cross, dot)
        rotvecs = np.zeros((len(angles), 3))
        rotvecs[:, 2] = angles
        return Rotation.from_rotvec(rotvecs), (cross == 0) & (dot == 0)
    covariance = np.swapaxes(current, -1, -2) @ previous
    u, _, vt = np.linalg.svd(covariance)
    v, ut = np.swapaxes(vt, -1, -2), np.swapaxes(u, -1, -2)
    signs = np.sign(np.linalg.det(v @ ut))
    signs[signs == 0] = 1.0
    fix = np.ones((len(signs), 3))
    fix[:, -1] = signs
    matrices = (v * fix[:, None, :]) @ ut
    spread = np.linalg.svd(current, compute_uv=False)
    scale = np.maximum(np.abs(current).max(axis=(-2, -1)), 1.0)
    return Rotation.from_matrix(matrices), spread[:, 1] <= 1e-9 * scale


def orientation_drift(trajectory):
    """Returns the rotation angle a trajectory accumulates from its first to its last state.

    Consecutive states are optimally aligned and the step rotations composed,
    so shape changes along the way do not count as rotation; with two states
    this is the optimal-alignment angle between them.

    Accepts a trajectory object with `states`, or a stacked array (S, N, d) /
    (S, B, N, d). Returns a float for one trajectory, an array for a batch.
    """
    states = np.asarray(getattr(trajectory, "states", trajectory), dtype=float)
    if len(states) < 2:
        raise OracleInputError("A trajectory needs at least two states.")
    single = states.ndim == 3
    if single:
        states = states[:, None]
    total, flagged = None, np.zeros(states.shape[1], dtype=bool)
    for previous, current in zip(states[:-1], states[1:]):
        rotation, degenerate = _step_rotations(previous, current)
        total = rotation if total is None else total * rotation
        flagged |= degenerate
    if np.any(flagged):
        logger.warning(
            "Orientation drift measured through %d degenerate frame(s)", int(flagged.sum()))
    angles = np.asarray(total.magnitude(), dtype=float)
    return float(angles[0]) if single else angles
