# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining stochastic-interpolant schedules and the denoiser conversions.

The one-sided interpolant is ``x_t = alpha_hat(t) eps + beta(t) x1``. A
denoiser `D(x_t, t)` predicting `x1` determines both the velocity and the
score of the interpolant through affine formulas, implemented here with a
floor on `alpha_hat` so that neither blows up at t = 1.

Times may be scalars or arrays over the batch axis; array-valued
coefficients are broadcast against clouds of shape (B, N, d).
"""

import abc
import logging

import numpy as np

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 2

logger = logging.getLogger(__name__)

ALPHA_HAT_FLOOR = 1e-4
SCHEDULE_LINEAR_ONE_SIDED = "linear-one-sided"
SCHEDULE_GENERAL_BRIDGE = "general-bridge"


class TimeRangeError(ValueError):
    """Raised when a time lies outside [0, 1]."""


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if not np.all((t >= 0.0) & (t <= 1.0)):
        raise TimeRangeError("Interpolant time must lie in [0, 1]. Got: %s" % (t,))
    return t


def broadcast_coefficient(coefficient, x):
    """Broadcasts a scalar or per-sample coefficient against clouds (..., N, d)."""
    coefficient = np.asarray(coefficient, dtype=float)
    if coefficient.ndim == 0:
        return coefficient
    return coefficient.reshape(coefficient.shape + (1,) * (np.ndim(x) - coefficient.ndim))


class Schedule(abc.ABC):
    """Base class for interpolant coefficient schedules.

    Every schedule exposes its general (alpha, beta, gamma) form and the
    one-sided (alpha_hat, beta) form obtained by merging the prior and noise
    contributions, alpha_hat = sqrt(alpha^2 + gamma^2).
    """

    kind = None
    name = None

    @abc.abstractmethod
    def general_coeffs(self, t):
        """Returns (alpha, beta, gamma, alpha', beta', gamma') at t."""
        raise NotImplementedError("No general coefficients defined.")

    @abc.abstractmethod
    def coeffs(self, t):
        """Returns (alpha_hat, beta, alpha_hat', beta') at t."""
        raise NotImplementedError("No one-sided coefficients defined.")

    def denominator(self, t):
        """Returns d(t) = alpha_hat' beta - alpha_hat beta'."""
        alpha_hat, beta, d_alpha_hat, d_beta = self.coeffs(t)
        return d_alpha_hat * beta - alpha_hat * d_beta

    def weight(self, t):
        """Returns the training weight w(t); constant one."""
        return np.ones_like(np.asarray(t, dtype=float))

    def sample_time(self, rng, size):
        """Draws training times from p(t) = Uniform(0, 1)."""
        return rng.uniform(0.0, 1.0, size=size)

    def __repr__(self):
        return "%s()" % type(self).__name__


class LinearOneSidedSchedule(Schedule):
    """alpha_hat = 1 - t, beta = t: the velocity reduces to the rectified-flow one."""

    kind = "one_sided"
    name = SCHEDULE_LINEAR_ONE_SIDED

    def coeffs(self, t):
        t = _check_time(t)
        return 1.0 - t, t, -np.ones_like(t), np.ones_like(t)

    def general_coeffs(self, t):
        alpha_hat, beta, d_alpha_hat, d_beta = self.coeffs(t)
        zero = np.zeros_like(alpha_hat)
        return alpha_hat, beta, zero, d_alpha_hat, d_beta, zero


class GeneralBridgeSchedule(Schedule):
    """alpha = 1 - t, beta = t, gamma = a t (1 - t) with configurable `a`."""

    kind = "general"
    name = SCHEDULE_GENERAL_BRIDGE

    def __init__(self, bridge_scale=1.0):
        if bridge_scale < 0:
            raise ValueError("Bridge scale must be non-negative. Got: %r" % bridge_scale)
        self.bridge_scale = float(bridge_scale)

    def __repr__(self):
        return "%s(bridge_scale=%r)" % (type(self).__name__, self.bridge_scale)

    def general_coeffs(self, t):
        t = _check_time(t)
        a = self.bridge_scale
        return (
            1.0 - t, t, a * t * (1.0 - t),
            -np.ones_like(t), np.ones_like(t), a * (1.0 - 2.0 * t))

    def coeffs(self, t):
        t = _check_time(t)
        a = self.bridge_scale
        root = np.sqrt(1.0 + (a * t) ** 2)
        alpha_hat = (1.0 - t) * root
        d_alpha_hat = -root + (1.0 - t) * a * a * t / root
        return alpha_hat, t, d_alpha_hat, np.ones_like(t)


def make_schedule(name, bridge_scale=1.0):
    """Builds a schedule from its config name."""
    if name == SCHEDULE_LINEAR_ONE_SIDED:
        return LinearOneSidedSchedule()
    if name == SCHEDULE_GENERAL_BRIDGE:
        return GeneralBridgeSchedule(bridge_scale)
    raise ValueError(
        "Unknown schedule '%s'. Valid schedules are: %s" % (
            name, [SCHEDULE_LINEAR_ONE_SIDED, SCHEDULE_GENERAL_BRIDGE]))


def coeffs(schedule, t):
    """Returns (alpha_hat, beta, alpha_hat', beta') of `schedule` at t."""
    return schedule.coeffs(t)


def interpolate(schedule, noise, x1, t):
    """Returns x_t = alpha_hat(t) noise + beta(t) x1."""
    noise = np.asarray(noise, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if noise.shape != x1.shape:
        raise ValueError(
            "Noise of shape %s does not match target of shape %s" % (noise.shape, x1.shape))
    alpha_hat, beta, _, _ = schedule.coeffs(t)
    return broadcast_coefficient(alpha_hat, x1) * noise + broadcast_coefficient(beta, x1) * x1


def interpolate_general(schedule, x0, x1, eps, t):
    """Returns x_t = alpha x0 + beta x1 + gamma eps."""
    alpha, beta, gamma, _, _, _ = schedule.general_coeffs(t)
    x1 = np.asarray(x1, dtype=float)
    return (
        broadcast_coefficient(alpha, x1) * x0
        + broadcast_coefficient(beta, x1) * x1
        + broadcast_coefficient(gamma, x1) * eps
    )


def target_velocity(schedule, x0, x1, eps, t):
    """Returns the interpolant derivative alpha' x0 + beta' x1 + gamma' eps."""
    _, _, _, d_alpha, d_beta, d_gamma = schedule.general_coeffs(t)
    x1 = np.asarray(x1, dtype=float)
    return (
        broadcast_coefficient(d_alpha, x1) * x0
        + broadcast_coefficient(d_beta, x1) * x1
        + broadcast_coefficient(d_gamma, x1) * eps
    )


def clamped_alpha_hat(alpha_hat, floor=ALPHA_HAT_FLOOR):
    """Floors alpha_hat; hitting the floor is logged at debug level."""
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if np.any(alpha_hat < floor):
        logger.debug(
            "alpha_hat below %g (min %g); clamping the conversion denominator",
            floor, float(np.min(alpha_hat)))
        alpha_hat = np.maximum(alpha_hat, floor)
    return alpha_hat


def velocity_scale(schedule, t):
    """Returns (x_t coefficient, D coefficient) of the velocity, each per sample.

    v = (alpha_hat' x_t - d(t) D) / alpha_hat, with alpha_hat floored.
    """
    alpha_hat, beta, d_alpha_hat, d_beta = schedule.coeffs(t)
    denominator = d_alpha_hat * beta - alpha_hat * d_beta
    alpha_hat = clamped_alpha_hat(alpha_hat)
    return d_alpha_hat / alpha_hat, -denominator / alpha_hat


def velocity_from_denoiser(schedule, d_val, x_t, t):
    """Returns v = (alpha_hat' x_t - (alpha_hat' beta - alpha_hat beta') D) / alpha_hat."""
    x_t = np.asarray(x_t, dtype=float)
    x_coefficient, d_coefficient = velocity_scale(schedule, t)
    return (
        broadcast_coefficient(x_coefficient, x_t) * x_t
        + broadcast_coefficient(d_coefficient, x_t) * np.asarray(d_val)
    )


def score_from_denoiser(schedule, d_val, x_t, t):
    """Returns s = -(x_t - beta D) / alpha_hat^2."""
    x_t = np.asarray(x_t, dtype=float)
    alpha_hat, beta, _, _ = schedule.coeffs(t)
    alpha_hat = clamped_alpha_hat(alpha_hat)
    residual = x_t - broadcast_coefficient(beta, x_t) * np.asarray(d_val)
    return -residual / broadcast_coefficient(alpha_hat ** 2, x_t)


def score_from_velocity(schedule, v_val, x_t, t):
    """Returns s = (beta' x_t - beta v) / (alpha_hat (alpha_hat' beta - alpha_hat beta'))."""
    x_t = np.asarray(x_t, dtype=float)
    alpha_hat, beta, d_alpha_hat, d_beta = schedule.coeffs(t)
    denominator = d_alpha_hat * beta - alpha_hat * d_beta
    alpha_hat = clamped_alpha_hat(alpha_hat)
    numerator = (
        broadcast_coefficient(d_beta, x_t) * x_t
        - broadcast_coefficient(beta, x_t) * np.asarray(v_val)
    )
    return numerator / broadcast_coefficient(alpha_hat * denominator, x_t)
