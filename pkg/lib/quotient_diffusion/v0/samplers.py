# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining the Euler / Euler-Maruyama samplers.

Conventional samplers integrate the learned velocity (and, for SDEs, the
score plus white noise) in the total space M. Quotient samplers simulate the
horizontal lift of the quotient-space process instead: drift and noise are
projected with P_x, and the SDE carries the extra drift -gamma eta_t h(x)
where h is the lifted mean curvature. The curvature term only appears in SDE
mode; it vanishes with the diffusion coefficient.
"""

import dataclasses
import logging

import numpy as np

from quotient_diffusion.v0 import interpolant_schedule, objectives, symmetry_geometry

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 4

logger = logging.getLogger(__name__)

MODE_ODE = "ode"
MODE_SDE = "sde"
VALID_MODES = (MODE_ODE, MODE_SDE)

VARIANT_CONVENTIONAL = "conventional"
VARIANT_QUOTIENT = "quotient"
VALID_VARIANTS = (VARIANT_CONVENTIONAL, VARIANT_QUOTIENT)

DEFAULT_NOISE_SCALE = 0.35
DEFAULT_STOCHASTIC_CUTOFF = 1e-3


@dataclasses.dataclass
class SamplerConfig:
    """Integration settings.

    `eta` is either a constant or a callable t -> eta_t >= 0; `grid`, when
    given, overrides the uniform grid of `steps` intervals.
    """

    mode: str = MODE_ODE
    variant: str = VARIANT_QUOTIENT
    steps: int = 200
    noise_scale: float = DEFAULT_NOISE_SCALE
    eta: object = 1.0
    seed: int = 0
    cutoff: float = DEFAULT_STOCHASTIC_CUTOFF
    curvature: bool = True
    n_samples: int = 1000
    keep_states: bool = True
    grid: object = None

    def __post_init__(self):
        if self.mode not in VALID_MODES:
            raise ValueError("Invalid sampler mode '%s'. Valid modes are: %s" % (
                self.mode, VALID_MODES))
        if self.variant not in VALID_VARIANTS:
            raise ValueError("Invalid sampler variant '%s'. Valid variants are: %s" % (
                self.variant, VALID_VARIANTS))
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("Number of steps must be a positive integer. Got: %r" % self.steps)
        if self.noise_scale < 0:
            raise ValueError("Noise scale must be >= 0. Got: %r" % self.noise_scale)
        if not 0.0 < self.cutoff <= 0.1:
            raise ValueError("Stochastic cutoff must lie in (0, 0.1]. Got: %r" % self.cutoff)
        if self.n_samples < 1:
            raise ValueError("Number of samples must be positive. Got: %r" % self.n_samples)
        if self.grid is not None:
            grid = np.asarray(self.grid, dtype=float)
            if (grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or grid[-1] != 1.0
                    or np.any(np.diff(grid) <= 0)):
                raise ValueError(
                    "Time grid must increase strictly from exactly 0 to exactly 1.")
            self.grid = grid
            self.steps = len(grid) - 1

    def time_grid(self):
        if self.grid is not None:
            return self.grid.copy()
        return np.linspace(0.0, 1.0, int(self.steps) + 1)

    def eta_at(self, t):
        value = self.eta(t) if callable(self.eta) else self.eta
        value = float(value)
        if value < 0:
            raise ValueError("eta(t) must be >= 0. Got: %r at t=%g" % (value, t))
        return value

    def diffusion_strength(self, t):
        """Returns gamma * eta_t, or zero past the stochastic cutoff or in ODE mode."""
        if self.mode == MODE_ODE or t >= 1.0 - self.cutoff:
            return 0.0
        return self.noise_scale * self.eta_at(t)


@dataclasses.dataclass
class Trajectory:
    """States on the time grid plus per-step diagnostics of shape (K, B).

    When states were not kept, `states` holds only the first and last grid
    states. `clamped_steps` counts the steps whose alpha_hat was floored in
    the velocity or score conversion.
    """

    times: np.ndarray
    states: np.ndarray
    step_norm: np.ndarray = None
    vertical_norm: np.ndarray = None
    ang_mom_norm: np.ndarray = None
    frame_rot_angle: np.ndarray = None
    variant: str = None
    mode: str = None
    clamped_steps: int = 0

    @property
    def initial(self):
        return self.states[0]

    @property
    def final(self):
        return self.states[-1]

    @property
    def has_all_states(self):
        return len(self.states) == len(self.times)


def _velocity_and_denoised(model, schedule, x, t):
    denoised = model.forward(x, t)
    return interpolant_schedule.velocity_from_denoiser(schedule, denoised, x, t), denoised


def _check_dt(dt):
    if not dt > 0:
        raise ValueError("Step size must be positive. Got: %r" % dt)


def ode_step(variant, space, model, schedule, x, t, dt):
    """Returns one Euler step x + v dt, or x + P_x(v) dt in quotient mode.

    Raises:
        DegenerateCloudError: if x is degenerate in quotient mode.
    """
    _check_dt(dt)
    velocity, _ = _velocity_and_denoised(model, schedule, x, t)
    if variant == VARIANT_QUOTIENT:
        velocity = space.horizontal_project(x, velocity)
    return space.center(x + dt * velocity)


def sde_step(variant, space, model, schedule, config, x, t, dt, rng):
    """Returns one Euler-Maruyama step.

    Conventional: x + (v + g s) dt + sqrt(2 g dt) xi.
    Quotient: x + [P(v + g s) - g h(x)] dt + sqrt(2 g dt) P(xi), with
    g = gamma eta_t and xi standard normal on M. Past the stochastic cutoff
    (and for g = 0) this is exactly `ode_step`, and no noise is drawn.
    """
    _check_dt(dt)
    strength = config.diffusion_strength(t)
    if strength == 0.0:
        return ode_step(variant, space, model, schedule, x, t, dt)
    velocity, denoised = _velocity_and_denoised(model, schedule, x, t)
    score = interpolant_schedule.score_from_denoiser(schedule, denoised, x, t)
    drift = velocity + strength * score
    noise = space.center(rng.standard_normal(np.shape(x)))
    if variant == VARIANT_QUOTIENT:
        drift = space.horizontal_project(x, drift)
        if config.curvature:
            drift = drift - strength * space.mean_curvature(x)
        noise = space.horizontal_project(x, noise)
    return space.center(x + dt * drift + np.sqrt(2.0 * strength * dt) * noise)


def _flat_norm(v):
    return np.linalg.norm(v.reshape(v.shape[0], -1), axis=1)


def _step_diagnostics(space, x, x_next):
    step = x_next - x
    vertical = np.zeros(len(x))
    keep = ~space.degenerate_mask(x)
    if np.any(keep):
        vertical[keep] = _flat_norm(space.vertical_component(x[keep], step[keep]))
    momentum = np.asarray(space.angular_momentum(x, step))
    rotation, _ = objectives.kabsch_rotation(x_next, x)
    return (
        _flat_norm(step), vertical, _flat_norm(momentum.reshape(len(x), -1)),
        symmetry_geometry.rotation_angle(rotation))


def sample(config, space, model, schedule, x0=None):
    """Integrates a batch of clouds from t = 0 to t = 1.

    Args:
        config: `SamplerConfig`.
        space: the symmetry space.
        model: denoiser D(x_t, t).
        schedule: the interpolant schedule.
        x0: optional starting clouds (B, N, d); otherwise `config.n_samples`
            draws of standard normal noise on M.

    Returns:
        `Trajectory`; its final state is the generated sample.
    """
    rng = np.random.default_rng(config.seed)
    if x0 is None:
        x0 = space.sample_noise(rng, config.n_samples)
    x = space.center(np.asarray(x0, dtype=float))
    if x.ndim == 2:
        x = x[None]
    grid = config.time_grid()
    steps = len(grid) - 1
    logger.debug(
        "Sampling %d cloud(s): %s %s, %d steps, gamma %g, curvature %s, seed %d",
        len(x), config.variant, config.mode, steps, config.noise_scale,
        config.curvature, config.seed)

    states = [x]
    diagnostics = np.zeros((4, steps, len(x)))
    alpha_hat, _, _, _ = schedule.coeffs(grid[:-1])
    clamped = int(np.sum(alpha_hat < interpolant_schedule.ALPHA_HAT_FLOOR))
    if clamped:
        logger.info(
            "%d of %d sampler step(s) evaluate alpha_hat below the floor %g",
            clamped, steps, interpolant_schedule.ALPHA_HAT_FLOOR)
    for index in range(steps):
        t, dt = grid[index], grid[index + 1] - grid[index]
        if config.mode == MODE_ODE:
            x_next = ode_step(config.variant, space, model, schedule, x, t, dt)
        else:
            x_next = sde_step(config.variant, space, model, schedule, config, x, t, dt, rng)
        for row, values in enumerate(_step_diagnostics(space, x, x_next)):
            diagnostics[row, index] = values
        if config.keep_states:
            states.append(x_next)
        x = x_next
    if not config.keep_states:
        states.append(x)
    if not np.all(np.isfinite(x)):
        logger.warning("Sampler produced non-finite states (%s %s)", config.variant, config.mode)
    return Trajectory(
        times=grid, states=np.stack(states), step_norm=diagnostics[0],
        vertical_norm=diagnostics[1], ang_mom_norm=diagnostics[2],
        frame_rot_angle=diagnostics[3], variant=config.variant, mode=config.mode,
        clamped_steps=clamped)


def trajectory_length(trajectory):
    """Returns sum_i ||x_{t_{i+1}} - x_{t_i}|| per trajectory in the batch.

    Accepts a `Trajectory` or a stacked array of states (S, ..., N, d).
    """
    if isinstance(trajectory, Trajectory) and not trajectory.has_all_states:
        return trajectory.step_norm.sum(axis=0)
    states = trajectory.states if isinstance(trajectory, Trajectory) else trajectory
    states = np.asarray(states, dtype=float)
    if len(states) < 2:
        raise ValueError("A trajectory needs at least two states.")
    increments = np.diff(states, axis=0)
    return np.sqrt(np.einsum("...ni,...ni->...", increments, increments)).sum(axis=0)
