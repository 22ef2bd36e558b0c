# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining the training objectives and the training loop.

Four strategies for learning a denoiser under rotation symmetry are offered:
* conventional: regress D(x_t, t) onto x1.
* geodiff_align: regress onto x1 rotated towards x_t.
* af3_align: regress onto x1 rotated towards the (gradient-free) prediction.
* quotient: regress only the horizontal part of D(x_t, t) - x1.

All losses share the time factor w(t) (d(t) / alpha_hat(t))^2 and
return the gradient of the batch-mean loss with respect to the MLP
parameters when the denoiser is trainable.
"""

import dataclasses
import enum
import logging

import numpy as np
from scipy import linalg

from quotient_diffusion.v0 import denoiser as denoiser_lib
from quotient_diffusion.v0 import interpolant_schedule

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 6

logger = logging.getLogger(__name__)

DEFAULT_KABSCH_EPS = 1e-8


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class LossVariant(enum.Enum):
    """The training strategies compared in this library."""

    CONVENTIONAL = "conventional"
    GEODIFF_ALIGN = "geodiff_align"
    AF3_ALIGN = "af3_align"
    QUOTIENT = "quotient"


@dataclasses.dataclass
class Batch:
    """Training triples (x1, noise, t), plus x0 for general-prior schedules."""

    x1: np.ndarray
    noise: np.ndarray
    t: np.ndarray
    x0: np.ndarray = None

    def __post_init__(self):
        self.x1 = np.asarray(self.x1, dtype=float)
        self.noise = np.asarray(self.noise, dtype=float)
        self.t = np.broadcast_to(np.asarray(self.t, dtype=float), (len(self.x1),)).copy()
        if self.x1.ndim != 3 or self.noise.shape != self.x1.shape:
            raise ValueError(
                "Batch clouds must share one (B, N, d) shape. Got: %s and %s" % (
                    self.x1.shape, self.noise.shape))
        if not len(self.x1):
            raise ValueError("Empty batch.")

    def __len__(self):
        return len(self.x1)


@dataclasses.dataclass
class LossResult:
    value: float
    grads: object = None
    per_sample: np.ndarray = None
    skipped: int = 0


def kabsch_rotation(x, y, eps=DEFAULT_KABSCH_EPS):
    """Returns the proper rotation R minimizing ||R x - y|| and a degeneracy flag.

    Uses the SVD of H = sum_n y_n x_n^T with a determinant sign correction so
    the result stays in SO(d). When H has rank < d - 1 the optimum is not
    unique; the SVD's singular-vector convention picks one deterministically
    and the flag is raised.

    Args:
        x: centered cloud(s) of shape (..., N, d) to rotate.
        y: centered reference cloud(s), broadcastable against x.
        eps: relative singular-value threshold for the degeneracy flag.

    Returns:
        Tuple of (rotations of shape (..., d, d), boolean flags of shape (...)).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-2:] != y.shape[-2:]:
        raise ValueError("Cannot align clouds of shapes %s and %s" % (x.shape, y.shape))
    h = np.einsum("...ni,...nj->...ij", y, x)
    u, singular, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(u @ vt))
    sign = np.where(sign == 0, 1.0, sign)
    correction = np.ones(singular.shape)
    correction[..., -1] = sign
    rotation = (u * correction[..., None, :]) @ vt
    dim = x.shape[-1]
    scale = np.maximum(singular[..., 0], np.finfo(float).tiny)
    degenerate = singular[..., max(dim - 2, 0)] <= eps * scale
    if dim == 2:
        degenerate = singular[..., 0] <= np.finfo(float).tiny
    return rotation, degenerate


def kabsch_align(x, y, eps=DEFAULT_KABSCH_EPS):
    """Returns A_y(x): the rotated copy of x closest to y."""
    rotation, degenerate = kabsch_rotation(x, y, eps)
    if np.any(degenerate):
        logger.debug(
            "%d alignment(s) with rank-deficient cross-covariance; using the "
            "deterministic SVD convention", int(np.sum(degenerate)))
    return np.einsum("...ij,...nj->...ni", rotation, np.asarray(x, dtype=float))


def kabsch_rotation_polar(x, y):
    """Returns the polar-form optimum H (H^T H)^(-1/2) for non-singular H.

    Only valid when det H > 0; kept as a cross-check of `kabsch_rotation`.
    """
    h = np.einsum("ni,nj->ij", np.asarray(y, dtype=float), np.asarray(x, dtype=float))
    root = np.real(linalg.sqrtm(h.T @ h))
    return h @ np.linalg.inv(root)


def training_weight(schedule, t, weight_cap=None):
    """Returns w(t): the schedule weight, optionally capping w (d / alpha_hat)^2."""
    weight = schedule.weight(t)
    if weight_cap is None:
        return weight
    with np.errstate(divide="ignore"):
        return weight * np.minimum(1.0, weight_cap / time_factor(schedule, t))


def time_factor(schedule, t):
    """Returns (d(t) / alpha_hat(t))^2 with alpha_hat floored."""
    alpha_hat, _, _, _ = schedule.coeffs(t)
    alpha_hat = interpolant_schedule.clamped_alpha_hat(alpha_hat)
    return (schedule.denominator(t) / alpha_hat) ** 2


def _flat_norm_squared(v):
    return np.einsum("bni,bni->b", v, v)


def _finish(model, x_t, t, residual, factor, keep=None, space=None):
    """Reduces per-sample residuals to the batch-mean loss and its gradient.

    `residual` has already been projected when `space` is given; the
    gradient of ||P r||^2 is 2 P^T P r = 2 P(P r) since P is symmetric.
    """
    if keep is None:
        keep = np.ones(len(residual), dtype=bool)
    count = int(np.sum(keep))
    if not count:
        raise ValueError("Every sample of the batch was skipped.")
    per_sample = np.zeros(len(residual))
    per_sample[keep] = factor[keep] * _flat_norm_squared(residual[keep])
    value = float(per_sample.sum() / count)
    grads = None
    if getattr(model, "trainable", False):
        direction = np.zeros_like(residual)
        if space is not None:
            direction[keep] = space.horizontal_project(x_t[keep], residual[keep])
        else:
            direction[keep] = residual[keep]
        upstream = (2.0 / count) * factor[:, None, None] * direction
        grads = model.backward(x_t, t, upstream)
    return LossResult(
        value=value, grads=grads, per_sample=per_sample, skipped=len(residual) - count)


def _predict(model, batch, schedule):
    x_t = interpolant_schedule.interpolate(schedule, batch.noise, batch.x1, batch.t)
    return x_t, model.forward(x_t, batch.t)


def _factor(schedule, t, weight_cap):
    return training_weight(schedule, t, weight_cap) * time_factor(schedule, t)


def loss_conventional(model, batch, schedule, weight_cap=None):
    """Returns mean of w (d / alpha_hat)^2 ||D(x_t, t) - x1||^2 and its gradient."""
    x_t, prediction = _predict(model, batch, schedule)
    factor = _factor(schedule, batch.t, weight_cap)
    return _finish(model, x_t, batch.t, prediction - batch.x1, factor)


def loss_geodiff(model, batch, schedule, weight_cap=None, eps=DEFAULT_KABSCH_EPS):
    """Conventional loss with x1 aligned onto x_t before regression."""
    x_t, prediction = _predict(model, batch, schedule)
    target = kabsch_align(batch.x1, x_t, eps)
    factor = _factor(schedule, batch.t, weight_cap)
    return _finish(model, x_t, batch.t, prediction - target, factor)


def loss_af3(model, batch, schedule, weight_cap=None, eps=DEFAULT_KABSCH_EPS):
    """Conventional loss with x1 aligned onto the prediction.

    The alignment reference is the prediction of the same forward pass and is
    treated as a constant: no gradient flows through the alignment.
    """
    x_t, prediction = _predict(model, batch, schedule)
    target = kabsch_align(batch.x1, prediction, eps)
    factor = _factor(schedule, batch.t, weight_cap)
    return _finish(model, x_t, batch.t, prediction - target, factor)


def loss_quotient(model, batch, schedule, weight_cap=None):
    """Returns mean of w (d / alpha_hat)^2 ||P_{x_t}(D(x_t, t) - x1)||^2.

    Samples whose x_t is degenerate are skipped and counted in the result.
    """
    space = model.space
    x_t, prediction = _predict(model, batch, schedule)
    keep = ~space.degenerate_mask(x_t)
    if not np.all(keep):
        logger.debug("Skipping %d degenerate sample(s) in the quotient loss", int(np.sum(~keep)))
    residual = np.zeros_like(prediction)
    residual[keep] = space.horizontal_project(x_t[keep], (prediction - batch.x1)[keep])
    factor = _factor(schedule, batch.t, weight_cap)
    return _finish(model, x_t, batch.t, residual, factor, keep=keep, space=space)


def loss_quotient_general(v_model, batch, schedule, weight_cap=None, project=True):
    """Velocity-matching loss for general priors.

    Returns mean of w(t) ||P_{x_t}(v(x_t, t) - (alpha' x0 + beta' x1 + gamma' eps))||^2,
    with `batch.noise` playing the role of eps. With `project=False` the
    plain (conventional) velocity loss is returned.
    """
    if batch.x0 is None:
        raise ValueError("The general objective needs prior samples x0 in the batch.")
    space = v_model.space
    x_t = interpolant_schedule.interpolate_general(
        schedule, batch.x0, batch.x1, batch.noise, batch.t)
    target = interpolant_schedule.target_velocity(
        schedule, batch.x0, batch.x1, batch.noise, batch.t)
    residual = v_model.forward(x_t, batch.t) - target
    factor = training_weight(schedule, batch.t, weight_cap)
    if not project:
        return _finish(v_model, x_t, batch.t, residual, factor)
    keep = ~space.degenerate_mask(x_t)
    projected = np.zeros_like(residual)
    projected[keep] = space.horizontal_project(x_t[keep], residual[keep])
    return _finish(v_model, x_t, batch.t, projected, factor, keep=keep, space=space)


LOSS_FUNCTIONS = {
    LossVariant.CONVENTIONAL: loss_conventional,
    LossVariant.GEODIFF_ALIGN: loss_geodiff,
    LossVariant.AF3_ALIGN: loss_af3,
    LossVariant.QUOTIENT: loss_quotient,
}


def sample_batch(data_sampler, schedule, space, batch_size, rng, augment=False):
    """Draws one training batch.

    Args:
        data_sampler: callable (rng, n) -> n target clouds.
        schedule: the interpolant schedule; general schedules also get x0.
        space: the symmetry space.
        batch_size: number of samples.
        rng: `numpy.random.Generator`.
        augment: rotate every target by an independent uniform rotation.
    """
    x1 = space.center(data_sampler(rng, batch_size))
    if augment:
        x1 = space.apply_group(space.random_rotation(rng, batch_size), x1)
    noise = space.sample_noise(rng, batch_size)
    t = schedule.sample_time(rng, batch_size)
    x0 = space.sample_noise(rng, batch_size) if schedule.kind == "general" else None
    return Batch(x1=x1, noise=noise, t=t, x0=x0)


class MomentumSGD:
    """Plain SGD with heavy-ball momentum, updating parameters in place."""

    def __init__(self, learning_rate, momentum=0.9):
        if not learning_rate > 0:
            raise ValueError("Learning rate must be positive. Got: %r" % learning_rate)
        if not 0.0 <= momentum < 1.0:
            raise ValueError("Momentum must lie in [0, 1). Got: %r" % momentum)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity = None

    def step(self, params, grads):
        arrays, gradients = params.arrays(), grads.arrays()
        if self._velocity is None:
            self._velocity = [np.zeros_like(a) for a in arrays]
        for array, gradient, velocity in zip(arrays, gradients, self._velocity):
            velocity *= self.momentum
            velocity -= self.learning_rate * gradient
            array += velocity


class Adam:
    """Adam with bias-corrected moment estimates, updating parameters in place."""

    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        if not learning_rate > 0:
            raise ValueError("Learning rate must be positive. Got: %r" % learning_rate)
        for name, value in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= value < 1.0:
                raise ValueError("'%s' must lie in [0, 1). Got: %r" % (name, value))
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._moments = None
        self._count = 0

    def step(self, params, grads):
        arrays, gradients = params.arrays(), grads.arrays()
        if self._moments is None:
            self._moments = [(np.zeros_like(a), np.zeros_like(a)) for a in arrays]
        self._count += 1
        first_correction = 1.0 - self.beta1 ** self._count
        second_correction = 1.0 - self.beta2 ** self._count
        for array, gradient, (first, second) in zip(arrays, gradients, self._moments):
            first *= self.beta1
            first += (1.0 - self.beta1) * gradient
            second *= self.beta2
            second += (1.0 - self.beta2) * gradient ** 2
            array -= self.learning_rate * (first / first_correction) / (
                np.sqrt(second / second_correction) + self.eps)


OPTIMIZERS = ("momentum", "adam")


def make_optimizer(config):
    if config.optimizer == "adam":
        return Adam(config.learning_rate)
    return MomentumSGD(config.learning_rate, config.momentum)


@dataclasses.dataclass
class TrainConfig:
    """Training hyperparameters; p(t) is uniform."""

    loss: str = LossVariant.QUOTIENT.value
    epochs: int = 20
    steps_per_epoch: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    augment_rotations: bool = True
    weight_cap: float = 100.0
    hidden: tuple = denoiser_lib.DEFAULT_HIDDEN_WIDTHS
    n_frequencies: int = denoiser_lib.DEFAULT_N_FREQUENCIES
    activation: str = "tanh"
    parametrization: str = denoiser_lib.PARAMETRIZATION_DIRECT
    optimizer: str = "momentum"
    track_equivariance: bool = True

    def __post_init__(self):
        LossVariant(self.loss)
        for name, valid in (
                ("activation", sorted(denoiser_lib.ACTIVATIONS)),
                ("parametrization", list(denoiser_lib.PARAMETRIZATIONS)),
                ("optimizer", list(OPTIMIZERS))):
            if getattr(self, name) not in valid:
                raise ValueError("Unknown %s '%s'. Valid values are: %s" % (
                    name, getattr(self, name), valid))
        self.hidden = tuple(int(width) for width in self.hidden)
        if self.epochs < 0:
            raise ValueError("Number of epochs must be >= 0. Got: %r" % self.epochs)
        for name in ("steps_per_epoch", "batch_size", "learning_rate", "weight_cap"):
            if not getattr(self, name) > 0:
                raise ValueError("'%s' must be positive. Got: %r" % (name, getattr(self, name)))

    @property
    def variant(self):
        return LossVariant(self.loss)

    def check_schedule(self, schedule):
        """Raises ValueError if the loss cannot train under `schedule`."""
        if schedule.kind == "general" and self.variant not in (
                LossVariant.QUOTIENT, LossVariant.CONVENTIONAL):
            raise ValueError(
                "Loss '%s' needs the one-sided schedule; general priors train with "
                "'quotient' or 'conventional'." % self.loss)


@dataclasses.dataclass
class TrainResult:
    params: denoiser_lib.DenoiserParams
    losses: list
    equivariance: list
    skipped: int = 0


def _select_objective(config, schedule):
    variant = config.variant
    if schedule.kind != "general":
        loss_function = LOSS_FUNCTIONS[variant]

        def objective(model, batch):
            return loss_function(model, batch, schedule, weight_cap=config.weight_cap)

        return objective

    config.check_schedule(schedule)
    project = variant is LossVariant.QUOTIENT

    def general_objective(model, batch):
        velocity = denoiser_lib.VelocityModel(model, schedule)
        return loss_quotient_general(
            velocity, batch, schedule, weight_cap=config.weight_cap, project=project)

    return general_objective


def train(config, data_sampler, space, schedule, params=None):
    """Runs the sample-t / sample-pair / gradient-step loop.

    Args:
        config: `TrainConfig`.
        data_sampler: callable (rng, n) -> n target clouds of the space's shape.
        space: the symmetry space.
        schedule: the interpolant schedule.
        params: optional initial `DenoiserParams`; freshly initialized otherwise.

    Returns:
        `TrainResult` with the trained parameters and per-epoch mean losses.

    Raises:
        TrainingDivergedError: if a batch loss is not finite.
    """
    if params is None:
        params = denoiser_lib.init_params(
            space.n_points, space.dim, hidden=config.hidden,
            n_frequencies=config.n_frequencies, activation=config.activation,
            seed=config.seed, parametrization=config.parametrization)
    params = params.copy()
    model = denoiser_lib.MLPDenoiser(params, space)
    objective = _select_objective(config, schedule)
    optimizer = make_optimizer(config)
    rng = np.random.default_rng(config.seed)

    held_out_rng = np.random.default_rng([config.seed, 1])
    held_out = sample_batch(data_sampler, schedule, space, 32, held_out_rng, augment=True)
    held_out_x_t = interpolant_schedule.interpolate(
        schedule, held_out.noise, held_out.x1, held_out.t)
    held_out_rotations = space.random_rotation(held_out_rng, 32)

    logger.info(
        "Training %s loss for %d epoch(s) of %d step(s), batch %d, %s lr %g",
        config.loss, config.epochs, config.steps_per_epoch, config.batch_size,
        config.optimizer, config.learning_rate)
    losses, equivariance, skipped = [], [], 0
    for epoch in range(config.epochs):
        epoch_losses = []
        for step in range(config.steps_per_epoch):
            batch = sample_batch(
                data_sampler, schedule, space, config.batch_size, rng,
                augment=config.augment_rotations)
            result = objective(model, batch)
            if not np.isfinite(result.value):
                raise TrainingDivergedError(
                    "Loss became %r at epoch %d, step %d (lr %g)" % (
                        result.value, epoch, step, config.learning_rate))
            optimizer.step(params, result.grads)
            epoch_losses.append(result.value)
            skipped += result.skipped
        losses.append(float(np.mean(epoch_losses)))
        if config.track_equivariance:
            equivariance.append(denoiser_lib.equivariance_error(
                model, space, held_out_x_t, held_out.t, held_out_rotations))
        logger.info("Epoch %d/%d: mean loss %.6g", epoch + 1, config.epochs, losses[-1])
    if skipped:
        logger.warning("Skipped %d degenerate training sample(s)", skipped)
    return TrainResult(params=params, losses=losses, equivariance=equivariance, skipped=skipped)
