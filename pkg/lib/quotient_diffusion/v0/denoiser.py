# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining denoising models D(x_t, t) -> x1.

Two models are offered:
* `MLPDenoiser`: a small multilayer perceptron over flattened coordinates and
  sinusoidal time features, with hand-written reverse-mode gradients. It
  predicts D directly or as the residual form x_t + (1 - t) F.
* `AnalyticGaussianDenoiser`: the exact posterior mean for an isotropic
  zero-mean Gaussian target, used as a ground-truth oracle.

Every denoiser output lives on the total space M (the space's `center` is
applied to the network output). Rotation equivariance of the MLP is learned
through rotation data augmentation, not built into the architecture.
"""

import abc
import dataclasses
import json
import logging
import traceback

import numpy as np

from quotient_diffusion.v0 import interpolant_schedule

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 5

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "quotient-diffusion-mlp"
DEFAULT_HIDDEN_WIDTHS = (128, 128, 128)
DEFAULT_N_FREQUENCIES = 8

# "direct": D = MLP(x_t, t). "residual": D = x_t + (1 - t) MLP(x_t, t), so the
# network output is the rectified-flow velocity under the linear schedule.
PARAMETRIZATION_DIRECT = "direct"
PARAMETRIZATION_RESIDUAL = "residual"
PARAMETRIZATIONS = (PARAMETRIZATION_DIRECT, PARAMETRIZATION_RESIDUAL)


def _tanh_derivative(activated):
    return 1.0 - activated ** 2


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_derivative_from_output(activated):
    # sigmoid(z) = 1 - exp(-softplus(z))
    return -np.expm1(-activated)


ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_derivative),
    "softplus": (_softplus, _softplus_derivative_from_output),
}


class TimeFeatures:
    """Featurizes t as [t, sin(w_j t), cos(w_j t)] with w_j = pi * j, j = 1..k."""

    def __init__(self, n_frequencies=DEFAULT_N_FREQUENCIES):
        if n_frequencies < 0:
            raise ValueError("Number of frequencies must be >= 0. Got: %r" % n_frequencies)
        self.n_frequencies = int(n_frequencies)
        self.frequencies = np.pi * np.arange(1, self.n_frequencies + 1)

    @property
    def width(self):
        return 2 * self.n_frequencies + 1

    def __call__(self, t, batch_size):
        t = np.broadcast_to(np.asarray(t, dtype=float), (batch_size,))
        phases = t[:, None] * self.frequencies[None, :]
        return np.concatenate([t[:, None], np.sin(phases), np.cos(phases)], axis=1)


@dataclasses.dataclass
class DenoiserParams:
    """Weights and biases of the MLP, plus the input layout they were built for.

    `weights[i]` has shape (fan_in, fan_out) and `biases[i]` shape (fan_out,).
    The input layout is the flattened (N * d) cloud followed by the time
    features; the output is the flattened cloud.
    """

    weights: list
    biases: list
    n_points: int
    dim: int
    n_frequencies: int = DEFAULT_N_FREQUENCIES
    activation: str = "tanh"
    parametrization: str = PARAMETRIZATION_DIRECT

    def __post_init__(self):
        self.validate()

    @property
    def input_width(self):
        return self.n_points * self.dim + 2 * self.n_frequencies + 1

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def validate(self):
        """Checks layer chaining, layout widths and finiteness.

        Raises:
            ValueError: on any inconsistency.
        """
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                "Unknown activation '%s'. Valid activations are: %s" % (
                    self.activation, sorted(ACTIVATIONS)))
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(
                "Unknown parametrization '%s'. Valid parametrizations are: %s" % (
                    self.parametrization, list(PARAMETRIZATIONS)))
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("Need as many bias vectors as weight matrices (and at least one).")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if self.weights[0].shape[0] != self.input_width:
            raise ValueError(
                "First layer expects %d inputs, layout provides %d" % (
                    self.weights[0].shape[0], self.input_width))
        if self.weights[-1].shape[1] != self.n_points * self.dim:
            raise ValueError(
                "Last layer emits %d outputs, cloud has %d coordinates" % (
                    self.weights[-1].shape[1], self.n_points * self.dim))
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise ValueError("Layer %d has inconsistent shapes %s / %s" % (
                    index, weight.shape, bias.shape))
            if index and self.weights[index - 1].shape[1] != weight.shape[0]:
                raise ValueError("Layer %d does not chain onto layer %d" % (index, index - 1))
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise ValueError("Layer %d has non-finite parameters" % index)

    def arrays(self):
        """Returns all parameter arrays, weights first then biases."""
        return list(self.weights) + list(self.biases)

    def copy(self):
        return dataclasses.replace(
            self, weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases])

    def zeros_like(self):
        return dataclasses.replace(
            self, weights=[np.zeros_like(w) for w in self.weights],
            biases=[np.zeros_like(b) for b in self.biases])

    def layout(self):
        """Returns the JSON-friendly layout header."""
        return {
            "n_points": self.n_points,
            "dim": self.dim,
            "n_frequencies": self.n_frequencies,
            "activation": self.activation,
            "parametrization": self.parametrization,
            "widths": self.widths,
        }


def init_params(
        n_points, dim, hidden=DEFAULT_HIDDEN_WIDTHS, n_frequencies=DEFAULT_N_FREQUENCIES,
        activation="tanh", seed=0,
        parametrization=PARAMETRIZATION_DIRECT):
    """Returns freshly initialized MLP parameters.

    Weights are drawn uniformly in +-sqrt(6 / (fan_in + fan_out)) from a
    generator seeded with `seed`; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    widths = [n_points * dim + 2 * n_frequencies + 1] + list(hidden) + [n_points * dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    logger.debug("Initialized MLP with widths %s (seed %d)", widths, seed)
    return DenoiserParams(
        weights=weights, biases=biases, n_points=n_points, dim=dim,
        n_frequencies=n_frequencies, activation=activation,
        parametrization=parametrization)


class BaseDenoiser(abc.ABC):
    """Base class for maps (x_t, t) -> predicted clean sample x1."""

    trainable = False

    def __init__(self, space):
        self.space = space

    @abc.abstractmethod
    def forward(self, x_t, t):
        """Returns the predicted clean cloud(s), same shape as x_t."""
        raise NotImplementedError("No forward pass defined.")

    def __call__(self, x_t, t):
        return self.forward(x_t, t)


class MLPDenoiser(BaseDenoiser):
    """Multilayer perceptron denoiser with manual backpropagation."""

    trainable = True

    def __init__(self, params, space):
        super().__init__(space)
        if (params.n_points, params.dim) != space.cloud_shape:
            raise ValueError(
                "Parameters built for clouds of shape %s, space has %s" % (
                    (params.n_points, params.dim), space.cloud_shape))
        self.params = params
        self.time_features = TimeFeatures(params.n_frequencies)

    def _prepare(self, x_t, t):
        x_t = np.asarray(x_t, dtype=float)
        if x_t.shape[-2:] != self.space.cloud_shape:
            raise ValueError(
                "Expected clouds of shape %s. Got: %s" % (self.space.cloud_shape, x_t.shape))
        single = x_t.ndim == 2
        batch = x_t.reshape(-1, self.params.n_points * self.params.dim)
        features = self.time_features(t, batch.shape[0])
        return np.concatenate([batch, features], axis=1), single, x_t.shape

    def _forward_layers(self, inputs):
        activate, _ = ACTIVATIONS[self.params.activation]
        activations = [inputs]
        hidden = inputs
        last = len(self.params.weights) - 1
        for index, (weight, bias) in enumerate(zip(self.params.weights, self.params.biases)):
            hidden = hidden @ weight + bias
            if index < last:
                hidden = activate(hidden)
                activations.append(hidden)
        return hidden, activations

    def _output_scale(self, t, like):
        if self.params.parametrization != PARAMETRIZATION_RESIDUAL:
            return 1.0
        remaining = 1.0 - np.asarray(t, dtype=float)
        return interpolant_schedule.broadcast_coefficient(remaining, like)

    def forward(self, x_t, t):
        inputs, _, shape = self._prepare(x_t, t)
        output, _ = self._forward_layers(inputs)
        output = output.reshape(shape)
        output = self._output_scale(t, output) * output
        if self.params.parametrization == PARAMETRIZATION_RESIDUAL:
            output = output + np.asarray(x_t, dtype=float)
        return self.space.center(output)

    def backward(self, x_t, t, upstream):
        """Returns the gradient of <forward(x_t, t), upstream> w.r.t. the parameters.

        Args:
            x_t: cloud(s) of shape (..., N, d).
            t: scalar time or one time per cloud.
            upstream: array with the same shape as x_t.

        Returns:
            `DenoiserParams` holding the gradient arrays.
        """
        inputs, _, shape = self._prepare(x_t, t)
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != shape:
            raise ValueError(
                "Upstream gradient of shape %s does not match output shape %s" % (
                    upstream.shape, shape))
        _, derivative = ACTIVATIONS[self.params.activation]
        _, activations = self._forward_layers(inputs)

        # The output centering is a symmetric projection, so it is its own adjoint.
        delta = self._output_scale(t, upstream) * self.space.center(upstream)
        delta = delta.reshape(inputs.shape[0], -1)
        gradient = self.params.zeros_like()
        for index in range(len(self.params.weights) - 1, -1, -1):
            gradient.weights[index] = activations[index].T @ delta
            gradient.biases[index] = delta.sum(axis=0)
            if index:
                delta = (delta @ self.params.weights[index].T) * derivative(activations[index])
        return gradient


class AnalyticGaussianDenoiser(BaseDenoiser):
    """Exact E[x1 | x_t] for a target N(0, sigma^2 I) restricted to M.

    For the one-sided interpolant the posterior mean is
    beta sigma^2 / (beta^2 sigma^2 + alpha_hat^2) * x_t.
    """

    def __init__(self, sigma, schedule, space):
        super().__init__(space)
        if not sigma > 0:
            raise ValueError("Target scale must be positive. Got: %r" % sigma)
        self.sigma = float(sigma)
        self.schedule = schedule

    def forward(self, x_t, t):
        x_t = np.asarray(x_t, dtype=float)
        alpha_hat, beta, _, _ = self.schedule.coeffs(t)
        variance = self.sigma ** 2
        gain = beta * variance / (beta ** 2 * variance + alpha_hat ** 2)
        return interpolant_schedule.broadcast_coefficient(gain, x_t) * x_t


class VelocityModel:
    """Adapter exposing a denoiser as a velocity field through the affine conversion.

    v(x_t, t) = (alpha_hat' x_t - d(t) D(x_t, t)) / alpha_hat; the backward
    pass chains the per-sample D coefficient into the wrapped denoiser.
    """

    def __init__(self, denoiser, schedule):
        self.denoiser = denoiser
        self.schedule = schedule
        self.space = denoiser.space
        self.trainable = denoiser.trainable

    @property
    def params(self):
        return self.denoiser.params

    def forward(self, x_t, t):
        d_val = self.denoiser.forward(x_t, t)
        return interpolant_schedule.velocity_from_denoiser(self.schedule, d_val, x_t, t)

    def __call__(self, x_t, t):
        return self.forward(x_t, t)

    def backward(self, x_t, t, upstream):
        _, d_coefficient = interpolant_schedule.velocity_scale(self.schedule, t)
        upstream = np.asarray(upstream, dtype=float)
        scaled = interpolant_schedule.broadcast_coefficient(d_coefficient, upstream) * upstream
        return self.denoiser.backward(x_t, t, scaled)


def equivariance_error(denoiser, space, x_t, t, rotations):
    """Returns the median of ||D(g x, t) - g D(x, t)|| / ||D(x, t)|| over the batch.

    Args:
        denoiser: any denoiser.
        space: the symmetry space.
        x_t: clouds of shape (B, N, d).
        t: scalar or per-cloud times.
        rotations: one rotation per cloud, shape (B, d, d).
    """
    plain = denoiser.forward(x_t, t)
    rotated = denoiser.forward(space.apply_group(rotations, x_t), t)
    residual = rotated - space.apply_group(rotations, plain)
    numerator = np.linalg.norm(residual.reshape(len(residual), -1), axis=1)
    denominator = np.linalg.norm(plain.reshape(len(plain), -1), axis=1)
    return float(np.median(numerator / np.maximum(denominator, 1e-300)))


def save_checkpoint(path, params, metadata=None):
    """Writes the parameters and their layout header to a JSON file."""
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": LIBAPI,
        "layout": params.layout(),
        "metadata": metadata or {},
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    logger.debug("Writing checkpoint '%s' with layout %s", path, document["layout"])
    try:
        with open(path, "w") as handle:
            json.dump(document, handle)
    except Exception:
        logger.error(
            "Exception occurred while writing checkpoint '%s':\n%s",
            path, traceback.format_exc())
        raise


def load_checkpoint(path):
    """Reads a checkpoint written by `save_checkpoint`.

    Returns:
        Tuple of (`DenoiserParams`, metadata dict).

    Raises:
        ValueError: if the file is not a checkpoint of a supported version.
    """
    with open(path) as handle:
        document = json.load(handle)
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("File '%s' is not a %s checkpoint." % (path, CHECKPOINT_FORMAT))
    if document.get("version") != LIBAPI:
        raise ValueError(
            "Checkpoint '%s' has version %r, this library reads version %d" % (
                path, document.get("version"), LIBAPI))
    layout = document["layout"]
    params = DenoiserParams(
        weights=[np.array(w, dtype=float) for w in document["weights"]],
        biases=[np.array(b, dtype=float) for b in document["biases"]],
        n_points=layout["n_points"], dim=layout["dim"],
        n_frequencies=layout["n_frequencies"], activation=layout["activation"],
        parametrization=layout.get("parametrization", PARAMETRIZATION_DIRECT))
    if params.widths != layout["widths"]:
        raise ValueError(
            "Checkpoint '%s' declares widths %s but stores %s" % (
                path, layout["widths"], params.widths))
    return params, document.get("metadata", {})
