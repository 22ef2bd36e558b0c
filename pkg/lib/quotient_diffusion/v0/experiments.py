# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining experiment configuration, artifact writing and the drivers.

Drivers:
* `cmd_verify`: the invariant suite, written to oracle_report.json.
* `cmd_so2_demo`: conventional vs quotient models on a planar two-ring target.
* `cmd_shape_demo`: quotient training and SDE sampling on a rotated template.
* `cmd_gaussian_exact`: exact-denoiser study of distribution recovery and
  trajectory length.
* `cmd_train` / `cmd_sample`: generic training and sampling entry points.

Every driver writes its artifacts and a run_record.json manifest under the
configured output directory.
"""

import copy
import csv
import dataclasses
import datetime
import hashlib
import io
import json
import logging
import os
import pathlib
import time
import traceback
from importlib import metadata as importlib_metadata
from xml.sax import saxutils

import numpy as np
import yaml

from quotient_diffusion.v0 import denoiser as denoiser_lib
from quotient_diffusion.v0 import interpolant_schedule, objectives
from quotient_diffusion.v0 import oracles_metrics as oracles
from quotient_diffusion.v0 import samplers, symmetry_geometry, targets

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 7

logger = logging.getLogger(__name__)

PACKAGE_NAME = "quotient-diffusion"
RUN_RECORD_FILENAME = "run_record.json"
ORACLE_REPORT_FILENAME = "oracle_report.json"
CSV_FLOAT_FORMAT = "%.17g"
VARIANTS = (samplers.VARIANT_CONVENTIONAL, samplers.VARIANT_QUOTIENT)

# Acceptance thresholds of the experiment reports.
RADIAL_KS_THRESHOLD = 0.05
QUOTIENT_TANGENTIAL_THRESHOLD = 1e-9
CONVENTIONAL_TANGENTIAL_THRESHOLD = 1e-3
SDE_DRIFT_THRESHOLD = 1e-3
STEP_ANGULAR_MOMENTUM_THRESHOLD = 1e-9
COVARIANCE_THRESHOLD = 0.05
SHORTER_FRACTION_THRESHOLD = 0.99


class ConfigError(ValueError):
    """Raised for unknown keys, invalid values or missing input files."""


@dataclasses.dataclass
class SpaceConfig:
    kind: str = symmetry_geometry.PlanarRotationSpace.name
    n_points: int = None

    def __post_init__(self):
        if self.kind not in symmetry_geometry.SPACES:
            raise ValueError("Unknown space '%s'. Valid spaces are: %s" % (
                self.kind, sorted(symmetry_geometry.SPACES)))

    def build(self):
        return symmetry_geometry.make_space(self.kind, self.n_points)


@dataclasses.dataclass
class TargetConfig:
    name: str = targets.RadialMixtureTarget.name
    sigma: float = 1.0
    radii: tuple = (1.0, 2.5)
    radius_scale: float = 0.15
    noise: float = 0.05
    template_seed: int = 0

    def __post_init__(self):
        if self.name not in targets.TARGETS:
            raise ValueError("Unknown target '%s'. Valid targets are: %s" % (
                self.name, sorted(targets.TARGETS)))
        self.radii = tuple(float(r) for r in self.radii)

    def build(self, space):
        if self.name == targets.RadialMixtureTarget.name:
            kwargs = {"radii": self.radii, "radius_scale": self.radius_scale}
        elif self.name == targets.GaussianTarget.name:
            kwargs = {"sigma": self.sigma}
        else:
            kwargs = {"noise": self.noise, "template_seed": self.template_seed}
        return targets.make_target(self.name, space, **kwargs)


@dataclasses.dataclass
class ExperimentSection:
    """Sizes and inputs of the experiment drivers."""

    n_reference: int = 5000
    n_pairs: int = 500
    n_covariance: int = 20000
    n_descriptor: int = 2000
    n_permutations: int = 200
    n_highlight: int = 8
    swirl: float = 1.0
    checkpoint: str = None

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if field.name not in ("checkpoint", "swirl") and not value > 0:
                raise ValueError("'%s' must be positive. Got: %r" % (field.name, value))


@dataclasses.dataclass
class VerifySection:
    """Sizes of the verification suite."""

    n_clouds: int = 1000
    min_points: int = 3
    max_points: int = 16
    n_fd_clouds: int = 100
    kabsch_pairs: int = 100
    brute_force_trials: int = 10000
    mc_samples: int = 100000
    n_trajectories: int = 16
    n_pairs: int = 100
    n_covariance: int = 2000
    steps: int = 200

    def __post_init__(self):
        if not 3 <= self.min_points <= self.max_points:
            raise ValueError("Need 3 <= min_points <= max_points. Got: %r, %r" % (
                self.min_points, self.max_points))
        if self.mc_samples < oracles.MIN_MC_SAMPLES:
            raise ValueError("'mc_samples' must be at least %d. Got: %r" % (
                oracles.MIN_MC_SAMPLES, self.mc_samples))


SECTION_TYPES = {
    "space": SpaceConfig,
    "target": TargetConfig,
    "train": objectives.TrainConfig,
    "sampler": samplers.SamplerConfig,
    "experiment": ExperimentSection,
    "verify": VerifySection,
}

KEY_ALIASES = {
    "train": {"lr": "learning_rate", "augment": "augment_rotations"},
}

TOP_LEVEL_KEYS = ("seed", "schedule", "bridge_scale")


@dataclasses.dataclass
class ExperimentConfig:
    seed: int = 0
    schedule: str = interpolant_schedule.SCHEDULE_LINEAR_ONE_SIDED
    bridge_scale: float = 1.0
    out: str = None
    space: SpaceConfig = dataclasses.field(default_factory=SpaceConfig)
    target: TargetConfig = dataclasses.field(default_factory=TargetConfig)
    train: objectives.TrainConfig = dataclasses.field(default_factory=objectives.TrainConfig)
    sampler: samplers.SamplerConfig = dataclasses.field(default_factory=samplers.SamplerConfig)
    experiment: ExperimentSection = dataclasses.field(default_factory=ExperimentSection)
    verify: VerifySection = dataclasses.field(default_factory=VerifySection)

    def build_schedule(self):
        return interpolant_schedule.make_schedule(self.schedule, self.bridge_scale)

    def with_seed(self, seed):
        """Returns a copy whose training and sampling seeds derive from `seed`."""
        return dataclasses.replace(
            self, seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            sampler=dataclasses.replace(self.sampler, seed=seed + 1))

    def to_dict(self):
        return json.loads(dump_json(dataclasses.asdict(self)))


# Residual denoisers output the velocity; a cap of 1 / floor^2 leaves its loss unweighted.
_VELOCITY_TRAINING = {
    "parametrization": denoiser_lib.PARAMETRIZATION_RESIDUAL,
    "optimizer": "adam",
    "weight_cap": 1.0 / interpolant_schedule.ALPHA_HAT_FLOOR ** 2,
}

COMMAND_DEFAULTS = {
    "so2-demo": {
        "space": {"kind": "so2"},
        "target": {"name": "radial-mixture"},
        "train": dict(_VELOCITY_TRAINING, epochs=80, steps_per_epoch=100, batch_size=512,
                      hidden=[256, 256], lr=5e-4),
        "sampler": {"mode": "ode", "steps": 200, "n_samples": 5000},
    },
    "shape-demo": {
        "space": {"kind": "so3", "n_points": 5},
        "target": {"name": "template", "noise": 0.1},
        "train": dict(_VELOCITY_TRAINING, loss="quotient", augment=True, epochs=60,
                      steps_per_epoch=100, batch_size=256, hidden=[256, 256], lr=5e-4),
        "sampler": {"mode": "sde", "variant": "quotient", "steps": 200, "n_samples": 2000},
        "experiment": {"n_descriptor": 1000},
    },
    "gaussian-exact": {
        "space": {"kind": "so3", "n_points": 5},
        "target": {"name": "gaussian", "sigma": 1.0},
        "sampler": {"steps": 200},
    },
}


def _merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def _build_section(name, values):
    section_type = SECTION_TYPES[name]
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError("Config section '%s' must be a mapping. Got: %r" % (name, values))
    aliases = KEY_ALIASES.get(name, {})
    declared = {field.name for field in dataclasses.fields(section_type)}
    kwargs = {}
    for key, value in values.items():
        field_name = aliases.get(key, key)
        if field_name not in declared:
            raise ConfigError("Unknown config key '%s.%s'" % (name, key))
        kwargs[field_name] = value
    try:
        return section_type(**kwargs)
    except (TypeError, ValueError) as ex:
        raise ConfigError("Invalid '%s' config section: %s" % (name, ex)) from ex


def build_config(document):
    """Builds an `ExperimentConfig` from a parsed YAML document.

    Raises:
        ConfigError: on unknown keys or invalid values.
    """
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError("The config file must hold a mapping. Got: %r" % (document,))
    for key in document:
        if key not in TOP_LEVEL_KEYS and key not in SECTION_TYPES:
            raise ConfigError("Unknown config key '%s'" % key)
    seed = document.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("Config key 'seed' must be a non-negative integer. Got: %r" % (seed,))
    sections = {name: _build_section(name, document.get(name)) for name in SECTION_TYPES}
    config = ExperimentConfig(
        seed=seed,
        schedule=document.get("schedule", interpolant_schedule.SCHEDULE_LINEAR_ONE_SIDED),
        bridge_scale=document.get("bridge_scale", 1.0), **sections)
    try:
        schedule = config.build_schedule()
    except (TypeError, ValueError) as ex:
        raise ConfigError("Invalid schedule settings: %s" % ex) from ex
    try:
        config.train.check_schedule(schedule)
    except ValueError as ex:
        raise ConfigError("Invalid 'train' config section: %s" % ex) from ex
    if "seed" not in (document.get("train") or {}):
        config.train = dataclasses.replace(config.train, seed=seed)
    if "seed" not in (document.get("sampler") or {}):
        config.sampler = dataclasses.replace(config.sampler, seed=seed + 1)
    return config


def load_config(path=None, command=None, seed=None, out=None):
    """Reads the YAML config (if any) over the command defaults and applies overrides.

    Args:
        path: optional path of a YAML config file.
        command: CLI command whose defaults apply beneath the file.
        seed: optional seed overriding the file and every section seed.
        out: optional output directory overriding the default.

    Raises:
        ConfigError: on an unreadable file, unknown keys or invalid values.
    """
    document = copy.deepcopy(COMMAND_DEFAULTS.get(command, {}))
    if path:
        logger.debug("Reading config file '%s'", path)
        try:
            with open(path) as handle:
                loaded = yaml.safe_load(handle)
        except OSError as ex:
            raise ConfigError("Cannot read config file '%s': %s" % (path, ex)) from ex
        except yaml.YAMLError as ex:
            raise ConfigError("Config file '%s' is not valid YAML: %s" % (path, ex)) from ex
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("Config file '%s' must hold a mapping." % path)
        _merge(document, loaded or {})
    config = build_config(document)
    if seed is not None:
        config = config.with_seed(seed)
    if out is not None:
        config.out = out
    return config


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if callable(value):
        return repr(value)
    raise TypeError("Cannot serialize %r" % (value,))


def dump_json(document):
    return json.dumps(document, indent=2, sort_keys=True, default=_json_default) + "\n"


def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT % value
    return str(value)


def format_csv(fieldnames, rows):
    """Returns CSV text with a header row; floats use a round-trippable format."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def write_file(file_path, file_data, make_dirs=True, raise_on_error=True):
    """Writes the given text under the given path.

    Args:
        file_path: path of the file to write.
        file_data: string data to write into the file.
        make_dirs: whether or not to create parent directories if needed.
        raise_on_error: whether or not the function should re-raise errors.

    Returns:
        True if the file was written, False (or raises) otherwise.
    """
    logger.debug("Writing file '%s'", file_path)
    try:
        if make_dirs:
            pathlib.Path(file_path).parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", newline="") as handle:
            handle.write(file_data)
    except Exception:
        logger.error(
            "Exception occurred while writing file '%s':\n%s",
            file_path, traceback.format_exc())
        if raise_on_error:
            raise
        return False
    return True


def sha256_file(path):
    return hashlib.sha256(pathlib.Path(path).read_bytes()).hexdigest()


def package_version():
    try:
        return importlib_metadata.version(PACKAGE_NAME)
    except importlib_metadata.PackageNotFoundError:
        return "%d.%d" % (LIBAPI, LIBPATCH)


@dataclasses.dataclass
class RunRecord:
    """Config snapshot, version, timing, metrics and file manifest of one run."""

    command: str
    config: dict
    version: str
    started: str
    wall_clock_seconds: float = None
    metrics: dict = dataclasses.field(default_factory=dict)
    files: list = dataclasses.field(default_factory=list)
    _written: bool = dataclasses.field(default=False, init=False, repr=False)

    def add_file(self, path, name):
        if self._written:
            raise RuntimeError("Run record was already written.")
        path = pathlib.Path(path)
        self.files = [entry for entry in self.files if entry["path"] != name]
        self.files.append({
            "path": name, "sha256": sha256_file(path), "bytes": path.stat().st_size})
        self.files.sort(key=lambda entry: entry["path"])

    def to_dict(self):
        document = dataclasses.asdict(self)
        document.pop("_written")
        return document

    def write(self, out_dir):
        if self._written:
            raise RuntimeError("Run record was already written.")
        path = pathlib.Path(out_dir) / RUN_RECORD_FILENAME
        write_file(path, dump_json(self.to_dict()))
        self._written = True
        return path


SVG_SIZE = 480
SVG_MARGIN = 24
COLORS = {
    "target": "#9e9e9e",
    samplers.VARIANT_CONVENTIONAL: "#d95f02",
    samplers.VARIANT_QUOTIENT: "#1b9e77",
    "trajectory": "#303030",
}


def render_svg(scatter_sets, paths=(), title=""):
    """Returns an SVG document with scatter points and polylines.

    Args:
        scatter_sets: sequence of (points (n, 2), color, label).
        paths: sequence of (points (k, 2), color) drawn as polylines.
        title: caption drawn at the top.
    """
    everything = [np.asarray(points, dtype=float) for points, _, _ in scatter_sets]
    everything += [np.asarray(points, dtype=float) for points, _ in paths]
    stacked = np.concatenate([p.reshape(-1, 2) for p in everything]) if everything else (
        np.zeros((1, 2)))
    low, high = stacked.min(axis=0), stacked.max(axis=0)
    span = max(float(np.max(high - low)), 1e-12)
    scale = (SVG_SIZE - 2 * SVG_MARGIN) / span

    def project(points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        px = SVG_MARGIN + (points[:, 0] - low[0]) * scale
        py = SVG_SIZE - SVG_MARGIN - (points[:, 1] - low[1]) * scale
        return px, py

    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="%d" height="%d" '
        'viewBox="0 0 %d %d">' % (SVG_SIZE, SVG_SIZE, SVG_SIZE, SVG_SIZE),
        '<rect width="100%" height="100%" fill="white"/>',
        '<text x="%d" y="16" font-size="12" font-family="sans-serif">%s</text>' % (
            SVG_MARGIN, saxutils.escape(title)),
    ]
    for index, (points, color, label) in enumerate(scatter_sets):
        px, py = project(points)
        lines.extend(
            '<circle cx="%.2f" cy="%.2f" r="1.2" fill="%s" fill-opacity="0.5"/>' % (x, y, color)
            for x, y in zip(px, py))
        lines.append(
            '<text x="%d" y="%d" font-size="11" font-family="sans-serif" fill="%s">%s</text>' % (
                SVG_SIZE - 150, 16 + 14 * index, color, saxutils.escape(label)))
    for points, color in paths:
        px, py = project(points)
        coordinates = " ".join("%.2f,%.2f" % (x, y) for x, y in zip(px, py))
        lines.append(
            '<polyline points="%s" fill="none" stroke="%s" stroke-width="1"/>' % (
                coordinates, color))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _coordinate_names(dim):
    return ["x", "y", "z"][:dim]


class ArtifactWriter:
    """Writes run artifacts under one output directory and tracks them in a `RunRecord`."""

    def __init__(self, command, config):
        self.out_dir = pathlib.Path(config.out or os.path.join("runs", command))
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.record = RunRecord(
            command=command, config=config.to_dict(), version=package_version(),
            started=datetime.datetime.now(datetime.timezone.utc).isoformat())
        self._start = time.perf_counter()
        logger.info("Writing '%s' artifacts to '%s'", command, self.out_dir)

    def path(self, name):
        return self.out_dir / name

    def text(self, name, data):
        path = self.path(name)
        write_file(path, data)
        self.record.add_file(path, name)
        return path

    def csv(self, name, fieldnames, rows):
        return self.text(name, format_csv(fieldnames, rows))

    def json(self, name, document):
        return self.text(name, dump_json(document))

    def checkpoint(self, name, params, metadata):
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        denoiser_lib.save_checkpoint(path, params, metadata)
        self.record.add_file(path, name)
        return path

    def losses(self, name, result):
        rows = []
        for epoch, loss in enumerate(result.losses):
            drift = result.equivariance[epoch] if epoch < len(result.equivariance) else ""
            rows.append([epoch, loss, drift])
        return self.csv(name, ["epoch", "mean_loss", "equivariance_error"], rows)

    def samples(self, name, clouds):
        clouds = np.asarray(clouds)
        rows = (
            [index, point_index] + list(point)
            for index, cloud in enumerate(clouds)
            for point_index, point in enumerate(cloud))
        header = ["sample_index", "point_index"] + _coordinate_names(clouds.shape[-1])
        return self.csv(name, header, rows)

    def trajectory(self, name, trajectory, limit=None):
        """Writes one row per (step, sample, point); step 0 has zero diagnostics."""
        states = trajectory.states
        count = states.shape[1] if limit is None else min(limit, states.shape[1])
        diagnostics = (
            trajectory.step_norm, trajectory.vertical_norm,
            trajectory.ang_mom_norm, trajectory.frame_rot_angle)
        header = (
            ["step", "t", "sample_index", "point_index"]
            + _coordinate_names(states.shape[-1])
            + ["step_norm", "vertical_norm", "ang_mom_norm", "frame_rot_angle"])
        rows = []
        for step, (t, state) in enumerate(zip(trajectory.times, states)):
            for sample_index in range(count):
                values = [0.0] * 4 if step == 0 else [
                    float(d[step - 1, sample_index]) for d in diagnostics]
                for point_index, point in enumerate(state[sample_index]):
                    rows.append([step, t, sample_index, point_index] + list(point) + values)
        return self.csv(name, header, rows)

    def finish(self, metrics):
        self.record.metrics = metrics
        self.record.wall_clock_seconds = time.perf_counter() - self._start
        path = self.record.write(self.out_dir)
        logger.info("Run record written to '%s'", path)
        return self.record


class SwirlingDenoiser(denoiser_lib.BaseDenoiser):
    """Adds an equivariant, divergence-free vertical field to a denoiser's velocity.

    The field is J x on the plane and (x_1 cross x_2) cross x_n in the shape
    space. It is tangent to the orbits of a rotation-invariant density, so
    the generated distribution is unchanged, but the conventional sampler
    now rotates while the quotient sampler projects the field away.
    """

    def __init__(self, base, schedule, strength=1.0):
        super().__init__(base.space)
        self.base = base
        self.schedule = schedule
        self.strength = float(strength)

    def vertical_field(self, x):
        x = self.space.center(x)
        if self.space.dim == 2:
            return np.stack([-x[..., 1], x[..., 0]], axis=-1)
        axis = np.cross(x[..., 0, :], x[..., 1, :])
        return np.cross(axis[..., None, :], x)

    def forward(self, x_t, t):
        _, d_coefficient = interpolant_schedule.velocity_scale(self.schedule, t)
        shift = interpolant_schedule.broadcast_coefficient(self.strength / d_coefficient, x_t)
        return self.base.forward(x_t, t) + shift * self.vertical_field(x_t)


class _TransformedDenoiser(denoiser_lib.BaseDenoiser):
    def __init__(self, base, transform):
        super().__init__(base.space)
        self.base = base
        self.transform = transform

    def forward(self, x_t, t):
        return self.transform(x_t, self.base.forward(x_t, t))


def build_components(config):
    space = config.space.build()
    return space, config.build_schedule(), config.target.build(space)


def covariance_error(space, samples, sigma):
    """Returns ||E[x x^T] - sigma^2 Pi_M||_F / ||sigma^2 Pi_M||_F over flattened samples."""
    flat = np.asarray(samples).reshape(len(samples), -1)
    moment = flat.T @ flat / len(flat)
    target = sigma ** 2 * space.covariance_projector()
    return float(np.linalg.norm(moment - target) / np.linalg.norm(target))


def moment_matched_noise(space, rng, count):
    """Returns `count` noise clouds on M whose second moment is exactly Pi_M.

    Covariance errors measured from such starts carry no sampling error of
    the starts themselves.
    """
    clouds = space.sample_noise(rng, count)
    values, vectors = np.linalg.eigh(space.covariance_projector())
    basis = vectors[:, values > 0.5]
    if count < basis.shape[1]:
        raise ValueError("Need at least %d clouds to match moments. Got: %d" % (
            basis.shape[1], count))
    coordinates = clouds.reshape(count, -1) @ basis
    scales, axes = np.linalg.eigh(coordinates.T @ coordinates / count)
    whitened = coordinates @ (axes / np.sqrt(scales)) @ axes.T
    return (whitened @ basis.T).reshape(clouds.shape)


def tangential_fraction(trajectory):
    """Returns the mean over moving steps of ||vertical part|| / ||step||."""
    moving = trajectory.step_norm > 0
    if not np.any(moving):
        return 0.0
    return float(np.mean(trajectory.vertical_norm[moving] / trajectory.step_norm[moving]))


def _checkpoint_metadata(config, loss):
    return {
        "space": config.space.kind,
        "n_points": config.space.build().n_points,
        "schedule": config.schedule,
        "bridge_scale": config.bridge_scale,
        "loss": loss,
        "seed": config.train.seed,
        "epochs": config.train.epochs,
    }


def _train_and_sample(run, config, space, schedule, target, loss, variant, x0, prefix=""):
    train_config = dataclasses.replace(config.train, loss=loss)
    result = objectives.train(train_config, target, space, schedule)
    model = denoiser_lib.MLPDenoiser(result.params, space)
    sampler_config = dataclasses.replace(config.sampler, variant=variant)
    trajectory = samplers.sample(sampler_config, space, model, schedule, x0=x0)
    run.losses(prefix + "losses.csv", result)
    run.checkpoint(prefix + "checkpoint.json", result.params, _checkpoint_metadata(config, loss))
    run.samples(prefix + "samples.csv", trajectory.final)
    if trajectory.has_all_states:
        run.trajectory(prefix + "trajectory.csv", trajectory, limit=config.experiment.n_highlight)
    return result, trajectory


def _log_verdict(label, passed):
    if passed:
        logger.info("%s: all acceptance thresholds met", label)
    else:
        logger.warning("%s: acceptance thresholds missed, see the report", label)


def cmd_so2_demo(config):
    """Trains conventional and quotient models on the planar two-ring target and compares them."""
    run = ArtifactWriter("so2-demo", config)
    space, schedule, target = build_components(config)
    rng = np.random.default_rng([config.seed, 2])
    x0 = space.sample_noise(rng, config.sampler.n_samples)
    reference = target(rng, config.experiment.n_reference)
    reference_radii = targets.planar_radii(reference)

    metrics = {}
    scatter = [(reference[:, 0, :], COLORS["target"], "target")]
    for variant in VARIANTS:
        result, trajectory = _train_and_sample(
            run, config, space, schedule, target, variant, variant, x0, prefix=variant + "/")
        radial_ks = oracles.ks_statistic(targets.planar_radii(trajectory.final), reference_radii)
        fraction = tangential_fraction(trajectory)
        if variant == samplers.VARIANT_QUOTIENT:
            tangential_passed = fraction <= QUOTIENT_TANGENTIAL_THRESHOLD
        else:
            tangential_passed = fraction >= CONVENTIONAL_TANGENTIAL_THRESHOLD
        metrics[variant] = {
            "final_loss": result.losses[-1] if result.losses else None,
            "radial_ks": radial_ks,
            "radial_ks_passed": bool(radial_ks <= RADIAL_KS_THRESHOLD),
            "tangential_fraction": fraction,
            "tangential_fraction_passed": bool(tangential_passed),
            "skipped_samples": result.skipped,
        }
        logger.info(
            "%s model: radial KS %.4f, tangential fraction %.3g", variant, radial_ks, fraction)
        highlighted = [
            (trajectory.states[:, index, 0, :], COLORS["trajectory"])
            for index in range(min(config.experiment.n_highlight, len(x0)))
        ] if trajectory.has_all_states else []
        run.text("%s.svg" % variant, render_svg(
            scatter + [(trajectory.final[:, 0, :], COLORS[variant], variant)],
            highlighted, title="SO(2) demo: %s sampler" % variant))
    metrics["passed"] = all(
        metrics[variant]["radial_ks_passed"] and metrics[variant]["tangential_fraction_passed"]
        for variant in VARIANTS)
    _log_verdict("SO(2) demo", metrics["passed"])
    run.json("so2_report.json", metrics)
    run.finish(metrics)
    return metrics


def cmd_shape_demo(config):
    """Trains a quotient model on a rotated noisy template and samples it."""
    run = ArtifactWriter("shape-demo", config)
    space, schedule, target = build_components(config)
    rng = np.random.default_rng([config.seed, 3])
    x0 = space.sample_noise(rng, config.sampler.n_samples)
    result, trajectory = _train_and_sample(
        run, config, space, schedule, target, config.train.loss, config.sampler.variant, x0)

    reference = target(rng, config.experiment.n_reference)
    count = min(config.experiment.n_descriptor, len(trajectory.final), len(reference))
    test = oracles.energy_permutation_test(
        oracles.shape_descriptor(trajectory.final[:count]),
        oracles.shape_descriptor(reference[:count]),
        n_permutations=config.experiment.n_permutations, rng=rng)
    max_drift = float(np.max(oracles.orientation_drift(trajectory)))
    max_momentum = float(np.max(trajectory.ang_mom_norm))
    metrics = {
        "final_loss": result.losses[-1] if result.losses else None,
        "descriptor_energy_distance": test.statistic,
        "descriptor_null_q95": test.quantile(0.95),
        "descriptor_p_value": test.p_value,
        "descriptor_passed": bool(test.statistic <= test.quantile(0.95)),
        "max_orientation_drift": max_drift,
        "orientation_drift_passed": bool(max_drift <= SDE_DRIFT_THRESHOLD),
        "max_step_angular_momentum": max_momentum,
        "angular_momentum_passed": bool(max_momentum <= STEP_ANGULAR_MOMENTUM_THRESHOLD),
        "clamped_steps": trajectory.clamped_steps,
        "skipped_samples": result.skipped,
    }
    metrics["passed"] = all(
        metrics[key] for key in (
            "descriptor_passed", "orientation_drift_passed", "angular_momentum_passed"))
    logger.info(
        "Shape demo: descriptor energy %.4g (null q95 %.4g), max drift %.3g rad",
        test.statistic, metrics["descriptor_null_q95"], metrics["max_orientation_drift"])
    _log_verdict("Shape demo", metrics["passed"])
    run.json("shape_report.json", metrics)
    run.finish(metrics)
    return metrics


def _sample_final(config, space, model, schedule, x0, **overrides):
    sampler_config = dataclasses.replace(config.sampler, keep_states=False, **overrides)
    return samplers.sample(sampler_config, space, model, schedule, x0=x0)


def cmd_gaussian_exact(config):
    """Exact-denoiser study: covariance recovery, path lengths and the curvature ablation."""
    run = ArtifactWriter("gaussian-exact", config)
    space, schedule, target = build_components(config)
    if not isinstance(target, targets.GaussianTarget):
        raise ConfigError("gaussian-exact needs the 'gaussian' target. Got: '%s'" % target.name)
    sigma = target.sigma
    exact = denoiser_lib.AnalyticGaussianDenoiser(sigma, schedule, space)
    swirl = SwirlingDenoiser(exact, schedule, config.experiment.swirl)
    rng = np.random.default_rng([config.seed, 4])

    # Paired path lengths from shared starts.
    starts = space.sample_noise(rng, config.experiment.n_pairs)
    lengths = {}
    for label, model in (("exact", exact), ("swirl", swirl)):
        for variant in VARIANTS:
            trajectory = _sample_final(
                config, space, model, schedule, starts, mode=samplers.MODE_ODE, variant=variant)
            lengths[(label, variant)] = samplers.trajectory_length(trajectory)
    rows = [
        [index] + [lengths[(label, variant)][index]
                   for label in ("exact", "swirl") for variant in VARIANTS]
        for index in range(len(starts))]
    run.csv("lengths.csv", [
        "pair_index", "exact_conventional", "exact_quotient",
        "swirl_conventional", "swirl_quotient"], rows)

    def shorter_fraction(label):
        conventional = lengths[(label, samplers.VARIANT_CONVENTIONAL)]
        quotient = lengths[(label, samplers.VARIANT_QUOTIENT)]
        return float(np.mean(quotient <= conventional * (1.0 + 1e-12)))

    # Distribution recovery with the ODE samplers.
    x0 = moment_matched_noise(space, rng, config.experiment.n_covariance)
    finals = {}
    for variant in VARIANTS:
        finals[variant] = _sample_final(
            config, space, exact, schedule, x0, mode=samplers.MODE_ODE, variant=variant).final
        run.samples("samples_%s.csv" % variant, finals[variant])
    count = min(config.experiment.n_descriptor, len(x0))
    test = oracles.energy_permutation_test(
        oracles.shape_descriptor(finals[samplers.VARIANT_CONVENTIONAL][:count]),
        oracles.shape_descriptor(finals[samplers.VARIANT_QUOTIENT][:count]),
        n_permutations=config.experiment.n_permutations, rng=rng)

    # Curvature ablation of the quotient SDE.
    ablation = {}
    for curvature in (True, False):
        final = _sample_final(
            config, space, exact, schedule, x0, mode=samplers.MODE_SDE,
            variant=samplers.VARIANT_QUOTIENT, curvature=curvature).final
        ablation["with_curvature" if curvature else "without_curvature"] = covariance_error(
            space, final, sigma)

    errors = {variant: covariance_error(space, finals[variant], sigma) for variant in VARIANTS}
    shorter = {label: shorter_fraction(label) for label in ("exact", "swirl")}
    metrics = {
        "covariance_error": errors,
        "covariance_passed": all(error <= COVARIANCE_THRESHOLD for error in errors.values()),
        "quotient_shorter_fraction": shorter,
        "shorter_passed": all(
            fraction >= SHORTER_FRACTION_THRESHOLD for fraction in shorter.values()),
        "mean_length": {
            "%s_%s" % key: float(np.mean(value)) for key, value in sorted(lengths.items())},
        "descriptor_energy_distance": test.statistic,
        "descriptor_null_q95": test.quantile(0.95),
        "descriptor_passed": bool(test.statistic <= test.quantile(0.95)),
        "sde_covariance_error": ablation,
        "curvature_ablation_passed": bool(
            ablation["with_curvature"] < ablation["without_curvature"]),
    }
    metrics["passed"] = all(
        metrics[key] for key in (
            "covariance_passed", "shorter_passed", "descriptor_passed",
            "curvature_ablation_passed"))
    logger.info(
        "Gaussian study: covariance error %s, curvature ablation %s",
        metrics["covariance_error"], ablation)
    _log_verdict("Gaussian study", metrics["passed"])
    run.json("gaussian_report.json", metrics)
    run.finish(metrics)
    return metrics


def cmd_train(config):
    """Trains one denoiser and writes losses.csv and checkpoint.json."""
    run = ArtifactWriter("train", config)
    space, schedule, target = build_components(config)
    result = objectives.train(config.train, target, space, schedule)
    run.losses("losses.csv", result)
    run.checkpoint(
        "checkpoint.json", result.params, _checkpoint_metadata(config, config.train.loss))
    metrics = {
        "final_loss": result.losses[-1] if result.losses else None,
        "skipped_samples": result.skipped,
    }
    run.finish(metrics)
    return metrics


def cmd_sample(config, checkpoint=None, mode=None, variant=None):
    """Samples from a checkpoint and writes samples.csv and trajectory.csv.

    Raises:
        ConfigError: if the checkpoint is missing or does not fit the settings.
    """
    path = checkpoint or config.experiment.checkpoint
    if not path:
        raise ConfigError("No checkpoint given: pass --checkpoint or set 'experiment.checkpoint'.")
    if not os.path.isfile(path):
        raise ConfigError("Checkpoint '%s' does not exist." % path)
    try:
        params, stored = denoiser_lib.load_checkpoint(path)
        space = symmetry_geometry.make_space(
            stored.get("space", config.space.kind), stored.get("n_points", config.space.n_points))
        schedule = interpolant_schedule.make_schedule(
            stored.get("schedule", config.schedule),
            stored.get("bridge_scale", config.bridge_scale))
        model = denoiser_lib.MLPDenoiser(params, space)
        overrides = {key: value for key, value in (("mode", mode), ("variant", variant)) if value}
        sampler_config = dataclasses.replace(config.sampler, **overrides)
    except (KeyError, ValueError) as ex:
        raise ConfigError("Cannot sample from checkpoint '%s': %s" % (path, ex)) from ex

    run = ArtifactWriter("sample", config)
    trajectory = samplers.sample(sampler_config, space, model, schedule)
    run.samples("samples.csv", trajectory.final)
    if trajectory.has_all_states:
        run.trajectory("trajectory.csv", trajectory, limit=config.experiment.n_highlight)
    metrics = {
        "n_samples": int(len(trajectory.final)),
        "mean_length": float(np.mean(samplers.trajectory_length(trajectory))),
        "max_step_angular_momentum": float(np.max(trajectory.ang_mom_norm)),
        "clamped_steps": trajectory.clamped_steps,
    }
    run.finish(metrics)
    return metrics


@dataclasses.dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool

    def to_dict(self):
        return dataclasses.asdict(self)


def _at_most(name, value, threshold):
    value = float(value)
    return CheckResult(name, value, float(threshold), bool(value <= threshold))


def _at_least(name, value, threshold):
    value = float(value)
    return CheckResult(name, value, float(threshold), bool(value >= threshold))


def _norms(v):
    v = np.asarray(v)
    return np.sqrt(np.einsum("...ni,...ni->...", v, v))


def _nondegenerate_clouds(space, rng, count):
    clouds = space.sample_noise(rng, count)
    mask = space.degenerate_mask(clouds)
    while np.any(mask):
        clouds[mask] = space.sample_noise(rng, int(np.sum(mask)))
        mask = space.degenerate_mask(clouds)
    return clouds


def _shape_batches(rng, settings):
    sizes = range(settings.min_points, settings.max_points + 1)
    per_size = -(-settings.n_clouds // len(sizes))
    for n_points in sizes:
        space = symmetry_geometry.ShapeSpace(n_points)
        yield space, _nondegenerate_clouds(space, rng, per_size)


def _projection_checks(rng, settings):
    worst = dict.fromkeys(
        ("idempotence", "self_adjoint", "vertical", "linear", "angular"), 0.0)
    for space, x in _shape_batches(rng, settings):
        v = space.sample_noise(rng, len(x))
        w = space.sample_noise(rng, len(x))
        pv = space.horizontal_project(x, v)
        pw = space.horizontal_project(x, w)
        scale = _norms(v)
        worst["idempotence"] = max(
            worst["idempotence"],
            np.max(_norms(space.horizontal_project(x, pv) - pv) / scale))
        inner = np.einsum("bni,bni->b", pv, w) - np.einsum("bni,bni->b", v, pw)
        worst["self_adjoint"] = max(
            worst["self_adjoint"], np.max(np.abs(inner) / (scale * _norms(w))))
        basis = space.vertical_basis(x)
        projected = space.horizontal_project(np.broadcast_to(x[:, None], basis.shape), basis)
        worst["vertical"] = max(worst["vertical"], np.max(_norms(projected) / _norms(basis)))
        worst["linear"] = max(
            worst["linear"], np.max(np.linalg.norm(pv.sum(axis=1), axis=-1) / scale))
        momentum = np.linalg.norm(symmetry_geometry.angular_momentum(x, pv), axis=-1)
        worst["angular"] = max(worst["angular"], np.max(momentum / (_norms(x) * scale)))
    return [
        _at_most("projection_idempotence", worst["idempotence"], 1e-9),
        _at_most("projection_self_adjoint", worst["self_adjoint"], 1e-9),
        _at_most("projection_annihilates_vertical", worst["vertical"], 1e-9),
        _at_most("projection_zero_linear_momentum", worst["linear"], 1e-9),
        _at_most("projection_zero_angular_momentum", worst["angular"], 1e-9),
    ]


def _curvature_checks(rng, settings):
    worst_fd = 0.0
    for _ in range(settings.n_fd_clouds):
        space = symmetry_geometry.ShapeSpace(
            int(rng.integers(settings.min_points, settings.max_points + 1)))
        x = _nondegenerate_clouds(space, rng, 1)[0]
        curvature = space.mean_curvature(x)
        error = _norms(curvature - oracles.fd_logdet_grad(x)) / _norms(curvature)
        worst_fd = max(worst_fd, float(error))
    worst_horizontal = 0.0
    for space, x in _shape_batches(rng, settings):
        curvature = space.mean_curvature(x)
        error = _norms(space.horizontal_project(x, curvature) - curvature) / _norms(curvature)
        worst_horizontal = max(worst_horizontal, float(np.max(error)))
    planar = symmetry_geometry.PlanarRotationSpace()
    x = _nondegenerate_clouds(planar, rng, settings.n_clouds)
    closed_form = -x / np.einsum("bni,bni->b", x, x)[:, None, None]
    return [
        _at_most("curvature_matches_logdet_fd", worst_fd, 1e-5),
        _at_most("curvature_is_horizontal", worst_horizontal, 1e-9),
        _at_most(
            "so2_curvature_closed_form",
            np.max(_norms(planar.mean_curvature(x) - closed_form)), 1e-10),
    ]


def _equivariance_checks(rng, settings):
    worst_projection, worst_curvature = 0.0, 0.0
    for space, x in _shape_batches(rng, settings):
        g = space.random_rotation(rng, len(x))
        v = space.sample_noise(rng, len(x))
        gx = space.apply_group(g, x)
        lhs = space.horizontal_project(gx, space.apply_group(g, v))
        rhs = space.apply_group(g, space.horizontal_project(x, v))
        worst_projection = max(worst_projection, np.max(_norms(lhs - rhs) / _norms(v)))
        curvature = space.mean_curvature(x)
        error = _norms(space.mean_curvature(gx) - space.apply_group(g, curvature))
        worst_curvature = max(worst_curvature, np.max(error / _norms(curvature)))
    return [
        _at_most("projection_equivariance", worst_projection, 1e-9),
        _at_most("curvature_equivariance", worst_curvature, 1e-9),
    ]


def _kabsch_checks(rng, settings):
    space = symmetry_geometry.ShapeSpace(settings.min_points + 2)
    x = _nondegenerate_clouds(space, rng, settings.kabsch_pairs)
    g = space.random_rotation(rng, len(x))
    recovered = objectives.kabsch_align(x, space.apply_group(g, x))
    recovery = np.max(_norms(recovered - space.apply_group(g, x)))

    y = _nondegenerate_clouds(space, rng, len(x))
    kabsch_residuals = _norms(objectives.kabsch_align(x, y) - y)
    gap = max(
        kabsch_residuals[index] - oracles.brute_force_best_rotation(
            x[index], y[index], settings.brute_force_trials, rng)[1]
        for index in range(len(x)))

    near = space.apply_group(g, x) + 0.1 * space.sample_noise(rng, len(x))
    rotations, _ = objectives.kabsch_rotation(x, near)
    polar_gap = 0.0
    for index in range(len(x)):
        h = near[index].T @ x[index]
        if np.linalg.det(h) > 0:
            polar = objectives.kabsch_rotation_polar(x[index], near[index])
            polar_gap = max(polar_gap, float(np.max(np.abs(polar - rotations[index]))))
    return [
        _at_most("kabsch_exact_recovery", recovery, 1e-9),
        _at_most("kabsch_not_worse_than_brute_force", gap, 1e-9),
        _at_most("kabsch_polar_form_agreement", polar_gap, 1e-8),
    ]


def _loss_checks(rng, settings):
    space = symmetry_geometry.ShapeSpace(5)
    schedule = interpolant_schedule.LinearOneSidedSchedule()
    params = denoiser_lib.init_params(
        5, 3, hidden=(32,), n_frequencies=2, seed=int(rng.integers(2 ** 31)))
    model = denoiser_lib.MLPDenoiser(params, space)
    target = targets.GaussianTarget(space)
    x1 = target(rng, 64)
    noise = space.sample_noise(rng, 64)
    t = rng.uniform(0.05, 0.95, size=64)
    batch = objectives.Batch(x1=x1, noise=noise, t=t)
    coefficients = rng.standard_normal((64, 3))

    def add_vertical(inputs, output):
        return output + np.einsum("bg,bgni->bni", coefficients, space.vertical_basis(inputs))

    plain = objectives.loss_quotient(model, batch, schedule).value
    shifted = objectives.loss_quotient(
        _TransformedDenoiser(model, add_vertical), batch, schedule).value

    g = space.random_rotation(rng)
    af3 = objectives.loss_af3(model, batch, schedule).value
    af3_rotated = objectives.loss_af3(
        _TransformedDenoiser(model, lambda inputs, output: space.apply_group(g, output)),
        batch, schedule).value

    general = objectives.Batch(x1=x1, noise=space.sample_noise(rng, 64), t=t, x0=noise)
    velocity = denoiser_lib.VelocityModel(model, schedule)
    reduced = objectives.loss_quotient_general(velocity, general, schedule).value
    conventional = objectives.loss_conventional(model, batch, schedule)
    quotient = objectives.loss_quotient(model, batch, schedule)
    excess = np.max(quotient.per_sample - conventional.per_sample * (1.0 + 1e-12))
    return [
        _at_most("quotient_loss_vertical_gauge", abs(shifted - plain) / plain, 1e-9),
        _at_most("af3_loss_rotation_gauge", abs(af3_rotated - af3) / af3, 1e-9),
        _at_most("general_objective_reduces_to_quotient", abs(reduced - plain) / plain, 1e-9),
        _at_most("quotient_loss_below_conventional", max(float(excess), 0.0), 0.0),
    ]


def _conditional_expectation_checks(rng, settings):
    schedule = interpolant_schedule.LinearOneSidedSchedule()
    diatomic = targets.DiatomicTarget(1.0)
    query = 0.5 * np.array([[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]])

    x1 = diatomic(rng, 1000)
    aligned = objectives.kabsch_align(x1, np.broadcast_to(query, x1.shape))
    spread = np.max(_norms(aligned - aligned[0]))

    def align_to_query(samples, reference):
        return objectives.kabsch_align(samples, np.broadcast_to(reference, samples.shape))

    estimate, _ = oracles.mc_conditional_expectation(
        diatomic, schedule, query, 0.5, settings.mc_samples, rng=rng)
    aligned_estimate, _ = oracles.mc_conditional_expectation(
        diatomic, schedule, query, 0.5, settings.mc_samples, rng=rng, transform=align_to_query)

    planar = symmetry_geometry.PlanarRotationSpace()
    gaussian_query = np.array([[1.0, 0.0]])
    gaussian_estimate, stderr = oracles.mc_conditional_expectation(
        targets.GaussianTarget(planar), schedule, gaussian_query, 0.5, settings.mc_samples,
        rng=rng)
    analytic = denoiser_lib.AnalyticGaussianDenoiser(1.0, schedule, planar).forward(
        gaussian_query, 0.5)
    return [
        _at_most("geodiff_aligned_targets_coincide", spread, 1e-9),
        _at_most("diatomic_conditional_bond_shortened", targets.bond_length(estimate), 0.99),
        _at_most(
            "diatomic_aligned_conditional_bond",
            abs(targets.bond_length(aligned_estimate) - 1.0), 1e-2),
        _at_most(
            "gaussian_conditional_expectation_matches_analytic",
            np.max(np.abs(gaussian_estimate - analytic) / stderr), 3.0),
    ]


def _sampler_checks(rng, settings):
    schedule = interpolant_schedule.LinearOneSidedSchedule()
    results = []

    planar = symmetry_geometry.PlanarRotationSpace()
    planar_model = SwirlingDenoiser(
        denoiser_lib.AnalyticGaussianDenoiser(1.0, schedule, planar), schedule)
    config = samplers.SamplerConfig(
        mode=samplers.MODE_ODE, variant=samplers.VARIANT_QUOTIENT, steps=settings.steps)
    trajectory = samplers.sample(
        config, planar, planar_model, schedule,
        x0=_nondegenerate_clouds(planar, rng, settings.n_trajectories))
    before, after = trajectory.states[:-1, :, 0, :], trajectory.states[1:, :, 0, :]
    cross = before[..., 0] * after[..., 1] - before[..., 1] * after[..., 0]
    ray = np.abs(cross) / (np.linalg.norm(before, axis=-1) * np.linalg.norm(after, axis=-1))
    results.append(_at_most("quotient_ode_stays_on_ray", np.max(ray), 1e-12))

    space = symmetry_geometry.ShapeSpace(5)
    exact = denoiser_lib.AnalyticGaussianDenoiser(1.0, schedule, space)
    swirl = SwirlingDenoiser(exact, schedule)
    x0 = _nondegenerate_clouds(space, rng, settings.n_trajectories)
    sde = samplers.sample(
        dataclasses.replace(config, mode=samplers.MODE_SDE), space, swirl, schedule, x0=x0)
    results.append(_at_most(
        "quotient_sde_zero_angular_momentum", np.max(sde.ang_mom_norm), 1e-9))
    results.append(_at_most(
        "quotient_sde_orientation_frozen", np.max(oracles.orientation_drift(sde)),
        SDE_DRIFT_THRESHOLD))
    ode = samplers.sample(config, space, swirl, schedule, x0=x0)
    results.append(_at_most(
        "quotient_ode_orientation_frozen", np.max(oracles.orientation_drift(ode)), 1e-5))
    results.append(_at_most(
        "quotient_ode_frame_rotation", np.max(ode.frame_rot_angle), 1e-6))
    silent = samplers.sample(
        dataclasses.replace(config, mode=samplers.MODE_SDE, noise_scale=0.0),
        space, swirl, schedule, x0=x0)
    results.append(_at_most(
        "sde_without_noise_equals_ode", np.max(np.abs(silent.states - ode.states)), 0.0))

    starts = _nondegenerate_clouds(space, rng, settings.n_pairs)
    lengths = {}
    for variant in VARIANTS:
        paired = dataclasses.replace(config, variant=variant, keep_states=False)
        lengths[variant] = samplers.trajectory_length(
            samplers.sample(paired, space, swirl, schedule, x0=starts))
    shorter = np.mean(
        lengths[samplers.VARIANT_QUOTIENT]
        <= lengths[samplers.VARIANT_CONVENTIONAL] * (1.0 + 1e-12))
    results.append(_at_least(
        "quotient_trajectory_shorter", shorter, SHORTER_FRACTION_THRESHOLD))

    start = moment_matched_noise(space, rng, settings.n_covariance)
    finals = {}
    for variant in VARIANTS:
        recovery = dataclasses.replace(config, variant=variant, keep_states=False)
        finals[variant] = samplers.sample(recovery, space, exact, schedule, x0=start).final
        results.append(_at_most(
            "gaussian_ode_covariance_%s" % variant,
            covariance_error(space, finals[variant], 1.0), COVARIANCE_THRESHOLD))
    test = oracles.energy_permutation_test(
        oracles.shape_descriptor(finals[samplers.VARIANT_CONVENTIONAL]),
        oracles.shape_descriptor(finals[samplers.VARIANT_QUOTIENT]), rng=rng)
    results.append(_at_most(
        "gaussian_samplers_descriptor_energy", test.statistic, test.quantile(0.95)))

    seed = int(rng.integers(2 ** 31))
    errors = {}
    for curvature in (True, False):
        ablation = samplers.SamplerConfig(
            mode=samplers.MODE_SDE, variant=samplers.VARIANT_QUOTIENT, steps=settings.steps,
            curvature=curvature, keep_states=False, seed=seed)
        final = samplers.sample(ablation, space, exact, schedule, x0=start).final
        errors[curvature] = covariance_error(space, final, 1.0)
    ratio = errors[True] / errors[False]
    results.append(CheckResult(
        "curvature_drift_improves_covariance", float(ratio), 1.0, bool(ratio < 1.0)))
    return results


CHECK_GROUPS = (
    ("projection", _projection_checks),
    ("curvature", _curvature_checks),
    ("equivariance", _equivariance_checks),
    ("kabsch", _kabsch_checks),
    ("losses", _loss_checks),
    ("conditional_expectation", _conditional_expectation_checks),
    ("samplers", _sampler_checks),
)


GEOMETRY_DEBUG_HEADER = (
    ["cloud_index", "point_index", "x", "y", "z", "curvature_x", "curvature_y", "curvature_z"]
    + ["k_%s%s" % (row, column) for row in "xyz" for column in "xyz"]
    + ["k_trace", "k_min_eigenvalue"])


def _geometry_debug_rows(rng, settings):
    space = symmetry_geometry.ShapeSpace(settings.min_points)
    x = _nondegenerate_clouds(space, rng, 4)
    curvature = space.mean_curvature(x)
    inertia = symmetry_geometry.inertia_matrix(x)
    smallest = np.linalg.eigvalsh(inertia)[:, 0]
    for index, cloud in enumerate(x):
        for point_index, point in enumerate(cloud):
            yield (
                [index, point_index] + list(point) + list(curvature[index, point_index])
                + list(inertia[index].ravel())
                + [np.trace(inertia[index]), smallest[index]])


def cmd_verify(config):
    """Runs the invariant suite and writes oracle_report.json.

    Returns:
        0 if every check passes, 1 otherwise.
    """
    run = ArtifactWriter("verify", config)
    settings = config.verify
    rng = np.random.default_rng([config.seed, 5])
    checks = []
    for group, function in CHECK_GROUPS:
        logger.info("Running %s checks", group)
        try:
            checks.extend(function(rng, settings))
        except Exception:
            logger.error(
                "Exception occurred while running %s checks:\n%s",
                group, traceback.format_exc())
            checks.append(CheckResult(group + "_checks_completed", 0.0, 1.0, False))
    for check in checks:
        log = logger.info if check.passed else logger.error
        log("%s %s: value %.6g, threshold %.6g",
            "PASS" if check.passed else "FAIL", check.name, check.value, check.threshold)

    run.json(ORACLE_REPORT_FILENAME, [check.to_dict() for check in checks])
    run.csv(
        "geometry_debug.csv",
        GEOMETRY_DEBUG_HEADER,
        _geometry_debug_rows(rng, settings))
    failed = [check.name for check in checks if not check.passed]
    run.finish({"checks": len(checks), "failed": failed})
    if failed:
        logger.error("%d of %d checks failed: %s", len(failed), len(checks), ", ".join(failed))
        return 1
    logger.info("All %d checks passed", len(checks))
    return 0
