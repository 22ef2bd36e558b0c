# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Command-line entry point: `quotient-diffusion <command> [options]`."""

import argparse
import logging
import sys
import traceback

from quotient_diffusion.v0 import experiments, objectives, samplers

# Increment this major API version when introducing breaking changes
LIBAPI = 0

# Increment this PATCH version before tagging a release, or reset
# to 0 if you are raising the major API version
LIBPATCH = 2

logger = logging.getLogger(__name__)

VALID_LOG_LEVEL_SETTINGS = ["DEBUG", "INFO", "WARNING", "ERROR"]

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_logging_level(value):
    """Validates a logging level name.

    Returns:
        The upper-cased level name, or None if it is not a valid setting.
    """
    level = str(value).upper()
    if level not in VALID_LOG_LEVEL_SETTINGS:
        logger.warning(
            "Invalid logging level '%s'. Valid logging levels are: %s",
            value, VALID_LOG_LEVEL_SETTINGS)
        return None
    return level


def _add_common_arguments(parser):
    parser.add_argument("--config", help="path of a YAML config file")
    parser.add_argument("--seed", type=int, help="seed overriding the config file")
    parser.add_argument("--out", help="output directory (default: runs/<command>)")
    parser.add_argument(
        "--log-level", default="INFO",
        help="one of %s (default: INFO)" % ", ".join(VALID_LOG_LEVEL_SETTINGS))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="quotient-diffusion",
        description="Diffusion and flow models on quotient spaces of point clouds.")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True
    for name, help_text in (
            ("verify", "run the invariant and oracle suite"),
            ("so2-demo", "conventional vs quotient models on a planar two-ring target"),
            ("shape-demo", "quotient training and SDE sampling of a rotated template"),
            ("gaussian-exact", "exact-denoiser study of covariance and path length"),
            ("train", "train one denoiser and write a checkpoint")):
        _add_common_arguments(commands.add_parser(name, help=help_text))
    sample = commands.add_parser("sample", help="sample from a checkpoint")
    _add_common_arguments(sample)
    sample.add_argument("--checkpoint", help="checkpoint written by the train command")
    sample.add_argument("--mode", choices=samplers.VALID_MODES)
    sample.add_argument("--variant", choices=samplers.VALID_VARIANTS)
    return parser


def _run(args, config):
    if args.command == "verify":
        return experiments.cmd_verify(config)
    if args.command == "sample":
        experiments.cmd_sample(
            config, checkpoint=args.checkpoint, mode=args.mode, variant=args.variant)
        return EXIT_OK
    drivers = {
        "so2-demo": experiments.cmd_so2_demo,
        "shape-demo": experiments.cmd_shape_demo,
        "gaussian-exact": experiments.cmd_gaussian_exact,
        "train": experiments.cmd_train,
    }
    drivers[args.command](config)
    return EXIT_OK


def main(argv=None):
    """Parses arguments, runs the command and returns the process exit code."""
    args = build_parser().parse_args(argv)
    level = get_logging_level(args.log_level)
    if level is None:
        return EXIT_USAGE
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        config = experiments.load_config(
            args.config, command=args.command, seed=args.seed, out=args.out)
        return _run(args, config)
    except experiments.ConfigError as ex:
        logger.error("Configuration error: %s", ex)
        return EXIT_USAGE
    except OSError:
        logger.error("I/O error:\n%s", traceback.format_exc())
        return EXIT_USAGE
    except objectives.TrainingDivergedError as ex:
        logger.error("Training diverged: %s", ex)
        return EXIT_CHECKS_FAILED


if __name__ == "__main__":
    sys.exit(main())
