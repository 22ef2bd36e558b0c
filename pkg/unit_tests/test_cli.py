# Copyright 2026 The quotient-diffusion authors.
# See LICENSE file for licensing details.

"""Module defining tests for the command-line entry point."""

import pathlib
import tempfile
from unittest import mock

from quotient_diffusion.v0 import cli, experiments, objectives, testing


class TestCli(testing.BaseQuotientTestCase):
    """Tests `cli.main()` exit codes and argument plumbing."""

    def setUp(self):
        super().setUp()
        scratch = tempfile.TemporaryDirectory()
        self.addCleanup(scratch.cleanup)
        self.tmpdir = pathlib.Path(scratch.name)
        self.patch(cli.logging, "basicConfig")

    def test_get_logging_level(self):
        """Tests `cli.get_logging_level()`."""
        self.assertEqual(cli.get_logging_level("debug"), "DEBUG")
        with self.assertLogs(cli.logger, level="WARNING"):
            self.assertIsNone(cli.get_logging_level("LOUD"))

    def test_parser(self):
        """Tests `cli.build_parser()`."""
        parser = cli.build_parser()
        args = parser.parse_args([
            "sample", "--checkpoint", "c.json", "--mode", "sde", "--variant", "quotient",
            "--seed", "4"])
        self.assertEqual(
            (args.command, args.checkpoint, args.mode, args.variant, args.seed),
            ("sample", "c.json", "sde", "quotient", 4))
        self.assertEqual(parser.parse_args(["verify"]).log_level, "INFO")

        # Bad inputs:
        with self.assertRaises(SystemExit):
            parser.parse_args([])
        with self.assertRaises(SystemExit):
            parser.parse_args(["sample", "--mode", "pc"])

    def test_invalid_log_level(self):
        """Tests that an unknown log level is a usage error."""
        verify = self.patch(experiments, "cmd_verify")
        self.assertEqual(cli.main(["verify", "--log-level", "LOUD"]), cli.EXIT_USAGE)
        verify.assert_not_called()

    def test_verify_exit_code(self):
        """Tests that `verify` returns the suite's exit code."""
        verify = self.patch(experiments, "cmd_verify", return_value=1)
        out = str(self.tmpdir / "verify")
        self.assertEqual(cli.main(["verify", "--seed", "7", "--out", out]), 1)
        config = verify.call_args[0][0]
        self.assertEqual((config.seed, config.out), (7, out))

        verify.return_value = 0
        self.assertEqual(cli.main(["verify"]), cli.EXIT_OK)

    def test_sample_arguments(self):
        """Tests that `sample` forwards its options."""
        sample = self.patch(experiments, "cmd_sample")
        self.assertEqual(
            cli.main(["sample", "--checkpoint", "c.json", "--mode", "sde"]), cli.EXIT_OK)
        sample.assert_called_once_with(
            mock.ANY, checkpoint="c.json", mode="sde", variant=None)

    def test_command_defaults(self):
        """Tests that each demo runs on its own defaults."""
        driver = self.patch(experiments, "cmd_shape_demo")
        self.assertEqual(cli.main(["shape-demo"]), cli.EXIT_OK)
        self.assertEqual(driver.call_args[0][0].space.kind, "so3")

    def test_config_errors(self):
        """Tests that configuration problems are usage errors."""
        train = self.patch(experiments, "cmd_train")
        missing = str(self.tmpdir / "missing.yaml")
        with self.assertLogs(cli.logger, level="ERROR"):
            self.assertEqual(cli.main(["train", "--config", missing]), cli.EXIT_USAGE)

        path = self.tmpdir / "config.yaml"
        path.write_text("train:\n  lrr: 0.1\n")
        with self.assertLogs(cli.logger, level="ERROR") as logs:
            self.assertEqual(cli.main(["train", "--config", str(path)]), cli.EXIT_USAGE)
        self.assertIn("train.lrr", logs.output[0])
        train.assert_not_called()

        train.side_effect = experiments.ConfigError("bad")
        self.assertEqual(cli.main(["train"]), cli.EXIT_USAGE)

    def test_invalid_training_settings(self):
        """Tests that bad activations and loss/schedule pairs are usage errors."""
        train = self.patch(experiments, "cmd_train")
        path = self.tmpdir / "config.yaml"
        for text, message in [
                ("train:\n  activation: relu\n", "activation"),
                ("schedule: general-bridge\ntrain:\n  loss: geodiff_align\n", "one-sided")]:
            path.write_text(text)
            with self.assertLogs(cli.logger, level="ERROR") as logs:
                self.assertEqual(cli.main(["train", "--config", str(path)]), cli.EXIT_USAGE)
            self.assertIn(message, logs.output[0])
        train.assert_not_called()

    def test_driver_failures(self):
        """Tests the exit codes of I/O errors and diverged training."""
        train = self.patch(experiments, "cmd_train", side_effect=OSError("disk full"))
        with self.assertLogs(cli.logger, level="ERROR"):
            self.assertEqual(cli.main(["train"]), cli.EXIT_USAGE)

        train.side_effect = objectives.TrainingDivergedError("loss is nan")
        with self.assertLogs(cli.logger, level="ERROR"):
            self.assertEqual(cli.main(["train"]), cli.EXIT_CHECKS_FAILED)
