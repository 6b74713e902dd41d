"""
Tests for the command-line interface.
"""

import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import toml

from xai_inversion.cli import build_parser, main


class TestCLI(unittest.TestCase):
    """Tests for exit codes and error reporting."""

    def setUp(self):
        """Write a configuration pointing at a fresh output directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config_path = self.root / "experiment.toml"
        self.config_path.write_text(
            toml.dumps(
                {
                    "dataset": {"profile": "mnist", "source": str(self.root / "mnist")},
                    "run": {"output_dir": str(self.root / "runs")},
                }
            )
        )

    def tearDown(self):
        self.tmp.cleanup()

    def run_cli(self, *argv):
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            code = main(list(argv))
        return code, stderr.getvalue()

    def error_payload(self, output: str):
        lines = [line for line in output.splitlines() if line.startswith("{")]
        self.assertTrue(lines, output)
        return json.loads(lines[-1])

    def test_version(self):
        """Test the version command."""
        code, _ = self.run_cli("version")
        self.assertEqual(code, 0)

    def test_no_command(self):
        """Test that a bare invocation prints help and exits with 2."""
        with contextlib.redirect_stdout(io.StringIO()):
            code = main([])
        self.assertEqual(code, 2)

    def test_stage_before_prerequisite(self):
        """Test that a stage run too early exits with 1 and names the missing stage."""
        code, output = self.run_cli("breach", "--config", str(self.config_path), "--log-level", "ERROR")
        self.assertEqual(code, 1)
        payload = self.error_payload(output)
        self.assertEqual(payload["error"], "PrerequisiteError")
        self.assertEqual(payload["details"]["required"], "train-target")

    def test_missing_config(self):
        """Test that an explicitly named but missing config file is an error."""
        code, output = self.run_cli("train-target", "--config", str(self.root / "absent.toml"), "--log-level", "ERROR")
        self.assertEqual(code, 1)
        self.assertEqual(self.error_payload(output)["error"], "ConfigurationError")

    def test_unexpected_error(self):
        """Test that a failure outside the package hierarchy still exits with 1 and a JSON payload."""
        failure = RuntimeError("corrupt checkpoint")
        with mock.patch("xai_inversion.cli.run_stage", side_effect=failure):
            code, output = self.run_cli("evaluate", "--config", str(self.config_path), "--log-level", "ERROR")
        self.assertEqual(code, 1)
        self.assertEqual(self.error_payload(output), {"error": "RuntimeError", "message": "corrupt checkpoint"})

    def test_parser(self):
        """Test stage subcommands and repeated --stage options."""
        parser = build_parser()
        args = parser.parse_args(["run", "--stage", "breach", "--stage", "evaluate", "--seed", "3"])
        self.assertEqual(args.stage, ["breach", "evaluate"])
        self.assertEqual(args.seed, 3)
        self.assertEqual(parser.parse_args(["render-explanations", "-n", "2"]).count, 2)
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
            parser.parse_args(["run", "--stage", "deploy"])


if __name__ == "__main__":
    unittest.main()
