#!/usr/bin/env python3
"""
XAI Inversion CLI - run the inversion experiment stage by stage
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict

from rich.console import Console
from rich.table import Table

from . import __version__
from .core.config import ExperimentConfig, load_config
from .core.exceptions import XAIInversionError
from .core.logging import configure_logging
from .pipeline.stages import STAGES, render_explanations, run_pipeline, run_stage

console = Console(stderr=True)
logger = logging.getLogger("xai_inversion.cli")


def _config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Any] = {"run.seed": args.seed}
    return load_config(args.config, overrides)


def _print_records(records) -> None:
    table = Table(title="Stages")
    table.add_column("Stage", style="cyan")
    table.add_column("Seconds", justify="right")
    table.add_column("Artifacts", style="green")
    for record in records:
        table.add_row(record.stage, f"{record.seconds:.1f}", str(len(record.artifacts)))
    console.print(table)


def stage_command(args: argparse.Namespace) -> None:
    """Run a single stage"""
    config = _config(args)
    record = run_stage(config, args.command)
    _print_records([record])
    console.print(f"Run directory: [bold]{config.run_dir()}[/bold]")


def run_command(args: argparse.Namespace) -> None:
    """Run the whole pipeline, or the stages given with --stage"""
    config = _config(args)
    records = run_pipeline(config, args.stage)
    _print_records(records)
    console.print(f"Run directory: [bold]{config.run_dir()}[/bold]")


def render_explanations_command(args: argparse.Namespace) -> None:
    """Write explanation heatmaps"""
    paths = render_explanations(_config(args), args.count)
    console.print(f"Wrote {len(paths)} heatmaps")


def version_command(_: argparse.Namespace) -> None:
    """Show version information"""
    console.print(f"XAI Inversion CLI v{__version__}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", "-c", type=str, default=None,
        help="TOML configuration (default: $XAI_INVERSION_CONFIG or config/mnist.toml)"
    )
    parser.add_argument("--seed", type=int, default=None, help="Override run.seed")
    parser.add_argument(
        "--log-level", type=str, default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Log level (default: INFO)"
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per stage"""
    parser = argparse.ArgumentParser(
        prog="xai-inversion",
        description="XAI Inversion - model inversion attacks that exploit explanations"
    )
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    version_parser = subparsers.add_parser("version", help="Show version information")
    version_parser.set_defaults(func=version_command)

    for stage in STAGES:
        stage_parser = subparsers.add_parser(stage, help=f"Run the {stage} stage")
        _add_common(stage_parser)
        stage_parser.set_defaults(func=stage_command)

    run_parser = subparsers.add_parser("run", help="Run the pipeline end to end")
    _add_common(run_parser)
    run_parser.add_argument(
        "--stage", "-s", type=str, action="append", choices=list(STAGES),
        help="Run only this stage (repeatable, runs in the order given)"
    )
    run_parser.set_defaults(func=run_command)

    render_parser = subparsers.add_parser("render-explanations", help="Write explanation heatmaps")
    _add_common(render_parser)
    render_parser.add_argument("--count", "-n", type=int, default=4, help="Images to explain (default: 4)")
    render_parser.set_defaults(func=render_explanations_command)
    return parser


def main(argv=None) -> int:
    """Main entry point for the CLI"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not hasattr(args, "func"):
        parser.print_help()
        return 2

    configure_logging(getattr(args, "log_level", "INFO"))
    try:
        args.func(args)
    except XAIInversionError as e:
        console.print(f"[bold red]Error:[/bold red] {e.message}")
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return 1
    except Exception as e:
        logger.debug("Unhandled error", exc_info=True)
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        console.print(f"[bold red]Error:[/bold red] {str(e)}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
