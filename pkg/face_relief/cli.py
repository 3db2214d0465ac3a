"""Command-line interface: argument parsing and subcommand dispatch."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Optional, Sequence

from face_relief import __version__
from face_relief.commands.corpus_cmds import cmd_generate, cmd_make_model, cmd_verify
from face_relief.commands.evaluate_cmds import cmd_evaluate
from face_relief.commands.reconstruct_cmds import cmd_calibrate, cmd_reconstruct, cmd_render
from face_relief.config import PipelineConfig
from face_relief.decorators import exit_on_error

logger = logging.getLogger(__name__)


def _global_options() -> argparse.ArgumentParser:
    """Flags accepted both before and after the subcommand name."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config document")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel records")
    common.add_argument("--corpus", type=Path, default=argparse.SUPPRESS, help="corpus directory")
    common.add_argument("--model", type=Path, default=argparse.SUPPRESS, help="model container")
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS, help="plan only, write nothing")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS, help="debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options()
    parser = argparse.ArgumentParser(
        prog="relief",
        description="Near-light photometric stereo for detailed face surfaces.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[common], help="render a synthetic corpus")
    gen.add_argument("--count", type=int, help="number of records")
    gen.add_argument("--resolution", type=int, help="image width and height in pixels")
    gen.set_defaults(handler=cmd_generate)

    rec = sub.add_parser("reconstruct", parents=[common], help="reconstruct one or all records")
    rec.add_argument("record_id", nargs="?")
    rec.add_argument("--all", action="store_true", help="every record in the manifest")
    rec.add_argument("--subset", help="light subset, e.g. S1, S23, S123")
    rec.add_argument("--lights-known", action="store_true", help="skip calibration, use true lights")
    rec.set_defaults(handler=cmd_reconstruct)

    ev = sub.add_parser("evaluate", parents=[common], help="metric report for a reconstruction")
    ev.add_argument("record_id", nargs="?")
    ev.add_argument("--all", action="store_true", help="every record, plus summary.json")
    ev.add_argument("--subset", help="light subset of the reconstruction")
    ev.add_argument("--self-check", action="store_true", help="compare ground truth with itself")
    ev.set_defaults(handler=cmd_evaluate)

    ren = sub.add_parser("render", parents=[common], help="render previews of a record")
    ren.add_argument("record_id")
    ren.add_argument("--source", choices=("truth", "recon"), default="truth")
    ren.add_argument("--subset", help="light subset of the reconstruction (--source recon)")
    ren.add_argument("--shadows", action="store_true", help="ray-cast shadows")
    ren.set_defaults(handler=cmd_render)

    cal = sub.add_parser("calibrate", parents=[common], help="estimate a record's lights")
    cal.add_argument("record_id")
    cal.add_argument("--subset", help="light subset to calibrate")
    cal.set_defaults(handler=cmd_calibrate)

    mm = sub.add_parser("make-model", parents=[common], help="write the procedural face model")
    mm.add_argument("--out", type=Path, required=True)
    mm.add_argument("--grid", type=int, help="vertices per side")
    mm.set_defaults(handler=cmd_make_model)

    ver = sub.add_parser("verify", parents=[common], help="check corpus files against the manifest")
    ver.set_defaults(handler=cmd_verify)
    return parser


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    if getattr(args, "corpus", None) is not None:
        config.corpus_dir = args.corpus
    if getattr(args, "model", None) is not None:
        config.model_path = args.model
    if getattr(args, "count", None) is not None:
        config.count = args.count
    if getattr(args, "resolution", None) is not None:
        config.resolution = args.resolution


@exit_on_error
def _dispatch(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(getattr(args, "config", None))
    _apply_overrides(config, args)
    config.log_summary()
    return args.handler(args, config)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse *argv* and run the subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else 2
    args.dry_run = getattr(args, "dry_run", False)
    args.verbose = getattr(args, "verbose", False)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    return _dispatch(args)
