"""
Hires Edit - Command Line Entry Point
Tiled DDIM inversion and noise-dilated guided editing of high-resolution images.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from commands import run_command, setup_artifact_commands, setup_editing_commands, setup_inversion_commands

load_dotenv()

logger = logging.getLogger(__name__)


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the command parser."""
    parser = argparse.ArgumentParser(
        prog="hires-edit",
        description="Tiled DDIM inversion with noise-dilated guidance for high-resolution editing",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: HIRES_EDIT_LOG_LEVEL or INFO)",
    )

    subparsers = parser.add_subparsers(dest="command", required=True)
    setup_inversion_commands(subparsers)
    setup_editing_commands(subparsers)
    setup_artifact_commands(subparsers)
    return parser


def configure_logging(level: Optional[str]) -> None:
    level = level or os.getenv("HIRES_EDIT_LOG_LEVEL", "INFO")
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.log_level)
    args.argv = argv
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
