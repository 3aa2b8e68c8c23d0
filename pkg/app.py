# app.py
"""Assembles the command-line interface from the command modules and maps failures to exit codes."""
import argparse
import logging
import sys
from typing import List, Optional

from config import settings
from errors import exit_code_for
from commands import estimate, experiment, optimize, schedule, tune
from mcco_services import __version__

logger = logging.getLogger(__name__)

COMMAND_MODULES = (estimate, optimize, experiment, schedule, tune)


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcco",
        description="Nested conditional-expectation estimation and optimization with SAA and randomized MLMC.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides MCCO_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.MCCO_LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.handler(args) or 0)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        print(f"error: {' '.join(str(e).split())}", file=sys.stderr)
        return code
