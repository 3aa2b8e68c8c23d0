# commands/common.py
"""Flags and output helpers shared by the subcommands."""
import argparse
import json
import logging
import sys
from typing import Any, Dict, Optional, Sequence

import numpy as np

from mcco_services.core import MccoProblem, as_decision
from mcco_services.problems import KINDS, build_problem
from mcco_services.utils.input_validator import load_problem_descriptor

logger = logging.getLogger(__name__)


def add_problem_flag(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument(
        "--problem", required=required,
        help=f"adapter descriptor JSON file, or one of: {', '.join(KINDS)}",
    )


def add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed (non-negative)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: MCCO_THREADS or all cores)")


def add_mlmc_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n1", type=int, default=None, help="number of trees")
    parser.add_argument("--rates", default=None, help="comma list of geometric rates r_1..r_{T-1}")
    parser.add_argument("--truncations", default=None, help="comma list of truncation points; 'inf' for untruncated")
    parser.add_argument("--block-size", type=int, default=None, help="trees per work block")


def load_problem(source: str) -> MccoProblem:
    return build_problem(load_problem_descriptor(source, KINDS))


def resolve_point(problem: MccoProblem, values: Optional[Sequence[float]]) -> np.ndarray:
    """The given decision vector, else the problem's reference point."""
    if values is None:
        if problem.reference_point is None:
            raise ValueError(f"problem '{problem.name}' has no reference point; pass --x")
        return np.asarray(problem.reference_point, dtype=float)
    return as_decision(problem, values)


def emit(payload: Dict[str, Any]) -> None:
    """Print a JSON document on stdout."""
    json.dump(payload, sys.stdout, indent=2, default=_default)
    sys.stdout.write("\n")


def _default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
