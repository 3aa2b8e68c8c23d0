# commands/tune.py
"""`tune-rates`: work-normalized rate selection over a grid."""
import logging

from mcco_services.analysis import tune_rate_worknorm
from mcco_services.randomness import root_stream
from mcco_services.utils.input_validator import parse_float_list, parse_grid, parse_truncations
from mcco_services.utils.report_writer import write_table
from .common import add_problem_flag, emit, load_problem

logger = logging.getLogger(__name__)

DEFAULT_GRID = "0.51:0.70:0.01"


def register(subparsers) -> None:
    parser = subparsers.add_parser("tune-rates", help="pick the rate minimizing the work-normalized second moment")
    add_problem_flag(parser)
    parser.add_argument("--surrogate", default=None, help="descriptor of a cheaper problem to measure instead")
    parser.add_argument("--grid", default=DEFAULT_GRID, help="start:stop:step or a comma list of rates")
    parser.add_argument("--truncations", required=True, help="truncation points M_1..M_{T-1}; 'inf' for untruncated")
    parser.add_argument("--replications", type=int, default=100_000)
    parser.add_argument("--x", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default=None, help="CSV of grid, work and fitted values")
    parser.set_defaults(handler=cmd_tune)


def cmd_tune(args) -> int:
    problem = load_problem(args.problem)
    surrogate = load_problem(args.surrogate) if args.surrogate else None
    result = tune_rate_worknorm(
        problem, parse_grid(args.grid), args.replications, parse_truncations(args.truncations), root_stream(args.seed),
        x=parse_float_list(args.x), surrogate=surrogate, threads=args.threads,
    )
    if args.out:
        write_table(args.out, [
            {"rate": r, "work": w, "fitted": f} for r, w, f in zip(result.grid, result.work, result.fitted)
        ])
    emit(result.model_dump())
    return 0
