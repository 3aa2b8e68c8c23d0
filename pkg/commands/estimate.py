# commands/estimate.py
"""`estimate` and `gradient`: one estimator run, written as a JSON record and/or a CSV row."""
import argparse
import logging

from mcco_services.mlmc_gradient import mlmc_gradient_estimate
from mcco_services.mlmc_value import mlmc_value_estimate
from mcco_services.problems import KINDS, build_problem
from mcco_services.randomness import root_stream
from mcco_services.saa import saa_estimate
from mcco_services.utils.input_validator import (
    RunConfig,
    load_problem_descriptor,
    parse_float_list,
    parse_int_list,
    parse_truncations,
)
from mcco_services.utils.report_writer import append_csv, estimate_row, read_json, report_payload, write_json
from .common import add_mlmc_flags, add_problem_flag, add_run_flags, emit, resolve_point

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    estimate = subparsers.add_parser("estimate", help="estimate F(x) with SAA or truncated MLMC")
    add_problem_flag(estimate, required=False)
    estimate.add_argument("--estimator", choices=["saa", "mlmc"], default="mlmc")
    add_mlmc_flags(estimate)
    estimate.add_argument("--n", default=None, help="SAA branching factors n_1..n_T")
    _add_common(estimate)
    estimate.add_argument("--from-report", default=None, help="re-run the configuration embedded in a JSON report")
    estimate.set_defaults(handler=cmd_estimate)

    gradient = subparsers.add_parser("gradient", help="estimate grad F(x) with the coupled MLMC recursion")
    add_problem_flag(gradient, required=False)
    add_mlmc_flags(gradient)
    gradient.add_argument("--independent", action="store_true", help="evaluate Jacobians on an independent child set")
    gradient.add_argument("--rho", default=None, help="Hölder exponents rho_1..rho_{T-1}; rates outside the window warn")
    _add_common(gradient)
    gradient.add_argument("--from-report", default=None, help="re-run the configuration embedded in a JSON report")
    gradient.set_defaults(handler=cmd_gradient)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--x", default=None, help="decision vector as a comma list (default: the problem's reference point)")
    add_run_flags(parser)
    parser.add_argument("--out", default=None, help="output path; .csv appends a row, anything else writes JSON")
    parser.add_argument("--include-trees", action="store_true", help="store per-tree realizations in the JSON record")


def _run_config(args, estimator: str) -> RunConfig:
    if args.from_report:
        record = read_json(args.from_report)
        if "config" not in record:
            raise ValueError(f"{args.from_report} carries no embedded configuration")
        config = RunConfig.model_validate(record["config"])
        logger.info(f"Re-running {config.estimator} from {args.from_report} with seed {config.seed}.")
        return config
    if not args.problem:
        raise ValueError("--problem is required unless --from-report is given")
    return RunConfig(
        problem=load_problem_descriptor(args.problem, KINDS),
        estimator=estimator,
        n1=args.n1,
        rates=parse_float_list(args.rates),
        truncations=parse_truncations(args.truncations),
        n=parse_int_list(getattr(args, "n", None)),
        x=parse_float_list(args.x),
        seed=args.seed,
        threads=args.threads,
        block_size=args.block_size,
        independent=getattr(args, "independent", False),
    )


def _write(args, report, config: RunConfig) -> None:
    if not args.out:
        return
    if args.out.endswith(".csv"):
        append_csv(args.out, [estimate_row(report)])
    else:
        write_json(args.out, report_payload(report, include_trees=args.include_trees), seed=config.seed,
                   config=config.model_dump())


def cmd_estimate(args) -> int:
    config = _run_config(args, args.estimator)
    if config.estimator == "mlmc-grad":
        raise ValueError("this report was produced by the gradient command")
    problem = build_problem(config.problem)
    x = resolve_point(problem, config.x)
    stream = root_stream(config.seed)
    if config.estimator == "saa":
        report = saa_estimate(problem, x, config.saa_config(), stream, threads=config.threads)
    else:
        report = mlmc_value_estimate(problem, x, config.mlmc_config(), stream, threads=config.threads)
    _write(args, report, config)
    emit(report_payload(report))
    return 0


def cmd_gradient(args) -> int:
    config = _run_config(args, "mlmc-grad")
    if config.estimator != "mlmc-grad":
        raise ValueError("this report was produced by the estimate command")
    problem = build_problem(config.problem)
    x = resolve_point(problem, config.x)
    report = mlmc_gradient_estimate(
        problem, x, config.mlmc_config(), root_stream(config.seed),
        independent=config.independent, rho=parse_float_list(getattr(args, "rho", None)), threads=config.threads,
    )
    if args.out and args.out.endswith(".csv"):
        raise ValueError("gradient reports are written as JSON")
    _write(args, report, config)
    emit(report_payload(report))
    return 0
