# commands/optimize.py
"""`optimize`: projected SGD or block-wise Adam on MLMC gradient estimates."""
import logging

import numpy as np

from models import AdamBlock, AdamConfig, MlmcConfig, SgdConfig
from mcco_services.mlmc_gradient import mlmc_gradient_estimate
from mcco_services.optimizer import BANDIT_START, adam_run, bandit_adam_config, projected_sgd, sgd_config_for_horizon
from mcco_services.randomness import root_stream
from mcco_services.utils.input_validator import load_json, parse_float_list, parse_truncations
from mcco_services.utils.report_writer import write_json, write_table
from .common import add_mlmc_flags, add_problem_flag, add_run_flags, emit, load_problem, resolve_point

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("optimize", help="minimize F over the feasible set with stochastic gradients")
    add_problem_flag(parser)
    parser.add_argument("--method", choices=["sgd", "adam"], default="sgd")
    add_mlmc_flags(parser)
    parser.add_argument("--iterations", type=int, default=100, help="iteration count K")
    parser.add_argument("--eta", type=float, default=0.01, help="SGD stepsize, or the Adam learning rate without --adam-config")
    parser.add_argument("--schedule", choices=["constant", "inverse_sqrt"], default="constant")
    parser.add_argument("--nu-bar", type=float, default=None, help="variance bound; sets the SGD stepsize to nu_bar sqrt(n1 / K)")
    parser.add_argument("--adam-config", default=None, help="JSON file with an AdamConfig (blocks, betas)")
    parser.add_argument("--x0", default=None, help="starting point (default: the problem's reference point)")
    parser.add_argument("--allow-nonfinite", action="store_true", help="let Adam skip overflowing gradient blocks")
    add_run_flags(parser)
    parser.add_argument("--out", default=None, help="trajectory CSV path")
    parser.add_argument("--summary", default=None, help="JSON summary path")
    parser.set_defaults(handler=cmd_optimize)


def _adam_config(args, problem) -> AdamConfig:
    if args.adam_config:
        payload = load_json(args.adam_config)
        payload.setdefault("iterations", args.iterations)
        return AdamConfig.model_validate(payload)
    if problem.name == "bandits":
        return bandit_adam_config(args.iterations)
    block = AdamBlock(name="x", indices=list(range(problem.decision_dim)), lr=args.eta)
    return AdamConfig(iterations=args.iterations, blocks=[block])


def cmd_optimize(args) -> int:
    problem = load_problem(args.problem)
    if args.n1 is None:
        raise ValueError("--n1 is required")
    rates = parse_float_list(args.rates) or []
    truncations = parse_truncations(args.truncations) or [None] * len(rates)
    extra = {"block_size": args.block_size} if args.block_size else {}
    mlmc = MlmcConfig.from_rates(args.n1, rates, truncations, **extra)

    def oracle(x, stream):
        return mlmc_gradient_estimate(
            problem, x, mlmc, stream, threads=args.threads, allow_nonfinite=args.allow_nonfinite,
        )

    start = parse_float_list(args.x0)
    if start is None and problem.name == "bandits":
        start = list(BANDIT_START)
    x0 = resolve_point(problem, start)
    stream = root_stream(args.seed)
    if args.method == "sgd":
        if args.nu_bar is not None:
            method_config = sgd_config_for_horizon(args.nu_bar, args.n1, args.iterations, args.schedule)
        else:
            method_config = SgdConfig(K=args.iterations, eta=args.eta, schedule=args.schedule)
        result = projected_sgd(problem, x0, method_config, oracle, stream)
    else:
        method_config = _adam_config(args, problem)
        result = adam_run(problem, x0, method_config, oracle, stream)

    if args.out:
        scenarios = [0] + result.scenario_counts
        rows = [
            {"iteration": k, "scenarios": scenarios[k], **{f"x{j}": float(v) for j, v in enumerate(point)}}
            for k, point in enumerate(result.trajectory)
        ]
        write_table(args.out, rows)
    payload = {
        "method": args.method,
        "output": np.asarray(result.output).tolist(),
        "total_scenarios": result.total_scenarios,
        "skipped_updates": result.skipped_updates,
    }
    if args.summary:
        config = {"problem": args.problem, "mlmc": mlmc.model_dump(), "method": method_config.model_dump(),
                  "x0": x0.tolist()}
        write_json(args.summary, payload, seed=args.seed, config=config)
    emit(payload)
    return 0
