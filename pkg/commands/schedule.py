# commands/schedule.py
"""`schedule`: sample sizes or truncation points for a target accuracy."""
import logging

from mcco_services.mlmc_value import truncation_schedule
from mcco_services.saa import saa_schedule
from mcco_services.utils.input_validator import load_constants, parse_float_list
from .common import emit

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("schedule", help="print the SAA or MLMC configuration reaching accuracy epsilon")
    parser.add_argument("--epsilon", type=float, required=True)
    parser.add_argument("--constants", required=True, help="JSON file with the problem constants")
    parser.add_argument("--estimator", choices=["saa", "mlmc"], default="mlmc")
    parser.add_argument("--smooth", action="store_true", help="use the smooth-integrand bounds")
    parser.add_argument("--mode", choices=["mse", "highprob"], default="mse")
    parser.add_argument("--beta", type=float, default=None, help="failure probability of the high-probability mode")
    parser.add_argument("--rates", default=None, help="MLMC rates (default: 1/2, or the smooth defaults)")
    parser.set_defaults(handler=cmd_schedule)


def cmd_schedule(args) -> int:
    constants = load_constants(args.constants)
    if args.estimator == "saa":
        config = saa_schedule(args.epsilon, constants, args.smooth, mode=args.mode, beta=args.beta)
        emit({"estimator": "saa", "n": config.n, "scenarios": config.scenario_count})
        return 0
    schedule = truncation_schedule(
        args.epsilon, constants, args.smooth, mode=args.mode, rates=parse_float_list(args.rates), beta=args.beta,
    )
    emit({"estimator": "mlmc", **schedule.model_dump()})
    return 0
