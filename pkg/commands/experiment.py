# commands/experiment.py
"""`experiment`: the desk-scale reproductions with pass/fail summaries."""
import logging

from mcco_services.experiments import ExperimentService
from mcco_services.utils.input_validator import parse_truncations
from .common import emit

logger = logging.getLogger(__name__)

# flags each experiment accepts as overrides
OVERRIDES = {
    "synthetic": ("n1",),
    "bermudan": ("n1", "truncation", "rate"),
    "bandits": ("n1", "seeds", "iterations"),
    "slopes": ("reps",),
}


def register(subparsers) -> None:
    parser = subparsers.add_parser("experiment", help="run a named reproduction and check its tolerances")
    parser.add_argument("name", choices=sorted(OVERRIDES))
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out-dir", default=None, help="artifact root (default: MCCO_OUTPUT_DIR)")
    parser.add_argument("--n1", type=int, default=None)
    parser.add_argument("--truncation", default=None, help="truncation point for every stage; 'inf' for untruncated")
    parser.add_argument("--rate", type=float, default=None)
    parser.add_argument("--reps", type=int, default=None)
    parser.add_argument("--seeds", type=int, default=None, help="independent optimizer runs")
    parser.add_argument("--iterations", type=int, default=None)
    parser.add_argument("--no-check", action="store_true", help="write the summary without failing on tolerances")
    parser.set_defaults(handler=cmd_experiment)


def _overrides(args) -> dict:
    given = {}
    for flag in ("n1", "truncation", "rate", "reps", "seeds", "iterations"):
        value = getattr(args, flag)
        if value is None:
            continue
        if flag not in OVERRIDES[args.name]:
            raise ValueError(f"--{flag} does not apply to the '{args.name}' experiment")
        given[flag] = parse_truncations(value)[0] if flag == "truncation" else value
    return given


def cmd_experiment(args) -> int:
    service = ExperimentService(out_dir=args.out_dir, threads=args.threads)
    summary = service.run(args.name, seed=args.seed, strict=not args.no_check, **_overrides(args))
    emit({"name": summary.name, "passed": summary.passed, "results": summary.results, "artifacts": summary.artifacts})
    return 0
