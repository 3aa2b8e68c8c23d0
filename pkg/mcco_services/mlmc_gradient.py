# mcco_services/mlmc_gradient.py
"""Coupled value/gradient multilevel estimator and the admissible gradient rates."""
import logging
from typing import List, Optional, Sequence

import numpy as np

from errors import DimensionMismatch, EmptyWindow, NonFinite
from models import GradientReport, MlmcConfig, RateWindow
from .core import MccoProblem, as_decision, validate_problem
from .mlmc_value import expected_cost
from .randomness import RngStream, level_moment
from .recursion import check_expected_cost, run_mlmc_forest

logger = logging.getLogger(__name__)


def independent_expected_cost(config: MlmcConfig) -> float:
    """Expected paths when the Jacobian arguments come from a second child set.

    Per stage-t node, v_t = E[2^lambda_t] v_{t+1} counts the value-only subtree and
    c_t = E[2^lambda_t] (c_{t+1} + v_{t+1}) the gradient subtree, with c_T = v_T = 1.
    """
    c, v = 1.0, 1.0
    for level in reversed(config.levels):
        moment = level_moment(level)
        c, v = moment * (c + v), moment * v
    return config.n1 * c


def grad_rate_window(T: int, rho: Sequence[float]) -> List[RateWindow]:
    """Open interval (1/2, upper) of admissible rates per stage t = 1..T-1, with its midpoint."""
    if len(rho) != T - 1:
        raise DimensionMismatch(None, f"{len(rho)} Hölder exponents supplied for {T - 1} branching stages")
    windows = []
    for t in range(1, T):
        rho_t = float(rho[t - 1])
        rho_prev = float(rho[t - 2]) if t >= 2 else 0.0
        if rho_t <= 1.0 - 2.0 ** (1 - t) or rho_t > 1.0:
            raise EmptyWindow(t, f"exponent {rho_t} outside ({1.0 - 2.0 ** (1 - t)}, 1]")
        first = 1.0 - 2.0 ** (-(2.0 ** (t - 1)) * (rho_t + 1.0) / (2.0 ** t - 1.0))
        scaled = 2.0 ** t * (rho_prev + 1.0)
        second = 1.0 - 2.0 ** (-scaled / (scaled - 1.0))
        upper = min(first, second)
        if upper <= 0.5:
            raise EmptyWindow(t, f"upper rate bound {upper:.6f} does not exceed 1/2")
        windows.append(RateWindow(stage=t, lower=0.5, upper=upper, default=0.5 * (0.5 + upper)))
    return windows


def _check_rates(config: MlmcConfig, rho: Sequence[float]) -> None:
    for window, level in zip(grad_rate_window(len(config.levels) + 1, rho), config.levels):
        if not window.lower < level.rate < window.upper:
            logger.warning(
                f"Stage {window.stage}: gradient rate {level.rate} outside ({window.lower}, {window.upper:.4f}); "
                f"the estimator variance may be infinite."
            )


def mlmc_gradient_estimate(
    problem: MccoProblem,
    x,
    config: MlmcConfig,
    stream: RngStream,
    *,
    independent: bool = False,
    rho: Optional[Sequence[float]] = None,
    threads: Optional[int] = None,
    budget: Optional[float] = None,
    level_cap: Optional[int] = None,
    allow_nonfinite: bool = False,
) -> GradientReport:
    """Mean of per-tree G_1 realizations; shares every sample with the value recursion unless independent.

    With allow_nonfinite the mean is returned even when some trees overflowed, so a caller
    such as the block-wise Adam can skip the affected coordinates.
    """
    validate_problem(problem, require_gradient=True)
    x = as_decision(problem, x)
    if rho is not None:
        _check_rates(config, rho)
    predicted = independent_expected_cost(config) if independent else expected_cost(config)
    check_expected_cost(predicted, budget)
    outcome = run_mlmc_forest(
        problem, x, config, stream,
        with_gradient=True, independent=independent,
        threads=threads, budget=budget, level_cap=level_cap,
    )
    bad = int(np.sum(~np.all(np.isfinite(outcome.gradients), axis=1)))
    if bad:
        if not allow_nonfinite:
            raise NonFinite(f"{bad} trees produced non-finite gradients")
        logger.warning(f"{bad} of {config.n1} trees produced non-finite gradients.")
    return GradientReport(
        gradient=outcome.gradients.mean(axis=0),
        tree_gradients=outcome.gradients,
        tree_values=outcome.values,
        scenario_count=int(outcome.scenarios),
        expected_cost=predicted,
        n1=config.n1,
        seed=stream.seed,
        wall_ms=outcome.wall_ms,
    )
