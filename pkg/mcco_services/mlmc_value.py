# mcco_services/mlmc_value.py
"""Randomized truncated multilevel value estimator, its cost formula and its schedules."""
import logging
import math
from typing import List, Literal, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from errors import NonFinite
from models import EstimateReport, LevelDistribution, MlmcConfig, ProblemConstants, TruncationSchedule
from .core import MccoProblem, as_decision, validate_problem
from .randomness import RngStream, level_moment, level_pmf_array
from .recursion import Observer, check_expected_cost, run_mlmc_forest
from .utils.formulas import ceil_safe, log_stage_product
from .utils.input_validator import constants_validator

logger = logging.getLogger(__name__)

LOG2 = math.log(2.0)


def expected_cost(config: MlmcConfig) -> float:
    """n_1 prod_t E[2^lambda_t]: the mean number of root-to-leaf paths."""
    cost = float(config.n1)
    for level in config.levels:
        cost *= level_moment(level)
    return cost


def default_rates(T: int, smooth: bool) -> List[float]:
    """r_t = 1/2 for nonsmooth problems, 1 - 2^(-1 - 2^-t) for smooth ones, t = 1..T-1."""
    if T < 2:
        raise ValueError(f"rates are defined for T >= 2, got T={T}")
    if not smooth:
        return [0.5] * (T - 1)
    return [1.0 - 2.0 ** (-1.0 - 2.0 ** (-t)) for t in range(1, T)]


def mlmc_value_estimate(
    problem: MccoProblem,
    x,
    config: MlmcConfig,
    stream: RngStream,
    *,
    threads: Optional[int] = None,
    budget: Optional[float] = None,
    level_cap: Optional[int] = None,
    observer: Optional[Observer] = None,
) -> EstimateReport:
    validate_problem(problem)
    x = as_decision(problem, x)
    predicted = expected_cost(config)
    check_expected_cost(predicted, budget)
    outcome = run_mlmc_forest(
        problem, x, config, stream,
        threads=threads, budget=budget, level_cap=level_cap, observer=observer,
    )
    if not np.all(np.isfinite(outcome.values)):
        raise NonFinite(f"{int(np.sum(~np.isfinite(outcome.values)))} non-finite tree values")
    return EstimateReport(
        value=float(np.mean(outcome.values)),
        tree_values=outcome.values,
        scenario_count=int(outcome.scenarios),
        expected_cost=predicted,
        n1=config.n1,
        seed=stream.seed,
        estimator="mlmc",
        wall_ms=outcome.wall_ms,
    )


# --- Truncation schedules ---

def _log_z(rate: float, truncation: int) -> float:
    return math.log(-math.expm1((truncation + 1) * math.log1p(-rate))) - math.log(rate)


def _clamp(t: int, raw: int) -> int:
    if raw < 0:
        logger.warning(f"Stage {t}: truncation point {raw} from the recursion clamped to 0.")
        return 0
    return raw


def _nonsmooth_truncations(T, eps, constants, rates, lead) -> tuple:
    L = constants.L
    log_mu2 = math.log(constants.mu_bar[2])
    log_2b2 = math.log(2.0) + constants.log_b_constant(2)

    def log_c(t: int) -> float:
        # C_t = mu_bar^2 (2 B_2)^(T - t) L_[t:T-1]^2
        return log_mu2 + (T - t) * log_2b2 + 2.0 * log_stage_product(L, t, T - 1)

    M = [0] * (T - 1)
    tail = 0.0  # sum_{s > t} log sqrt(Z_s (M_s + 1))
    for t in range(T - 1, 0, -1):
        log_arg = (
            math.log(lead) + log_stage_product(L, 1, t) + 0.5 * log_c(t + 1) + tail
            + math.log((T - 1) / eps)
        )
        M[t - 1] = _clamp(t, ceil_safe(2.0 * log_arg / LOG2))
        tail += 0.5 * (_log_z(rates[t - 1], M[t - 1]) + math.log(M[t - 1] + 1))

    # mu_1^2 <= C_1 prod_t sum_l 1 / (2^l q_t(l))
    log_bound = log_c(1)
    for t in range(1, T):
        levels = np.arange(M[t - 1] + 1)
        q = _pmf(rates[t - 1], M[t - 1], levels)
        log_bound += float(logsumexp(-levels * LOG2 - np.log(q)))
    return M, log_bound


def _smooth_truncations(T, eps, constants, rates, lead, denom) -> tuple:
    L, S, dims = constants.L or [], constants.S, constants.dims
    log_mu = math.log(constants.mu_bar[2 ** T])

    def log_d(t: int) -> float:
        # D_t = mu_bar^(2^T) prod_{s=t}^{T-1} (1.5 S_s)^(2^s) d_s^(2^s - 1) B_(2^(s+1))
        out = log_mu
        for s in range(t, T):
            out += (2 ** s) * math.log(1.5 * S[s - 1]) + (2 ** s - 1) * math.log(dims[s - 1])
            out += constants.log_b_constant(2 ** (s + 1))
        return out

    M = [0] * (T - 1)
    for t in range(T - 1, 0, -1):
        log_arg = (
            math.log(lead) + log_stage_product(L, 1, t - 1) + math.log(S[t - 1])
            + log_d(t + 1) / 2 ** t + math.log((T - 1) / (denom * eps))
        )
        for s in range(t + 1, T):
            ratio = math.log(-math.expm1(-(M[s - 1] + 1) / 2 ** s * LOG2)) - math.log(-math.expm1(-LOG2 / 2 ** s))
            log_arg += (2 ** s - 1) / 2 ** t * _log_z(rates[s - 1], M[s - 1]) + ratio / 2 ** t
        M[t - 1] = _clamp(t, ceil_safe(log_arg / LOG2))

    # mu_1^2 <= D_1 prod_t sum_l 1 / (2^(2^t l) q_t(l)^(2^t - 1))
    log_bound = log_d(1)
    for t in range(1, T):
        levels = np.arange(M[t - 1] + 1)
        q = _pmf(rates[t - 1], M[t - 1], levels)
        log_bound += float(logsumexp(-(2 ** t) * levels * LOG2 - (2 ** t - 1) * np.log(q)))
    return M, log_bound


def _pmf(rate: float, truncation: int, levels: np.ndarray) -> np.ndarray:
    return level_pmf_array(LevelDistribution(rate=rate, truncation=truncation), levels)


def truncation_schedule(
    epsilon: float,
    constants: ProblemConstants,
    smooth: bool,
    mode: Literal["mse", "highprob"] = "mse",
    rates: Optional[Sequence[float]] = None,
    beta: Optional[float] = None,
) -> TruncationSchedule:
    """Backward recursion for M_{T-1}, ..., M_1 plus the implied number of trees."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if mode == "highprob" and (beta is None or not 0 < beta < 1):
        raise ValueError("the high-probability schedule needs beta in (0, 1)")
    T = constants_validator.stage_count(constants, "S" if smooth else "L", 1)
    if T < 2:
        raise ValueError(f"truncation points need T >= 2, got T={T}")

    scalars = ("zeta2", "D_X", "d", "L_prime") if mode == "highprob" else ()
    if smooth:
        constants_validator.require(
            constants, lists={"S": T - 1, "L": T - 2, "dims": T - 1}, scalars=scalars, moments=(2 ** T,)
        )
    else:
        constants_validator.require(constants, lists={"L": T - 1}, scalars=scalars, moments=(2,))

    rates = list(rates) if rates is not None else default_rates(T, smooth)
    if len(rates) != T - 1:
        raise ValueError(f"{len(rates)} rates supplied for {T - 1} branching stages")

    if smooth:
        lead, denom = (math.sqrt(2.0), 2.0) if mode == "mse" else (2.0, 1.0)
        M, log_bound = _smooth_truncations(T, epsilon, constants, rates, lead, denom)
    else:
        lead = math.sqrt(2.0) if mode == "mse" else 4.0
        M, log_bound = _nonsmooth_truncations(T, epsilon, constants, rates, lead)

    moment_bound = math.exp(log_bound) if log_bound < 700 else math.inf
    if mode == "mse":
        n1 = ceil_safe(2.0 * moment_bound / epsilon ** 2) if math.isfinite(moment_bound) else None
    else:
        cover = ceil_safe(8.0 * constants.L_prime * constants.D_X / epsilon + 1.0)
        n1 = ceil_safe(
            128.0 * constants.zeta2 / epsilon ** 2 * (constants.d * math.log(cover) + math.log(4.0 / beta))
        )
    if n1 is None:
        logger.warning(f"Moment bound overflows (log bound {log_bound:.1f}); number of trees left unset.")
    logger.info(f"MLMC {mode} schedule for epsilon={epsilon}: M={M}, rates={[round(r, 4) for r in rates]}, n1={n1}")
    return TruncationSchedule(
        truncations=M, rates=rates, n1=max(1, n1) if n1 is not None else None,
        moment_bound=moment_bound, smooth=smooth, mode=mode,
    )
