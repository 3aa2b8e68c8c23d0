# mcco_services/analysis.py
"""Replications, error decomposition, intervals, slope fits and work-normalized rate tuning."""
import logging
import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.preprocessing import PolynomialFeatures

from errors import DegenerateFit, TooFewSamples
from models import EstimateReport, MlmcConfig, ProblemConstants, ReplicationSummary, SaaConfig, TuningResult
from .core import MccoProblem, as_decision
from .mlmc_value import expected_cost, mlmc_value_estimate
from .parallel import run_ordered
from .randomness import RngStream, derive_stream
from .saa import saa_estimate

logger = logging.getLogger(__name__)

Z_95 = 1.96

Estimator = Callable[[RngStream], Union[EstimateReport, float]]


def _as_array(values: Iterable[float], minimum: int, what: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=float).ravel()
    if arr.size < minimum:
        raise TooFewSamples(f"{what} needs at least {minimum} values, got {arr.size}")
    return arr


def confidence_interval(tree_values: Sequence[float], z: float = Z_95) -> Tuple[float, float]:
    """mean +- z * sd / sqrt(n) with the sample standard deviation."""
    arr = _as_array(tree_values, 2, "a confidence interval")
    half = z * float(np.std(arr, ddof=1)) / math.sqrt(arr.size)
    mean = float(np.mean(arr))
    return mean - half, mean + half


def loglog_slope(costs: Sequence[float], mses: Sequence[float]) -> float:
    """Least-squares slope of log10(mse) against log10(cost)."""
    c = np.asarray(list(costs), dtype=float).ravel()
    m = np.asarray(list(mses), dtype=float).ravel()
    if c.size != m.size:
        raise DegenerateFit(f"{c.size} costs but {m.size} errors")
    if c.size < 3:
        raise DegenerateFit(f"a slope fit needs at least 3 points, got {c.size}")
    if np.any(c <= 0) or np.any(m <= 0):
        raise DegenerateFit("costs and errors must be strictly positive on a log scale")
    log_c = np.log10(c)
    if np.ptp(log_c) == 0:
        raise DegenerateFit("all costs are equal; the slope is undefined")
    model = LinearRegression().fit(log_c.reshape(-1, 1), np.log10(m))
    return float(model.coef_[0])


def mse_decompose(estimates: Sequence[float], truth: float) -> Dict[str, float]:
    """mse = bias^2 + variance with the population variance, so the identity holds exactly."""
    arr = _as_array(estimates, 2, "an error decomposition")
    bias2 = (float(np.mean(arr)) - truth) ** 2
    variance = float(np.var(arr))
    mse = float(np.mean((arr - truth) ** 2))
    return {"mse": mse, "bias2": bias2, "variance": variance}


def replicate(
    estimator: Estimator,
    replications: int,
    stream: RngStream,
    truth: Optional[float] = None,
    threads: Optional[int] = None,
) -> ReplicationSummary:
    """Run the estimator on the child streams 0..replications-1 and summarize the realizations."""
    if replications < 2:
        raise TooFewSamples(f"replication needs at least 2 runs, got {replications}")

    def work(i: int):
        out = estimator(derive_stream(stream, i))
        if isinstance(out, EstimateReport):
            return out.value, out.scenario_count
        return float(out), 0

    results = run_ordered(work, replications, threads)
    estimates = [value for value, _ in results]
    counts = [int(count) for _, count in results]
    arr = np.asarray(estimates)
    summary = ReplicationSummary(
        estimates=estimates,
        truth=truth,
        mean=float(arr.mean()),
        variance=float(arr.var()),
        scenario_counts=counts,
    )
    if truth is not None:
        parts = mse_decompose(estimates, truth)
        summary.mse, summary.bias2 = parts["mse"], parts["bias2"]
    logger.info(f"Replicated {replications} runs: mean={summary.mean:.6g}, variance={summary.variance:.3g}.")
    return summary


# --- Pilot constants ---

def pilot_constants(
    problem: MccoProblem,
    x,
    n: Sequence[int],
    stream: RngStream,
    moments: Sequence[int] = (2,),
) -> ProblemConstants:
    """Pilot sigma_t and mu_bar_T^p from one SAA forest with branching factors n.

    sigma_1 is the sample standard deviation of f_1 over trees. For t >= 2 the
    conditional spread is estimated per parent from its n_t children and the largest
    value over parents is kept; mu_bar_T^p is the largest per-parent mean of |f_T|^p.
    """
    n = [int(k) for k in n]
    if len(n) != problem.T:
        raise ValueError(f"{len(n)} branching factors supplied, the problem has {problem.T} stages")
    if n[0] < 2 or any(k < 2 for k in n[1:]):
        raise TooFewSamples("pilot estimation needs at least two trees and two children per node")
    seen: Dict[int, List[np.ndarray]] = {t: [] for t in range(1, problem.T + 1)}

    def observer(t: int, values: np.ndarray) -> None:
        seen[t].append(np.array(values, copy=True))

    saa_estimate(problem, x, SaaConfig(n=n), stream, threads=1, observer=observer)

    sigma = []
    for t in range(1, problem.T + 1):
        values = np.concatenate(seen[t])
        if t == 1:
            sigma.append(float(np.sqrt(np.sum(np.var(values, axis=0, ddof=1)))))
            continue
        groups = values.reshape(-1, n[t - 1], values.shape[1])
        spread = np.sum(np.var(groups, axis=1, ddof=1), axis=1)
        sigma.append(float(np.sqrt(spread.max())))

    leaves = np.concatenate(seen[problem.T]).reshape(-1, n[-1], problem.dims[-2])
    mu_bar = {int(p): float(np.max(np.mean(np.sum(np.abs(leaves) ** p, axis=2), axis=1))) for p in moments}
    # zero spread would fail the positivity check of the constants model
    sigma = [max(s, 1e-300) for s in sigma]
    mu_bar = {p: max(v, 1e-300) for p, v in mu_bar.items()}
    logger.info(f"Pilot constants from n={n}: sigma={[round(s, 4) for s in sigma]}, mu_bar={mu_bar}.")
    return ProblemConstants(sigma=sigma, mu_bar=mu_bar, T=problem.T, dims=list(problem.dims[1:]), d=problem.decision_dim)


# --- Work-normalized rate tuning ---

def _fit_quadratic(grid: np.ndarray, work: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    features = PolynomialFeatures(degree=2).fit_transform(grid.reshape(-1, 1))
    model = LinearRegression(fit_intercept=False).fit(features, work)
    return model.predict(features), model.coef_


def tune_rate_worknorm(
    problem: MccoProblem,
    grid: Sequence[float],
    replications: int,
    truncations: Sequence[Optional[int]],
    stream: RngStream,
    *,
    x=None,
    surrogate: Optional[MccoProblem] = None,
    threads: Optional[int] = None,
    block_size: Optional[int] = None,
) -> TuningResult:
    """Grid rate minimizing a convex quadratic fit of (mean H_1^2) x (expected cost per tree).

    The same rate is used at every stage, and every grid point reuses the same stream.
    With `surrogate` the moments are measured on that problem instead.
    """
    target = surrogate if surrogate is not None else problem
    grid_arr = np.asarray(sorted(set(float(r) for r in grid)))
    if grid_arr.size == 0:
        raise ValueError("rate grid is empty")
    if np.any(grid_arr <= 0.5) or np.any(grid_arr >= 1.0):
        raise ValueError("grid rates must lie in (1/2, 1)")
    if len(truncations) != target.T - 1:
        raise ValueError(f"{len(truncations)} truncation points for {target.T - 1} branching stages")
    if replications < 1000:
        logger.warning(f"Only {replications} replications per grid rate; the second-moment estimates will be noisy.")
    point = x if x is not None else target.reference_point
    point = as_decision(target, point)
    extra = {"block_size": block_size} if block_size else {}

    work = []
    for rate in grid_arr:
        config = MlmcConfig.from_rates(replications, [rate] * (target.T - 1), list(truncations), **extra)
        report = mlmc_value_estimate(target, point, config, stream, threads=threads)
        second_moment = float(np.mean(report.tree_values ** 2))
        work.append(second_moment * expected_cost(config) / config.n1)
        logger.debug(f"Rate {rate:.3f}: second moment {second_moment:.4g}, work {work[-1]:.4g}.")
    work_arr = np.asarray(work)

    if grid_arr.size < 3:
        best = float(grid_arr[int(np.argmin(work_arr))])
        return TuningResult(rate=best, grid=grid_arr.tolist(), work=work, fitted=work)

    fitted, coef = _fit_quadratic(grid_arr, work_arr)
    curvature = coef[2]
    if curvature > 0:
        vertex = float(np.clip(-coef[1] / (2.0 * curvature), grid_arr[0], grid_arr[-1]))
        best = float(grid_arr[int(np.argmin(np.abs(grid_arr - vertex)))])
    else:
        logger.warning("Work-normalized fit is not convex; falling back to the smallest fitted value.")
        best = float(grid_arr[int(np.argmin(fitted))])
    logger.info(f"Tuned rate {best:.3f} over {grid_arr.size} grid points on '{target.name}'.")
    return TuningResult(rate=best, grid=grid_arr.tolist(), work=work, fitted=fitted.tolist())
