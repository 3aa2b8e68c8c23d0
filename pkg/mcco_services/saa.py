# mcco_services/saa.py
"""Scenario-forest sample average approximation and its sample-size schedules."""
import logging
import math
import time
from typing import Callable, List, Literal, Optional

import numpy as np

from errors import NonFinite
from models import EstimateReport, ProblemConstants, SaaConfig
from .core import MccoProblem, SamplePath, as_decision, validate_problem
from .parallel import block_sizes, run_ordered
from .randomness import RngStream, derive_stream
from .recursion import check_shape, evaluate_stage
from .utils.formulas import ceil_safe, log_stage_product, stage_product
from .utils.input_validator import constants_validator

logger = logging.getLogger(__name__)

# (stage t, f_t values of every stage-t node in the block, rows grouped by parent)
SaaObserver = Callable[[int, np.ndarray], None]


class _ScenarioTree:
    """Evaluates the trees of one block; no stage batch holds more than leaf_budget rows.

    Stage-t nodes whose subtrees fit the budget are expanded together. Larger subtrees
    are walked depth-first, their children generated in pieces whose own subtrees fit,
    and the stage-(t+1) values are accumulated into running sums.
    """

    def __init__(self, problem: MccoProblem, x: np.ndarray, n: List[int], rng: np.random.Generator,
                 observer: Optional[SaaObserver], block_index: int, leaf_budget: int):
        self.problem = problem
        self.x = x
        self.n = n
        self.rng = rng
        self.observer = observer
        self.block_index = block_index
        self.leaf_budget = leaf_budget
        self.leaves = 0

    def run(self, n_trees: int) -> np.ndarray:
        xi = np.asarray(self.problem.sampler_1(self.rng, n_trees), dtype=float)
        check_shape(xi, (n_trees, self.problem.noise_dims[0]), 1, "sampler for xi_1")
        return self._values(1, SamplePath((xi,)))[:, 0]

    def _expand(self, t: int, path: SamplePath, k: int) -> SamplePath:
        # children of node i occupy rows i*k .. (i+1)*k-1
        history = path.take(np.repeat(np.arange(path.size), k))
        xi = np.asarray(self.problem.kernels[t - 1](self.rng, history), dtype=float)
        check_shape(xi, (history.size, self.problem.noise_dims[t]), t + 1, "conditional sampler")
        return history.append(xi)

    def _values(self, t: int, path: SamplePath) -> np.ndarray:
        if t == self.problem.T:
            self.leaves += path.size
            arg = np.broadcast_to(self.x, (path.size, self.problem.decision_dim))
        else:
            arg = self._child_means(t, path)
        values = evaluate_stage(self.problem, t, path.last, arg, self.block_index)
        if self.observer is not None:
            self.observer(t, values)
        return values

    def _child_means(self, t: int, path: SamplePath) -> np.ndarray:
        N, k = path.size, self.n[t]
        below = math.prod(self.n[t:])
        if N * below <= self.leaf_budget:
            child_values = self._values(t + 1, self._expand(t, path, k))
            return child_values.reshape(N, k, -1).mean(axis=1)
        if below <= self.leaf_budget:
            step = self.leaf_budget // below
            return np.concatenate([
                self._child_means(t, path.take(np.arange(start, min(start + step, N))))
                for start in range(0, N, step)
            ])
        piece = max(1, self.leaf_budget // math.prod(self.n[t + 1:]))
        means = []
        for i in range(N):
            node = path.take(np.array([i]))
            total = 0.0
            for start in range(0, k, piece):
                children = self._expand(t, node, min(piece, k - start))
                total = total + self._values(t + 1, children).sum(axis=0)
            means.append(total / k)
        return np.stack(means)


def saa_estimate(
    problem: MccoProblem,
    x,
    config: SaaConfig,
    stream: RngStream,
    *,
    threads: Optional[int] = None,
    observer: Optional[SaaObserver] = None,
) -> EstimateReport:
    """Average of n_1 independent scenario-tree estimates with nested conditional sample means."""
    validate_problem(problem)
    x = as_decision(problem, x)
    n = list(config.n)
    if len(n) != problem.T:
        raise ValueError(f"{len(n)} branching factors supplied, the problem has {problem.T} stages")
    leaf_budget = config.resolved_leaf_budget()
    sizes = block_sizes(n[0], config.resolved_block_size())
    started = time.perf_counter()

    def work(b: int):
        tree = _ScenarioTree(problem, x, n, derive_stream(stream, b).generator(), observer, b, leaf_budget)
        return tree.run(sizes[b]), tree.leaves

    outcomes = run_ordered(work, len(sizes), threads)
    tree_values = np.concatenate([values for values, _ in outcomes])
    scenarios = sum(leaves for _, leaves in outcomes)
    if not np.all(np.isfinite(tree_values)):
        raise NonFinite(f"SAA produced {int(np.sum(~np.isfinite(tree_values)))} non-finite tree values")
    wall_ms = (time.perf_counter() - started) * 1e3
    logger.info(f"SAA estimate with n={n}: {scenarios} scenarios in {len(sizes)} blocks, {wall_ms:.1f} ms.")
    return EstimateReport(
        value=float(np.mean(tree_values)),
        tree_values=tree_values,
        scenario_count=int(scenarios),
        expected_cost=float(config.scenario_count),
        n1=n[0],
        seed=stream.seed,
        estimator="saa",
        wall_ms=wall_ms,
    )


def saa_schedule(
    epsilon: float,
    constants: ProblemConstants,
    smooth: bool,
    mode: Literal["mse", "highprob"] = "mse",
    beta: Optional[float] = None,
) -> SaaConfig:
    """Stage-wise branching factors reaching accuracy epsilon (root MSE, or with probability 1 - beta)."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if mode == "highprob" and (beta is None or not 0 < beta < 1):
        raise ValueError("the high-probability schedule needs beta in (0, 1)")
    T = constants_validator.stage_count(constants, "sigma", 0)

    needs = {"sigma": T}
    scalars = ()
    if smooth:
        needs.update({"S": T - 1, "L": T - 2})
    else:
        needs["L"] = T - 1
    if mode == "highprob":
        needs["L"] = T
        scalars = ("zeta2", "D_X", "d")
    constants_validator.require(constants, lists=needs, scalars=scalars)

    sigma = constants.sigma
    if mode == "mse":
        s1 = sigma[0]
        n1 = ceil_safe(1.0 + 2.0 * math.sqrt(2.0) * s1 / epsilon + 2.0 * s1 ** 2 / epsilon ** 2)
    else:
        cover = ceil_safe(8.0 * stage_product(constants.L, 1, T) * constants.D_X / epsilon + 1.0)
        n1 = ceil_safe(
            128.0 * constants.zeta2 / epsilon ** 2
            * (constants.d * math.log(cover) + math.log(4.0 / beta))
        )
    n = [max(1, n1)]
    for t in range(2, T + 1):
        if smooth:
            lead, denom = (math.sqrt(2.0), 2.0) if mode == "mse" else (2.0, 1.0)
            log_size = (
                math.log(lead) + log_stage_product(constants.L, 1, t - 2) + math.log(constants.S[t - 2])
                + 2.0 * math.log(sigma[t - 1]) + math.log((T - 1) / (denom * epsilon))
            )
        else:
            lead = math.sqrt(2.0) if mode == "mse" else 4.0
            log_size = 2.0 * (
                math.log(lead) + log_stage_product(constants.L, 1, t - 1) + math.log(sigma[t - 1])
                + math.log((T - 1) / epsilon)
            )
        n.append(max(1, ceil_safe(math.exp(log_size))))
    logger.info(f"SAA {mode} schedule for epsilon={epsilon} ({'smooth' if smooth else 'nonsmooth'}): n={n}")
    return SaaConfig(n=n)
