# mcco_services/recursion.py
"""Level-by-level evaluation of randomized multilevel trees.

A block of trees is expanded one stage at a time: every stage-t node of the block
draws its own level lambda, spawns 2^lambda conditional children, and the children's
(H, G) pairs are reduced back into the node with the full, even and odd averages
taken over the same child values.
"""
import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import settings
from errors import CostGuardExceeded, DimensionMismatch, MccoError
from models import LevelDistribution, MlmcConfig
from .core import MccoProblem, SamplePath
from .parallel import block_sizes, run_ordered
from .randomness import RngStream, derive_stream, level_pmf_array, sample_levels

logger = logging.getLogger(__name__)


@dataclass
class NodeBatch:
    """Averages formed at one stage for a batch of nodes; handed to observers."""
    stage: int
    levels: np.ndarray
    mean_all: np.ndarray
    mean_even: np.ndarray
    mean_odd: np.ndarray
    split_rows: np.ndarray


Observer = Callable[[NodeBatch], None]


@dataclass
class BlockOutcome:
    values: Optional[np.ndarray]
    gradients: Optional[np.ndarray]
    scenarios: int


def check_shape(array: np.ndarray, shape: tuple, stage: int, what: str) -> None:
    if array.shape != shape:
        raise DimensionMismatch(stage, f"{what} returned shape {array.shape}, expected {shape}")


def evaluate_stage(problem: MccoProblem, t: int, xi: np.ndarray, arg: np.ndarray, block_index: int = 0) -> np.ndarray:
    """Batched f_t with shape checks; evaluator failures are logged with their stage and block."""
    try:
        out = np.asarray(problem.stages[t - 1].integrand(xi, arg), dtype=float)
    except MccoError:
        raise
    except Exception as e:
        logger.error(f"Integrand of stage {t} failed in block {block_index} on {xi.shape[0]} rows: {e}")
        raise
    check_shape(out, (xi.shape[0], problem.dims[t - 1]), t, "integrand")
    return out


def jacobian_stage(problem: MccoProblem, t: int, xi: np.ndarray, arg: np.ndarray, block_index: int = 0) -> np.ndarray:
    try:
        out = np.asarray(problem.stages[t - 1].jacobian(xi, arg), dtype=float)
    except MccoError:
        raise
    except Exception as e:
        logger.error(f"Jacobian of stage {t} failed in block {block_index} on {xi.shape[0]} rows: {e}")
        raise
    check_shape(out, (xi.shape[0], problem.dims[t], problem.dims[t - 1]), t, "Jacobian")
    return out


class _Split:
    """Segment bookkeeping for the children of a batch of nodes."""

    def __init__(self, levels: np.ndarray, counts: np.ndarray):
        self.levels = levels
        self.counts = counts
        self.starts = np.cumsum(counts) - counts
        position = np.arange(int(counts.sum())) - np.repeat(self.starts, counts)
        # first, third, ... child of every node
        self.odd = position % 2 == 0
        self.rows = np.flatnonzero(levels > 0)
        self.half = counts[self.rows] / 2.0

    def means(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        tail = (1,) * (values.ndim - 1)
        mean_all = np.add.reduceat(values, self.starts, axis=0) / self.counts.reshape(-1, *tail)
        if self.rows.size == 0:
            empty = np.empty((0,) + values.shape[1:])
            return mean_all, empty, empty
        mask = self.odd.reshape(-1, *tail)
        odd_sum = np.add.reduceat(np.where(mask, values, 0.0), self.starts, axis=0)[self.rows]
        even_sum = np.add.reduceat(np.where(mask, 0.0, values), self.starts, axis=0)[self.rows]
        half = self.half.reshape(-1, *tail)
        return mean_all, even_sum / half, odd_sum / half


class ScenarioBudget:
    """Run-wide scenario allowance shared by every block of a forest."""

    def __init__(self, limit: float):
        self.limit = limit
        self.spent = 0
        self.exhausted = False
        self._lock = threading.Lock()

    def check(self, pending: float, block_index: int) -> None:
        with self._lock:
            if self.exhausted or self.spent + pending > self.limit:
                self.exhausted = True
                raise CostGuardExceeded(
                    f"block {block_index}: {self.spent + pending:.0f} scenarios would exceed the budget {self.limit:.0f}"
                )

    def charge(self, n: int, block_index: int) -> None:
        with self._lock:
            self.spent += n
            if self.exhausted or self.spent > self.limit:
                self.exhausted = True
                raise CostGuardExceeded(f"block {block_index}: {self.spent} scenarios exceed the budget {self.limit:.0f}")


def check_expected_cost(predicted: float, budget: Optional[float] = None) -> float:
    limit = settings.MCCO_COST_BUDGET if budget is None else budget
    if predicted > limit:
        raise CostGuardExceeded(f"expected {predicted:.6g} scenarios exceed the budget {limit:.0f}")
    return limit


class TreeWalker:
    """Expands and reduces one block of trees with a single generator."""

    def __init__(
        self,
        problem: MccoProblem,
        x: np.ndarray,
        levels: List[LevelDistribution],
        generator: np.random.Generator,
        budget: ScenarioBudget,
        level_cap: Optional[int] = None,
        observer: Optional[Observer] = None,
        block_index: int = 0,
    ):
        self.problem = problem
        self.x = x
        self.levels = levels
        self.rng = generator
        self.budget = budget
        self.level_cap = level_cap
        self.observer = observer
        self.block_index = block_index
        self.leaves = 0

    def run(self, n_trees: int, with_gradient: bool, independent: bool = False) -> BlockOutcome:
        xi = np.asarray(self.problem.sampler_1(self.rng, n_trees), dtype=float)
        self._check(xi, (n_trees, self.problem.noise_dims[0]), 1, "sampler for xi_1")
        path = SamplePath((xi,))
        d = self.problem.decision_dim
        if independent:
            G = self._gradient_only(1, path)
            return BlockOutcome(values=None, gradients=G.reshape(n_trees, d), scenarios=self.leaves)
        H, G = self._node(1, path, with_gradient)
        gradients = G.reshape(n_trees, d) if G is not None else None
        return BlockOutcome(values=H[:, 0], gradients=gradients, scenarios=self.leaves)

    # --- expansion ---

    def _branch(self, t: int, path: SamplePath):
        dist = self.levels[t - 1]
        lam = sample_levels(dist, self.rng, path.size, self.level_cap)
        counts = np.left_shift(np.int64(1), lam)
        self._reserve(float(np.sum(counts, dtype=np.float64)))
        return lam, counts

    def _children(self, t: int, path: SamplePath, counts: np.ndarray) -> SamplePath:
        parents = np.repeat(np.arange(path.size), counts)
        history = path.take(parents)
        xi = np.asarray(self.problem.kernels[t - 1](self.rng, history), dtype=float)
        self._check(xi, (history.size, self.problem.noise_dims[t]), t + 1, "conditional sampler")
        return history.append(xi)

    def _reserve(self, n_children: float) -> None:
        # every child ends in at least one leaf
        self.budget.check(n_children, self.block_index)

    def _leaf_count(self, n: int) -> None:
        self.leaves += n
        self.budget.charge(n, self.block_index)

    # --- reduction ---

    def _node(self, t: int, path: SamplePath, with_gradient: bool):
        xi = path.last
        n = path.size
        if t == self.problem.T:
            self._leaf_count(n)
            x = np.broadcast_to(self.x, (n, self.problem.decision_dim))
            H = self._evaluate(t, xi, x)
            G = self._jacobian(t, xi, x) if with_gradient else None
            return H, G

        lam, counts = self._branch(t, path)
        H_c, G_c = self._node(t + 1, self._children(t, path, counts), with_gradient)
        split = _Split(lam, counts)
        h_means = split.means(H_c)
        if self.observer is not None:
            self.observer(NodeBatch(t, lam, *h_means, split.rows))
        weights = level_pmf_array(self.levels[t - 1], lam)

        H = self._evaluate(t, xi, h_means[0])
        if split.rows.size:
            sub = xi[split.rows]
            H[split.rows] = H[split.rows] - 0.5 * self._evaluate(t, sub, h_means[1]) - 0.5 * self._evaluate(t, sub, h_means[2])
        H = H / weights[:, None]

        G = None
        if with_gradient:
            G = self._combine_gradients(t, xi, split, weights, h_means, split.means(G_c))
        return H, G

    def _gradient_only(self, t: int, path: SamplePath) -> np.ndarray:
        """Gradient recursion whose Jacobian arguments come from an independent child set."""
        xi = path.last
        n = path.size
        if t == self.problem.T:
            self._leaf_count(n)
            return self._jacobian(t, xi, np.broadcast_to(self.x, (n, self.problem.decision_dim)))

        lam, counts = self._branch(t, path)
        G_c = self._gradient_only(t + 1, self._children(t, path, counts))
        self._reserve(float(np.sum(counts, dtype=np.float64)))
        H_c, _ = self._node(t + 1, self._children(t, path, counts), with_gradient=False)
        split = _Split(lam, counts)
        weights = level_pmf_array(self.levels[t - 1], lam)
        return self._combine_gradients(t, xi, split, weights, split.means(H_c), split.means(G_c))

    def _combine_gradients(self, t, xi, split: _Split, weights, h_means, g_means) -> np.ndarray:
        # (n, d, d_t) @ (n, d_t, d_{t-1})
        G = g_means[0] @ self._jacobian(t, xi, h_means[0])
        if split.rows.size:
            sub = xi[split.rows]
            g_even = g_means[1] @ self._jacobian(t, sub, h_means[1])
            g_odd = g_means[2] @ self._jacobian(t, sub, h_means[2])
            G[split.rows] = G[split.rows] - 0.5 * g_even - 0.5 * g_odd
        return G / weights[:, None, None]

    def _evaluate(self, t: int, xi: np.ndarray, arg: np.ndarray) -> np.ndarray:
        return evaluate_stage(self.problem, t, xi, arg, self.block_index)

    def _jacobian(self, t: int, xi: np.ndarray, arg: np.ndarray) -> np.ndarray:
        return jacobian_stage(self.problem, t, xi, arg, self.block_index)

    def _check(self, array: np.ndarray, shape: tuple, stage: int, what: str) -> None:
        check_shape(array, shape, stage, what)


@dataclass
class ForestOutcome:
    values: Optional[np.ndarray]
    gradients: Optional[np.ndarray]
    scenarios: int
    wall_ms: float


def run_mlmc_forest(
    problem: MccoProblem,
    x: np.ndarray,
    config: MlmcConfig,
    stream: RngStream,
    *,
    with_gradient: bool = False,
    independent: bool = False,
    threads: Optional[int] = None,
    budget: Optional[float] = None,
    level_cap: Optional[int] = None,
    observer: Optional[Observer] = None,
) -> ForestOutcome:
    """Evaluate config.n1 trees in fixed-size blocks, each block on its own derived stream."""
    if len(config.levels) != problem.T - 1:
        raise DimensionMismatch(None, f"{len(config.levels)} level laws supplied, the problem has {problem.T - 1} branching stages")
    ledger = ScenarioBudget(settings.MCCO_COST_BUDGET if budget is None else budget)
    sizes = block_sizes(config.n1, config.block_size)
    started = time.perf_counter()

    def work(b: int) -> BlockOutcome:
        walker = TreeWalker(
            problem, x, config.levels, derive_stream(stream, b).generator(),
            budget=ledger, level_cap=level_cap, observer=observer, block_index=b,
        )
        return walker.run(sizes[b], with_gradient, independent)

    outcomes = run_ordered(work, len(sizes), threads)
    scenarios = sum(o.scenarios for o in outcomes)
    values = np.concatenate([o.values for o in outcomes]) if outcomes[0].values is not None else None
    gradients = np.concatenate([o.gradients for o in outcomes]) if outcomes[0].gradients is not None else None
    wall_ms = (time.perf_counter() - started) * 1e3
    logger.info(f"Evaluated {config.n1} trees in {len(sizes)} blocks: {scenarios} scenarios, {wall_ms:.1f} ms.")
    return ForestOutcome(values=values, gradients=gradients, scenarios=scenarios, wall_ms=wall_ms)
