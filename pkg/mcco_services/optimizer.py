# mcco_services/optimizer.py
"""Projected SGD and a block-wise Adam driven by stochastic gradient oracles."""
import logging
import math
from typing import Callable, List, Optional

import numpy as np
from scipy.special import expit

from errors import MccoError
from models import AdamBlock, AdamConfig, GradientReport, OptimizationResult, ProblemConstants, SgdConfig
from .core import MccoProblem, as_decision, project
from .randomness import RngStream, derive_stream
from .utils.formulas import ceil_safe, stage_product
from .utils.input_validator import constants_validator

logger = logging.getLogger(__name__)

# grad(x, stream) -> report carrying .gradient and .scenario_count
GradientOracle = Callable[[np.ndarray, RngStream], GradientReport]


def _oracle_step(grad: GradientOracle, x: np.ndarray, stream: RngStream, k: int) -> GradientReport:
    try:
        report = grad(x, stream)
    except MccoError as e:
        logger.error(f"Gradient oracle failed at iteration {k}: {e}")
        if hasattr(e, "add_note"):
            e.add_note(f"raised at optimizer iteration {k}")
        raise
    gradient = np.asarray(report.gradient, dtype=float)
    if gradient.shape != x.shape:
        raise ValueError(f"iteration {k}: oracle returned gradient of shape {gradient.shape}, expected {x.shape}")
    return report


def projected_sgd(
    problem: MccoProblem,
    x0,
    config: SgdConfig,
    grad: GradientOracle,
    stream: RngStream,
) -> OptimizationResult:
    """x_{k+1} = Proj(x_k - eta_k G(x_k)) for k = 1..K; the output is drawn uniformly from x_1..x_K."""
    x = as_decision(problem, x0)
    if not problem.feasible_set.contains(x):
        raise ValueError(f"starting point {x} is not feasible")
    gradient_streams = derive_stream(stream, 0)
    trajectory = [x.copy()]
    cumulative: List[int] = []
    total = 0
    for k in range(1, config.K + 1):
        report = _oracle_step(grad, x, derive_stream(gradient_streams, k), k)
        x = project(problem.feasible_set, x - config.stepsize(k) * np.asarray(report.gradient, dtype=float))
        total += int(report.scenario_count)
        cumulative.append(total)
        trajectory.append(x.copy())

    pick = int(derive_stream(stream, 1).generator().integers(config.K))
    trajectory = np.array(trajectory)
    logger.info(f"Projected SGD finished {config.K} iterations with {total} scenarios; output iterate {pick + 1}.")
    return OptimizationResult(
        trajectory=trajectory,
        output=trajectory[pick].copy(),
        scenario_counts=cumulative,
        total_scenarios=total,
    )


# --- Adam with per-block clipping and softplus coordinates ---

def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def inverse_softplus(x: np.ndarray) -> np.ndarray:
    x = np.maximum(np.asarray(x, dtype=float), 1e-12)
    return x + np.log(-np.expm1(-x))


def clip_norm(g: np.ndarray, threshold: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if math.isfinite(threshold) and norm > threshold:
        return g * (threshold / norm)
    return g


class _BlockState:
    def __init__(self, block: AdamBlock):
        self.block = block
        self.idx = np.asarray(block.indices, dtype=int)
        self.m = np.zeros(self.idx.size)
        self.v = np.zeros(self.idx.size)
        self.steps = 0


def _decode(z: np.ndarray, softplus_idx: np.ndarray) -> np.ndarray:
    x = z.copy()
    if softplus_idx.size:
        x[softplus_idx] = softplus(z[softplus_idx])
    return x


def adam_run(
    problem: MccoProblem,
    x0,
    config: AdamConfig,
    grad: GradientOracle,
    stream: RngStream,
) -> OptimizationResult:
    """Adam on the reparameterized variables; the trajectory holds decoded, projected iterates."""
    x = project(problem.feasible_set, as_decision(problem, x0))
    states = [_BlockState(b) for b in config.blocks]
    for state in states:
        if state.idx.min() < 0 or state.idx.max() >= x.size:
            raise ValueError(f"block '{state.block.name}' indexes outside the {x.size}-dimensional decision")
    softplus_idx = np.concatenate([s.idx for s in states if s.block.softplus] or [np.empty(0, dtype=int)])

    z = x.copy()
    if softplus_idx.size:
        z[softplus_idx] = inverse_softplus(x[softplus_idx])

    gradient_streams = derive_stream(stream, 0)
    trajectory = [x.copy()]
    cumulative: List[int] = []
    total = 0
    skipped = 0
    b1, b2 = config.beta1, config.beta2
    for k in range(1, config.iterations + 1):
        report = _oracle_step(grad, x, derive_stream(gradient_streams, k), k)
        g = np.asarray(report.gradient, dtype=float)
        total += int(report.scenario_count)
        cumulative.append(total)

        for state in states:
            block = state.block
            gb = g[state.idx]
            if not np.all(np.isfinite(gb)):
                skipped += 1
                logger.warning(f"Iteration {k}: non-finite gradient in block '{block.name}', update skipped.")
                continue
            gb = clip_norm(gb, block.clip)
            if block.l2 > 0:
                gb = gb + 2.0 * block.l2 * x[state.idx]
            if block.softplus:
                # d softplus(z) / dz = sigmoid(z)
                gb = gb * expit(z[state.idx])
            state.steps += 1
            state.m = b1 * state.m + (1 - b1) * gb
            state.v = b2 * state.v + (1 - b2) * gb ** 2
            m_hat = state.m / (1 - b1 ** state.steps)
            v_hat = state.v / (1 - b2 ** state.steps)
            z[state.idx] = z[state.idx] - block.lr * m_hat / (np.sqrt(v_hat) + config.eps)
            if block.bounds is not None:
                z[state.idx] = np.clip(z[state.idx], *block.bounds)

        decoded = _decode(z, softplus_idx)
        x = project(problem.feasible_set, decoded)
        plain = np.setdiff1d(np.arange(x.size), softplus_idx)
        z[plain] = x[plain]
        moved = softplus_idx[x[softplus_idx] != decoded[softplus_idx]]
        if moved.size:
            z[moved] = inverse_softplus(x[moved])
        trajectory.append(x.copy())

    logger.info(
        f"Adam finished {config.iterations} iterations with {total} scenarios ({skipped} block updates skipped)."
    )
    return OptimizationResult(
        trajectory=np.array(trajectory),
        output=x.copy(),
        scenario_counts=cumulative,
        total_scenarios=total,
        skipped_updates=skipped,
    )


def bandit_adam_config(iterations: int = 2000) -> AdamConfig:
    """Blocks for x = (theta1, theta2, lambda): clips 50/50/100, learning rates 0.025/0.75, L2 on theta."""
    return AdamConfig(
        iterations=iterations,
        blocks=[
            AdamBlock(name="theta1", indices=[0], lr=0.025, clip=50.0, bounds=(0.0, 1.0), l2=0.005),
            AdamBlock(name="theta2", indices=[1], lr=0.025, clip=50.0, bounds=(0.0, 1.0), l2=0.005),
            AdamBlock(name="lambda", indices=[2], lr=0.75, clip=100.0, softplus=True),
        ],
    )


BANDIT_START = (0.5, 0.5, 1.0)


# --- Step size and iteration count from the stationarity bound ---

def smoothness_sum(constants: ProblemConstants) -> float:
    """S_[T] = sum_t L_[1:t-1] S_t L_[t+1:T]^2."""
    T = constants_validator.stage_count(constants, "S", 0)
    constants_validator.require(constants, lists={"S": T, "L": T})
    L, S = constants.L, constants.S
    return sum(stage_product(L, 1, t - 1) * S[t - 1] * stage_product(L, t + 1, T) ** 2 for t in range(1, T + 1))


def stationary_stepsize(nu_bar: float, n1: int, K: int) -> float:
    """Constant stepsize nu_bar sqrt(n1 / K)."""
    if nu_bar <= 0 or n1 < 1 or K < 1:
        raise ValueError("nu_bar must be positive, n1 and K at least 1")
    return nu_bar * math.sqrt(n1 / K)


def stationary_iterations(nu_bar: float, n1: int, epsilon: float, gap: float, smoothness: float) -> int:
    """K = ceil(nu_bar^2 / (n1 eps^4) (2 gap + S_[T])^2), at least 1."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return max(1, ceil_safe(nu_bar ** 2 / (n1 * epsilon ** 4) * (2.0 * gap + smoothness) ** 2))


def sgd_config_for_horizon(nu_bar: float, n1: int, K: int, schedule: Optional[str] = None) -> SgdConfig:
    return SgdConfig(K=K, eta=stationary_stepsize(nu_bar, n1, K), schedule=schedule or "constant")
