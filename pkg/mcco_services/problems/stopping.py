# mcco_services/problems/stopping.py
"""Optimal stopping as a nest of max{g_t(xi_t), discount * x_t} with a dummy decision.

Every stage is nonsmooth; f_T = g_T ignores its argument, so the decision vector is a
placeholder of dimension one.
"""
import logging
import math
from typing import Callable, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from errors import InvalidParams
from ..core import FeasibleSet, Kernel, MccoProblem, Sampler, Stage

logger = logging.getLogger(__name__)

Payoff = Callable[[np.ndarray], np.ndarray]


def build_stopping_problem(
    payoffs: Sequence[Payoff],
    sampler_1: Sampler,
    kernels: Sequence[Kernel],
    noise_dim: int,
    discount: float = 1.0,
    name: str = "stopping",
) -> MccoProblem:
    """Stopping problem with exercise payoffs g_1..g_T mapping (N, m) states to (N,) values."""
    T = len(payoffs)
    if T < 1:
        raise InvalidParams("at least one exercise date is required")
    if len(kernels) != T - 1:
        raise InvalidParams(f"{T} payoffs need {T - 1} transition kernels, got {len(kernels)}")
    if discount <= 0:
        raise InvalidParams(f"discount factor must be positive, got {discount}")

    def continuation(g: Payoff) -> Stage:
        return Stage(lambda xi, x: np.maximum(g(xi), discount * x[:, 0])[:, None], name="max(g, discount x)")

    def exercise(g: Payoff) -> Stage:
        return Stage(lambda xi, x: np.asarray(g(xi), dtype=float)[:, None], name="g")

    stages = tuple(continuation(g) for g in payoffs[:-1]) + (exercise(payoffs[-1]),)
    return MccoProblem(
        T=T,
        dims=(1,) * (T + 1),
        noise_dims=(noise_dim,) * T,
        sampler_1=sampler_1,
        kernels=tuple(kernels),
        stages=stages,
        feasible_set=FeasibleSet.unbounded(1),
        name=name,
        reference_point=np.zeros(1),
    )


# --- Scalar Gaussian stopping ---

class StoppingParams(BaseModel):
    """Put-style payoff max{0, strike - xi} on a scalar Gaussian state."""
    kind: Literal["stopping"] = "stopping"
    T: int = Field(4, ge=1)
    strike: float = 0.0
    discount: float = Field(1.0, gt=0.0)
    process: Literal["iid", "random_walk"] = "iid"
    start: float = Field(0.0, description="Initial level of the random walk.")
    mean: float = 0.0
    sd: float = Field(1.0, gt=0.0)

    model_config = ConfigDict(extra="forbid")


def bermudan_surrogate_params(T: int = 4, gamma: float = 0.05) -> StoppingParams:
    """Cheap stand-in for the basket put: the basket average is replaced by a standard normal."""
    return StoppingParams(T=T, strike=0.0, discount=math.exp(-gamma), process="iid", mean=0.0, sd=1.0)


def build_stopping(params: StoppingParams) -> MccoProblem:
    strike, mean, sd = params.strike, params.mean, params.sd

    def payoff(xi: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, strike - xi[:, 0])

    if params.process == "iid":
        def sampler_1(rng, n):
            return rng.normal(mean, sd, size=(n, 1))

        def kernel(rng, path):
            return rng.normal(mean, sd, size=(path.size, 1))
    else:
        def sampler_1(rng, n):
            return params.start + rng.normal(mean, sd, size=(n, 1))

        def kernel(rng, path):
            return path.last + rng.normal(mean, sd, size=(path.size, 1))

    return build_stopping_problem(
        [payoff] * params.T, sampler_1, [kernel] * (params.T - 1),
        noise_dim=1, discount=params.discount, name="stopping",
    )


# --- Bermudan basket put ---

class BermudanParams(BaseModel):
    kind: Literal["bermudan"] = "bermudan"
    m: int = Field(5, ge=1, description="Number of assets.")
    K: float = Field(100.0, ge=0.0, description="Strike.")
    gamma: float = Field(0.05, description="Risk-free rate.")
    sigma: float = Field(0.2, gt=0.0, description="Volatility.")
    T: int = Field(4, ge=1, description="Exercise dates.")
    s0: float = Field(100.0, gt=0.0)
    dt: float = Field(1.0, gt=0.0, description="Time between exercise dates.")

    model_config = ConfigDict(extra="forbid")


def bermudan_payoff(K: float) -> Payoff:
    return lambda xi: np.maximum(0.0, K - xi.mean(axis=1))


def gbm_kernel(gamma: float, sigma: float, dt: float) -> Kernel:
    """Independent geometric Brownian motions: xi_{t+1} = xi_t * exp((gamma - sigma^2/2) dt + sigma sqrt(dt) Z)."""
    drift = (gamma - 0.5 * sigma ** 2) * dt
    vol = sigma * math.sqrt(dt)

    def kernel(rng, path):
        current = path.last
        return current * np.exp(drift + vol * rng.standard_normal(current.shape))

    return kernel


def build_bermudan(params: BermudanParams) -> MccoProblem:
    m, s0 = params.m, params.s0

    def sampler_1(rng, n):
        return np.full((n, m), s0)

    problem = build_stopping_problem(
        [bermudan_payoff(params.K)] * params.T,
        sampler_1,
        [gbm_kernel(params.gamma, params.sigma, params.dt)] * (params.T - 1),
        noise_dim=m,
        discount=math.exp(-params.gamma * params.dt),
        name="bermudan",
    )
    logger.debug(f"Built Bermudan basket put with m={m}, K={params.K}, T={params.T}.")
    return problem
