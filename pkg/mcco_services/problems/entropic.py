# mcco_services/problems/entropic.py
"""Nested entropic risk of a cumulative Gaussian cash flow.

With risk aversions mu_0..mu_{T-1}, f_t(xi, x) = exp(-mu_{t-1} xi) x^(-mu_{t-1} / mu_t)
for t < T and f_T(xi, x) = exp(-mu_{T-1} xi). The decision is a dummy scalar.
"""
import math
from typing import List, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import InvalidParams
from ..core import FeasibleSet, MccoProblem, Stage


class EntropicParams(BaseModel):
    kind: Literal["entropic"] = "entropic"
    T: int = Field(2, ge=1)
    mu: Union[float, List[float]] = Field(1.0, description="Risk aversions mu_0..mu_{T-1}, or one value for all.")
    mean: float = 0.0
    sd: float = Field(1.0, ge=0.0)
    ar: float = Field(0.0, gt=-1.0, lt=1.0, description="AR(1) coefficient of the cash flows.")
    floor: float = Field(1e-300, gt=0.0, description="Lower clamp of x before the power is taken.")

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _aversions(self):
        values = self.aversions()
        if len(values) != self.T:
            raise ValueError(f"{len(values)} risk aversions given for T={self.T}")
        if any(v <= 0 for v in values):
            raise ValueError("risk aversions must be positive")
        return self

    def aversions(self) -> List[float]:
        if isinstance(self.mu, list):
            return [float(v) for v in self.mu]
        return [float(self.mu)] * self.T


def _continuation(mu_prev: float, mu_next: float, floor: float) -> Stage:
    power = -mu_prev / mu_next

    def integrand(xi, x):
        return np.exp(-mu_prev * xi) * np.maximum(x, floor) ** power

    def jacobian(xi, x):
        safe = np.maximum(x, floor)
        with np.errstate(over="ignore"):
            slope = np.where(x > floor, power * np.exp(-mu_prev * xi) * safe ** (power - 1.0), 0.0)
        return slope[:, :, None]

    return Stage(integrand, jacobian, name=f"exp(-{mu_prev} xi) x^{power:.3g}")


def build_entropic(params: EntropicParams) -> MccoProblem:
    mu = params.aversions()
    T = params.T
    mean, sd, ar = params.mean, params.sd, params.ar

    def sampler_1(rng, n):
        return mean + sd * rng.standard_normal((n, 1))

    def kernel(rng, path):
        return ar * path.last + mean + sd * rng.standard_normal((path.size, 1))

    mu_last = mu[T - 1]
    terminal = Stage(
        lambda xi, x: np.exp(-mu_last * xi),
        lambda xi, x: np.zeros((xi.shape[0], 1, 1)),
        name=f"exp(-{mu_last} xi)",
    )
    stages = tuple(_continuation(mu[t - 1], mu[t], params.floor) for t in range(1, T)) + (terminal,)
    return MccoProblem(
        T=T,
        dims=(1,) * (T + 1),
        noise_dims=(1,) * T,
        sampler_1=sampler_1,
        kernels=(kernel,) * (T - 1),
        stages=stages,
        feasible_set=FeasibleSet.unbounded(1),
        name="entropic",
        reference_point=np.zeros(1),
    )


def entropic_exact_value(params: EntropicParams) -> float:
    """Backward evaluation with the Gaussian moment generating function; needs independent cash flows."""
    if params.ar != 0.0:
        raise InvalidParams("the closed form needs serially independent cash flows (ar = 0)")
    mu = params.aversions()

    def mgf(a: float) -> float:
        # E exp(-a xi) for xi ~ N(mean, sd^2)
        return math.exp(-a * params.mean + 0.5 * a ** 2 * params.sd ** 2)

    value = mgf(mu[-1])
    for t in range(params.T - 1, 0, -1):
        value = mgf(mu[t - 1]) * value ** (-mu[t - 1] / mu[t])
    return value
