# mcco_services/problems/linear.py
"""Affine chain f_t(xi, x) = a_t x + xi with centred Gaussian noise."""
import math
from typing import List, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core import FeasibleSet, MccoProblem, Stage


class LinearParams(BaseModel):
    kind: Literal["linear"] = "linear"
    a: List[float] = Field(default_factory=lambda: [2.0, 3.0, 5.0], min_length=1)
    noise_sd: float = Field(1.0, ge=0.0)
    bound: float = Field(10.0, gt=0.0, description="Feasible box [-bound, bound].")

    model_config = ConfigDict(extra="forbid")


def linear_exact_value(params: LinearParams, x: float) -> float:
    return math.prod(params.a) * float(x)


def linear_exact_gradient(params: LinearParams) -> float:
    return math.prod(params.a)


def _stage(a: float) -> Stage:
    return Stage(
        integrand=lambda xi, x: a * x + xi,
        jacobian=lambda xi, x: np.full((xi.shape[0], 1, 1), a),
        name=f"{a} x + xi",
    )


def build_linear(params: LinearParams) -> MccoProblem:
    T = len(params.a)
    sd = params.noise_sd

    def sampler_1(rng, n):
        return rng.normal(0.0, 1.0, size=(n, 1)) * sd

    def kernel(rng, path):
        return rng.normal(0.0, 1.0, size=(path.size, 1)) * sd

    return MccoProblem(
        T=T,
        dims=(1,) * (T + 1),
        noise_dims=(1,) * T,
        sampler_1=sampler_1,
        kernels=(kernel,) * (T - 1),
        stages=tuple(_stage(a) for a in params.a),
        feasible_set=FeasibleSet.box([-params.bound], [params.bound]),
        name="linear",
        reference_point=np.ones(1),
    )
