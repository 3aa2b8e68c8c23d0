# mcco_services/problems/synthetic.py
"""Three-stage trigonometric test problem on a Gaussian random walk."""
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core import FeasibleSet, MccoProblem, Stage


class SyntheticParams(BaseModel):
    kind: Literal["synthetic"] = "synthetic"
    start_mean: float = Field(math.pi / 2, description="Mean of xi_1.")
    step_sd: float = Field(1.0, gt=0.0, description="Standard deviation of every random-walk step.")

    model_config = ConfigDict(extra="forbid")


def synthetic_exact_value(params: SyntheticParams) -> float:
    """f_2 vanishes at its conditional mean, so F(x) = E sin(xi_1) = sin(m) exp(-s^2 / 2) for every x."""
    return math.sin(params.start_mean) * math.exp(-0.5 * params.step_sd ** 2)


def build_synthetic(params: SyntheticParams) -> MccoProblem:
    m, s = params.start_mean, params.step_sd

    def sampler_1(rng, n):
        return rng.normal(m, s, size=(n, 1))

    def walk(rng, path):
        return path.last + rng.normal(0.0, s, size=(path.size, 1))

    stages = (
        Stage(lambda xi, x: np.sin(xi + x), lambda xi, x: np.cos(xi + x)[:, :, None], name="sin(xi + x)"),
        Stage(lambda xi, x: np.sin(xi - x), lambda xi, x: -np.cos(xi - x)[:, :, None], name="sin(xi - x)"),
        Stage(lambda xi, x: xi.copy(), lambda xi, x: np.zeros((xi.shape[0], 1, 1)), name="xi"),
    )
    return MccoProblem(
        T=3,
        dims=(1, 1, 1, 1),
        noise_dims=(1, 1, 1),
        sampler_1=sampler_1,
        kernels=(walk, walk),
        stages=stages,
        feasible_set=FeasibleSet.unbounded(1),
        name="synthetic",
        reference_point=np.zeros(1),
    )
