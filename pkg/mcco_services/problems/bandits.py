# mcco_services/problems/bandits.py
"""Distributionally robust off-policy learning for a two-armed contextual bandit.

Contexts are integer vectors c = (c1..c6) on a grid of 1440 points. The decision is
x = (theta1, theta2, lambda): action 1 is chosen with probability theta1 when c1 != 0 and
theta2 when c1 = 0, and lambda is the dual multiplier of the Wasserstein ball. With
xi_1 = c', xi_2 = u and xi_3 = (c', u, y) the objective is the three-stage nest
    f_1 = log(x)/mu,  f_2 = exp(mu x),
    f_3 = pi(u) y_1 + (1 - pi(u)) y_2 + r_y + r_c^2 lambda - lambda |u - c'|^2.
"""
import logging
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from errors import NonFinite
from models import BanditsOptimum
from ..core import FeasibleSet, MccoProblem, Stage

logger = logging.getLogger(__name__)

CONTEXT_LEVELS = (3, 5, 2, 2, 6, 4)
CONTEXT_DIM = len(CONTEXT_LEVELS)


class BanditCostModel(BaseModel):
    """Conditional mean E[y | c] of the two action costs."""
    conscious_intercepts: Tuple[float, float] = (3.0, 5.5)
    conscious_slopes: Tuple[float, float] = (5.0, 1.0)
    impaired_intercepts: Tuple[float, float] = (1.7, 3.0)
    impaired_slopes: Tuple[float, float] = (3.5, 1.0)
    bump: bool = True

    model_config = ConfigDict(extra="forbid")

    def bump_term(self, c: np.ndarray) -> np.ndarray:
        if not self.bump:
            return np.zeros(c.shape[0])
        active = (c[:, 1] == 4) & (c[:, 2] == 1) & (c[:, 3] == 1) & (c[:, 5] == 3)
        return np.where(active, 2.4 + 1.92 * (c[:, 4] / 5.0 - 2.5) ** 2, 0.0)

    def mean(self, c: np.ndarray) -> np.ndarray:
        c5 = c[:, 4][:, None]
        conscious = (c[:, 0] == 0)[:, None]
        intercept = np.where(conscious, self.conscious_intercepts, self.impaired_intercepts)
        slope = np.where(conscious, self.conscious_slopes, self.impaired_slopes)
        return intercept + slope * c5 + self.bump_term(c)[:, None]


class BanditsParams(BaseModel):
    kind: Literal["bandits"] = "bandits"
    mu: float = Field(2.0, gt=0.0, description="Softmax temperature.")
    r_c: float = Field(0.4, ge=0.0, description="Context ambiguity radius.")
    r_y: float = Field(0.15, ge=0.0, description="Cost ambiguity radius.")
    cov_diag: float = Field(5.0, gt=0.0)
    cov_offdiag: float = 2.5
    lambda_max: float = Field(100.0, gt=0.0)
    log_floor: float = Field(1e-12, gt=0.0, description="Clamp of the softmax argument before the log.")
    l2: float = Field(0.0, ge=0.0, description="Weight of l2 * |theta|^2 in the exact objective.")
    cost_model: BanditCostModel = Field(default_factory=BanditCostModel)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _covariance(self):
        if abs(self.cov_offdiag) > self.cov_diag:
            raise ValueError("log-cost covariance must be positive semidefinite")
        return self

    def covariance(self) -> np.ndarray:
        return np.array([[self.cov_diag, self.cov_offdiag], [self.cov_offdiag, self.cov_diag]])


def all_contexts() -> np.ndarray:
    grids = np.meshgrid(*[np.arange(k) for k in CONTEXT_LEVELS], indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, CONTEXT_DIM).astype(float)


def sample_contexts(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, CONTEXT_LEVELS, size=(n, CONTEXT_DIM)).astype(float)


def _policy_cost(theta1, theta2, u, y):
    pi = np.where(u[:, 0] != 0, theta1, theta2)
    return pi * y[:, 0] + (1.0 - pi) * y[:, 1]


def build_bandits(params: BanditsParams) -> MccoProblem:
    mu, r_c, r_y, floor = params.mu, params.r_c, params.r_y, params.log_floor
    chol = np.linalg.cholesky(params.covariance() + 1e-12 * np.eye(2))
    half_var = 0.5 * np.diag(params.covariance())
    model = params.cost_model

    def sampler_1(rng, n):
        return sample_contexts(rng, n)

    def draw_u(rng, path):
        return sample_contexts(rng, path.size)

    def draw_costs(rng, path):
        c_prime, u = path.values[0], path.values[1]
        log_mean = np.log(model.mean(u)) - half_var
        y = np.exp(log_mean + rng.standard_normal((path.size, 2)) @ chol.T)
        return np.concatenate([c_prime, u, y], axis=1)

    def f1(xi, x):
        return np.log(np.maximum(x, floor)) / mu

    def f1_jac(xi, x):
        return np.where(x > floor, 1.0 / (mu * np.maximum(x, floor)), 0.0)[:, :, None]

    def f2(xi, x):
        with np.errstate(over="ignore"):
            return np.exp(mu * x)

    def f2_jac(xi, x):
        with np.errstate(over="ignore"):
            return (mu * np.exp(mu * x))[:, :, None]

    def _split(xi):
        return xi[:, :CONTEXT_DIM], xi[:, CONTEXT_DIM:2 * CONTEXT_DIM], xi[:, 2 * CONTEXT_DIM:]

    def f3(xi, x):
        c_prime, u, y = _split(xi)
        distance = np.sum((u - c_prime) ** 2, axis=1)
        lam = x[:, 2]
        value = _policy_cost(x[:, 0], x[:, 1], u, y) + r_y + r_c ** 2 * lam - lam * distance
        return value[:, None]

    def f3_jac(xi, x):
        c_prime, u, y = _split(xi)
        distance = np.sum((u - c_prime) ** 2, axis=1)
        spread = y[:, 0] - y[:, 1]
        first = u[:, 0] != 0
        J = np.stack([np.where(first, spread, 0.0), np.where(first, 0.0, spread), r_c ** 2 - distance], axis=1)
        return J[:, :, None]

    return MccoProblem(
        T=3,
        dims=(1, 1, 1, 3),
        noise_dims=(CONTEXT_DIM, CONTEXT_DIM, 2 * CONTEXT_DIM + 2),
        sampler_1=sampler_1,
        kernels=(draw_u, draw_costs),
        stages=(
            Stage(f1, f1_jac, name="log(x)/mu"),
            Stage(f2, f2_jac, name="exp(mu x)"),
            Stage(f3, f3_jac, trial_point=np.array([0.5, 0.5, 1.0]), name="robust policy cost"),
        ),
        feasible_set=FeasibleSet.box([0.0, 0.0, 0.0], [1.0, 1.0, params.lambda_max]),
        name="bandits",
        reference_point=np.array([0.5, 0.5, 1.0]),
    )


# --- Exact objective by enumeration ---

class _EnumeratedObjective:
    """The softmax dual evaluated over every (c', u) pair with E[y | u] in closed form."""

    def __init__(self, params: BanditsParams):
        self.params = params
        contexts = all_contexts()
        means = params.cost_model.mean(contexts)
        self.first = contexts[:, 0] != 0
        self.m1, self.m2 = means[:, 0], means[:, 1]
        sq = np.sum(contexts ** 2, axis=1)
        # rows c', columns u
        self.distance = np.maximum(sq[:, None] + sq[None, :] - 2.0 * contexts @ contexts.T, 0.0)
        self.size = contexts.shape[0]

    def __call__(self, x) -> Tuple[float, np.ndarray]:
        p = self.params
        theta1, theta2, lam = (float(v) for v in x)
        pi = np.where(self.first, theta1, theta2)
        base = pi * self.m1 + (1.0 - pi) * self.m2 + p.r_y + p.r_c ** 2 * lam
        h = base[None, :] - lam * self.distance
        inner = logsumexp(p.mu * h, axis=1, b=1.0 / self.size)
        value = float(np.mean(inner) / p.mu) + p.l2 * (theta1 ** 2 + theta2 ** 2)
        if not np.isfinite(value):
            raise NonFinite(f"bandit objective is not finite at {x}")
        W = softmax(p.mu * h, axis=1)
        spread = self.m1 - self.m2
        weight_u = W.mean(axis=0)
        grad = np.array([
            float(weight_u @ np.where(self.first, spread, 0.0)) + 2.0 * p.l2 * theta1,
            float(weight_u @ np.where(self.first, 0.0, spread)) + 2.0 * p.l2 * theta2,
            p.r_c ** 2 - float(np.mean(np.sum(W * self.distance, axis=1))),
        ])
        return value, grad


def bandits_objective(params: BanditsParams, x) -> Tuple[float, np.ndarray]:
    """Exact objective value and gradient at x = (theta1, theta2, lambda)."""
    return _EnumeratedObjective(params)(np.asarray(x, dtype=float))


def bandits_ground_truth(params: BanditsParams, tol: float = 1e-10) -> BanditsOptimum:
    """Minimize the enumerated objective over [0, 1]^2 x [0, lambda_max] with L-BFGS-B."""
    objective = _EnumeratedObjective(params)
    bounds = [(0.0, 1.0), (0.0, 1.0), (0.0, params.lambda_max)]
    result = minimize(
        objective, x0=np.array([0.5, 0.5, 1.0]), jac=True, method="L-BFGS-B", bounds=bounds,
        options={"ftol": tol, "gtol": 1e-8, "maxiter": 10_000},
    )
    if not np.all(np.isfinite(result.x)) or not np.isfinite(result.fun):
        raise NonFinite(f"bandit oracle did not converge to a finite point: {result.message}")
    theta1, theta2, lam = (float(v) for v in result.x)
    at_bound = lam >= params.lambda_max - 1e-6
    if at_bound:
        logger.warning(f"Bandit oracle stopped at lambda_max={params.lambda_max}; the dual may be unbounded.")
    logger.info(f"Bandit oracle: lambda={lam:.4f}, theta=({theta1:.4f}, {theta2:.4f}), value={result.fun:.6f}.")
    return BanditsOptimum(lambda_=lam, theta1=theta1, theta2=theta2, value=float(result.fun), lambda_at_bound=at_bound)
