# mcco_services/core.py
"""The T-stage problem abstraction.

A problem is a nest of T conditional expectations interleaved with integrands
f_t : (R^{m_t}, R^{d_t}) -> R^{d_{t-1}}, with d_0 = 1. Integrands, Jacobians and
samplers work on row batches: an integrand receives noise of shape (N, m_t) and
arguments of shape (N, d_t) and returns (N, d_{t-1}); a Jacobian returns the
transposed Jacobian batch (N, d_t, d_{t-1}).
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionMismatch, MissingStage, NotDifferentiable

logger = logging.getLogger(__name__)

Integrand = Callable[[np.ndarray, np.ndarray], np.ndarray]
Jacobian = Callable[[np.ndarray, np.ndarray], np.ndarray]
Sampler = Callable[[np.random.Generator, int], np.ndarray]
Kernel = Callable[[np.random.Generator, "SamplePath"], np.ndarray]


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A batch of observation histories xi_1..xi_t, one row per path."""
    values: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.values:
            rows = {v.shape[0] for v in self.values}
            if len(rows) != 1:
                raise DimensionMismatch(len(self.values), f"ragged history batch with row counts {sorted(rows)}")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def size(self) -> int:
        return self.values[0].shape[0] if self.values else 0

    @property
    def last(self) -> np.ndarray:
        return self.values[-1]

    def append(self, xi: np.ndarray) -> "SamplePath":
        if self.values and xi.shape[0] != self.size:
            raise DimensionMismatch(len(self) + 1, f"expected {self.size} rows, got {xi.shape[0]}")
        return SamplePath(self.values + (xi,))

    def take(self, rows: np.ndarray) -> "SamplePath":
        return SamplePath(tuple(v[rows] for v in self.values))


@dataclass(frozen=True, eq=False)
class Stage:
    """Integrand f_t with an optional Jacobian; no Jacobian marks the stage nonsmooth."""
    integrand: Integrand
    jacobian: Optional[Jacobian] = None
    trial_point: Optional[np.ndarray] = None
    name: str = ""

    @property
    def smooth(self) -> bool:
        return self.jacobian is not None


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """Box [lower, upper] (bounds may be infinite) or a custom Euclidean projector."""
    dim: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    projector: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def kind(self) -> str:
        return "custom" if self.projector is not None else "box"

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float]) -> "FeasibleSet":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionMismatch(None, f"box bounds of shapes {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        return cls(dim=lo.size, lower=lo, upper=hi)

    @classmethod
    def unbounded(cls, dim: int) -> "FeasibleSet":
        return cls.box(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def custom(cls, dim: int, projector: Callable[[np.ndarray], np.ndarray]) -> "FeasibleSet":
        return cls(dim=dim, projector=projector)

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))
        return bool(np.allclose(self.projector(x), x, atol=tol))


@dataclass(frozen=True, eq=False)
class MccoProblem:
    """Stage count, dimension chain, samplers, integrands and the feasible set."""
    T: int
    dims: Tuple[int, ...]
    noise_dims: Tuple[int, ...]
    sampler_1: Sampler
    kernels: Tuple[Kernel, ...]
    stages: Tuple[Stage, ...]
    feasible_set: FeasibleSet
    name: str = "custom"
    reference_point: Optional[np.ndarray] = field(default=None)

    @property
    def decision_dim(self) -> int:
        return self.dims[-1]

    @property
    def smooth(self) -> bool:
        return all(stage is not None and stage.smooth for stage in self.stages)


def validate_problem(problem: MccoProblem, require_gradient: bool = False) -> None:
    """Check the dimension chain and that every declared evaluator exists and returns declared shapes."""
    T = problem.T
    if T < 1:
        raise MissingStage(1, "a problem needs at least one stage")
    if len(problem.dims) != T + 1:
        raise DimensionMismatch(None, f"expected {T + 1} dimensions d_0..d_T, got {len(problem.dims)}")
    if problem.dims[0] != 1:
        raise DimensionMismatch(0, f"d_0 must be 1, got {problem.dims[0]}")
    if any(d < 1 for d in problem.dims):
        raise DimensionMismatch(None, f"dimensions must be positive, got {problem.dims}")
    if len(problem.noise_dims) != T:
        raise DimensionMismatch(None, f"expected {T} noise dimensions, got {len(problem.noise_dims)}")
    if problem.sampler_1 is None:
        raise MissingStage(1, "marginal sampler for xi_1 is missing")
    for t in range(1, T + 1):
        if t > len(problem.stages) or problem.stages[t - 1] is None or problem.stages[t - 1].integrand is None:
            raise MissingStage(t, "integrand is missing")
    for t in range(1, T):
        if t > len(problem.kernels) or problem.kernels[t - 1] is None:
            raise MissingStage(t + 1, "conditional sampler is missing")
    if problem.feasible_set.dim != problem.decision_dim:
        raise DimensionMismatch(T, f"feasible set has dimension {problem.feasible_set.dim}, d_T = {problem.decision_dim}")
    if require_gradient:
        for t, stage in enumerate(problem.stages, start=1):
            if not stage.smooth:
                raise NotDifferentiable(t)

    # try every sampler and evaluator on a two-row batch
    rng = np.random.default_rng(0)
    rows = 2
    xi = np.asarray(problem.sampler_1(rng, rows))
    _expect_shape(xi, (rows, problem.noise_dims[0]), 1, "sampler for xi_1")
    path = SamplePath((xi,))
    for t in range(1, T):
        xi = np.asarray(problem.kernels[t - 1](rng, path))
        _expect_shape(xi, (rows, problem.noise_dims[t]), t + 1, "conditional sampler")
        path = path.append(xi)
    for t, stage in enumerate(problem.stages, start=1):
        d_in, d_out = problem.dims[t], problem.dims[t - 1]
        point = stage.trial_point if stage.trial_point is not None else np.ones(d_in)
        x = np.broadcast_to(np.asarray(point, dtype=float), (rows, d_in))
        _expect_shape(np.asarray(stage.integrand(path.values[t - 1], x)), (rows, d_out), t, "integrand")
        if stage.smooth:
            _expect_shape(np.asarray(stage.jacobian(path.values[t - 1], x)), (rows, d_in, d_out), t, "Jacobian")
    logger.debug(f"Validated problem '{problem.name}' with T={T}, dims={problem.dims}.")


def _expect_shape(array: np.ndarray, shape: tuple, stage: int, what: str) -> None:
    if array.shape != shape:
        raise DimensionMismatch(stage, f"{what} returned shape {array.shape}, expected {shape}")


def _single_point(problem: MccoProblem, t: int, xi, x_t) -> Tuple[np.ndarray, np.ndarray]:
    if not 1 <= t <= problem.T:
        raise DimensionMismatch(t, f"stage must lie in 1..{problem.T}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    if xi.shape != (problem.noise_dims[t - 1],):
        raise DimensionMismatch(t, f"noise has shape {xi.shape}, expected ({problem.noise_dims[t - 1]},)")
    if x_t.shape != (problem.dims[t],):
        raise DimensionMismatch(t, f"argument has shape {x_t.shape}, expected ({problem.dims[t]},)")
    return xi[None, :], x_t[None, :]


def evaluate_integrand(problem: MccoProblem, t: int, xi, x_t) -> np.ndarray:
    """f_t(xi_t, x_t) as a vector of length d_{t-1}."""
    xi_b, x_b = _single_point(problem, t, xi, x_t)
    out = np.asarray(problem.stages[t - 1].integrand(xi_b, x_b))
    _expect_shape(out, (1, problem.dims[t - 1]), t, "integrand")
    return out[0]


def integrand_jacobian(problem: MccoProblem, t: int, xi, x_t) -> np.ndarray:
    """Transposed Jacobian of f_t in x_t, shape d_t x d_{t-1}."""
    stage = problem.stages[t - 1] if 1 <= t <= problem.T else None
    if stage is not None and not stage.smooth:
        raise NotDifferentiable(t)
    xi_b, x_b = _single_point(problem, t, xi, x_t)
    out = np.asarray(stage.jacobian(xi_b, x_b))
    _expect_shape(out, (1, problem.dims[t], problem.dims[t - 1]), t, "Jacobian")
    return out[0]


def project(feasible_set: FeasibleSet, x) -> np.ndarray:
    """Euclidean projection onto the feasible set."""
    x = np.asarray(x, dtype=float)
    if x.shape != (feasible_set.dim,):
        raise DimensionMismatch(None, f"point has shape {x.shape}, feasible set dimension is {feasible_set.dim}")
    if feasible_set.kind == "box":
        return np.clip(x, feasible_set.lower, feasible_set.upper)
    out = np.asarray(feasible_set.projector(x), dtype=float)
    if out.shape != x.shape:
        raise DimensionMismatch(None, f"projector returned shape {out.shape}")
    return out


def as_decision(problem: MccoProblem, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (problem.decision_dim,):
        raise DimensionMismatch(problem.T, f"decision vector has shape {x.shape}, expected ({problem.decision_dim},)")
    return x
