# models.py
import logging
import math
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings

logger = logging.getLogger(__name__)


# --- Level laws and estimator configurations ---

class LevelDistribution(BaseModel):
    """Truncated (or untruncated) geometric law of a stage's log-branching factor."""
    rate: float = Field(..., gt=0.0, lt=1.0, description="Geometric rate r in (0, 1).")
    truncation: Optional[int] = Field(None, ge=0, description="Truncation point M; None means untruncated.")

    model_config = ConfigDict(frozen=True)

    @property
    def untruncated(self) -> bool:
        return self.truncation is None

    @property
    def normalizer(self) -> float:
        """1 - (1 - r)^(M + 1), or 1 when untruncated."""
        if self.untruncated:
            return 1.0
        return -math.expm1((self.truncation + 1) * math.log1p(-self.rate))


class MlmcConfig(BaseModel):
    """Number of trees plus the per-stage level laws for stages 1..T-1."""
    n1: int = Field(..., ge=1, description="Number of independent trees.")
    levels: List[LevelDistribution] = Field(default_factory=list)
    block_size: int = Field(default_factory=lambda: settings.MCCO_BLOCK_SIZE, ge=1)

    @model_validator(mode="after")
    def _warn_on_divergent_rates(self):
        for t, level in enumerate(self.levels, start=1):
            if level.untruncated and level.rate <= 0.5:
                logger.warning(f"Stage {t}: untruncated rate {level.rate} <= 1/2 has infinite expected cost.")
        return self

    @classmethod
    def from_rates(cls, n1: int, rates: List[float], truncations: List[Optional[int]], **kwargs) -> "MlmcConfig":
        if len(rates) != len(truncations):
            raise ValueError(f"{len(rates)} rates but {len(truncations)} truncation points")
        levels = [LevelDistribution(rate=r, truncation=m) for r, m in zip(rates, truncations)]
        return cls(n1=n1, levels=levels, **kwargs)


class SaaConfig(BaseModel):
    """Per-stage branching factors n_1..n_T of a scenario forest."""
    n: List[int] = Field(..., min_length=1)
    block_size: Optional[int] = Field(None, ge=1, description="Trees per block; derived from the leaf budget when omitted.")
    leaf_budget: Optional[int] = Field(None, ge=1, description="Max rows in one stage batch; MCCO_LEAF_BUDGET when omitted.")

    @field_validator("n")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if any(k < 1 for k in value):
            raise ValueError(f"branching factors must be >= 1, got {value}")
        return value

    @property
    def scenario_count(self) -> int:
        return math.prod(self.n)

    def resolved_leaf_budget(self) -> int:
        return self.leaf_budget if self.leaf_budget is not None else settings.MCCO_LEAF_BUDGET

    def resolved_block_size(self) -> int:
        if self.block_size is not None:
            return self.block_size
        leaves_per_tree = math.prod(self.n[1:])
        return max(1, min(settings.MCCO_BLOCK_SIZE, self.resolved_leaf_budget() // leaves_per_tree))


# --- Problem constants feeding the schedule formulas ---

class ProblemConstants(BaseModel):
    """User- or pilot-supplied constants of a problem instance. Lists are indexed by stage 1..T."""
    L: Optional[List[float]] = None
    S: Optional[List[float]] = None
    sigma: Optional[List[float]] = None
    mu_bar: Dict[int, float] = Field(default_factory=dict, description="p -> terminal moment bound mu_bar_T^p.")
    nu_bar: Dict[int, float] = Field(default_factory=dict, description="p -> terminal gradient moment bound.")
    R: Optional[List[float]] = None
    rho: Optional[List[float]] = None
    zeta2: Optional[float] = None
    B: Dict[int, float] = Field(default_factory=dict)
    D_X: Optional[float] = None
    L_prime: Optional[float] = None
    d: Optional[int] = Field(None, ge=1, description="Decision dimension.")
    dims: Optional[List[int]] = Field(None, description="Argument dimensions d_1..d_T.")
    T: Optional[int] = Field(None, ge=1, description="Stage count; inferred from the list lengths when omitted.")

    @model_validator(mode="after")
    def _strictly_positive(self):
        for name in ("L", "S", "sigma", "R"):
            values = getattr(self, name)
            if values is not None and any(v <= 0 for v in values):
                raise ValueError(f"constants {name} must be strictly positive")
        for name in ("mu_bar", "nu_bar", "B"):
            if any(v <= 0 for v in getattr(self, name).values()):
                raise ValueError(f"constants {name} must be strictly positive")
        for name in ("zeta2", "D_X", "L_prime"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"constant {name} must be strictly positive")
        return self

    def b_constant(self, p: int) -> float:
        """Universal moment constant B_p; B_2 = 1 and (p - 1)^(p / 2) otherwise unless overridden."""
        if p in self.B:
            return self.B[p]
        return 1.0 if p == 2 else float((p - 1) ** (p / 2))

    def log_b_constant(self, p: int) -> float:
        if p in self.B:
            return math.log(self.B[p])
        return 0.0 if p == 2 else (p / 2) * math.log(p - 1)


# --- Estimator outputs ---

class EstimateReport(BaseModel):
    """Value estimate with per-tree realizations and exact scenario accounting."""
    value: float
    tree_values: np.ndarray
    scenario_count: int
    expected_cost: Optional[float] = None
    n1: int
    seed: Optional[int] = None
    estimator: str = "mlmc"
    wall_ms: float = 0.0

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def stderr(self) -> float:
        if self.tree_values.size < 2:
            return float("nan")
        return float(np.std(self.tree_values, ddof=1) / math.sqrt(self.tree_values.size))


class GradientReport(BaseModel):
    """Gradient estimate; tree_values carries the coupled H_1 realizations when available."""
    gradient: np.ndarray
    tree_gradients: Optional[np.ndarray] = None
    tree_values: Optional[np.ndarray] = None
    scenario_count: int = 0
    expected_cost: Optional[float] = None
    n1: int = 0
    seed: Optional[int] = None
    wall_ms: float = 0.0

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @property
    def stderr(self) -> np.ndarray:
        if self.tree_gradients is None or self.tree_gradients.shape[0] < 2:
            return np.full(self.gradient.shape, np.nan)
        return np.std(self.tree_gradients, axis=0, ddof=1) / math.sqrt(self.tree_gradients.shape[0])


# --- Schedules ---

class TruncationSchedule(BaseModel):
    """Truncation points M_1..M_{T-1} with the rates they were computed for."""
    truncations: List[int]
    rates: List[float]
    n1: Optional[int] = None
    moment_bound: Optional[float] = None
    smooth: bool
    mode: Literal["mse", "highprob"]

    def to_config(self, n1: Optional[int] = None) -> MlmcConfig:
        trees = n1 or self.n1
        if trees is None:
            raise ValueError("number of trees unknown; pass n1 explicitly")
        return MlmcConfig.from_rates(trees, self.rates, self.truncations)


class RateWindow(BaseModel):
    """Admissible open interval of gradient-estimator rates at one stage."""
    stage: int
    lower: float
    upper: float
    default: float


# --- Optimizer configurations and results ---

class SgdConfig(BaseModel):
    K: int = Field(..., ge=1, description="Iteration count.")
    eta: float = Field(..., gt=0.0, description="Base stepsize.")
    schedule: Literal["constant", "inverse_sqrt"] = "constant"

    def stepsize(self, k: int) -> float:
        if self.schedule == "inverse_sqrt":
            return self.eta / math.sqrt(k)
        return self.eta


class AdamBlock(BaseModel):
    """A coordinate block with its own learning rate, clip threshold and transforms."""
    name: str
    indices: List[int] = Field(..., min_length=1)
    lr: float = Field(..., gt=0.0)
    clip: float = Field(math.inf, gt=0.0)
    softplus: bool = False
    bounds: Optional[Tuple[float, float]] = None
    l2: float = Field(0.0, ge=0.0)


class AdamConfig(BaseModel):
    iterations: int = Field(..., ge=1)
    blocks: List[AdamBlock] = Field(..., min_length=1)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class OptimizationResult(BaseModel):
    trajectory: np.ndarray
    output: np.ndarray
    scenario_counts: List[int] = Field(default_factory=list, description="Cumulative scenarios after each iteration.")
    total_scenarios: int = 0
    skipped_updates: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True)


# --- Analysis results ---

class ReplicationSummary(BaseModel):
    estimates: List[float]
    truth: Optional[float] = None
    mean: float
    mse: Optional[float] = None
    bias2: Optional[float] = None
    variance: float
    scenario_counts: List[int] = Field(default_factory=list)


class TuningResult(BaseModel):
    rate: float
    grid: List[float]
    work: List[float]
    fitted: List[float]


class BanditsOptimum(BaseModel):
    """Exact minimizer of the dual-softmax bandit objective."""
    lambda_: float = Field(..., alias="lambda")
    theta1: float
    theta2: float
    value: float
    lambda_at_bound: bool = False

    model_config = ConfigDict(populate_by_name=True)


# --- Experiment summaries ---

class AcceptanceCheck(BaseModel):
    """One pass/fail tolerance of an experiment."""
    name: str
    value: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    passed: bool
    detail: str = ""

    @classmethod
    def within(cls, name: str, value: float, lower: float, upper: float, detail: str = "") -> "AcceptanceCheck":
        ok = bool(math.isfinite(value) and lower <= value <= upper)
        return cls(name=name, value=value, lower=lower, upper=upper, passed=ok, detail=detail)


class ExperimentSummary(BaseModel):
    name: str
    seed: int
    config: Dict[str, Any] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)
    checks: List[AcceptanceCheck] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]
