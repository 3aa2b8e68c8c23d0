# mcco_services/utils/input_validator.py
import json
import math
import logging
import os
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import MissingConstant
from models import MlmcConfig, ProblemConstants, SaaConfig

logger = logging.getLogger(__name__)


class ConstantsValidator:
    """Checks that a ProblemConstants instance carries what a schedule formula needs."""

    def missing(
        self,
        constants: ProblemConstants,
        lists: Optional[Dict[str, int]] = None,
        scalars: Iterable[str] = (),
        moments: Iterable[int] = (),
    ) -> List[str]:
        """Names of absent constants; list fields must hold at least the given number of stages."""
        names = []
        for name, count in (lists or {}).items():
            if count <= 0:
                continue
            values = getattr(constants, name)
            if values is None or len(values) < count:
                names.append(f"{name}[1..{count}]")
        for name in scalars:
            if getattr(constants, name) is None:
                names.append(name)
        for p in moments:
            if p not in constants.mu_bar:
                names.append(f"mu_bar[{p}]")
        return names

    def require(self, constants: ProblemConstants, **needs) -> None:
        names = self.missing(constants, **needs)
        if names:
            raise MissingConstant(names)

    def stage_count(self, constants: ProblemConstants, field: str, offset: int) -> int:
        if constants.T is not None:
            return constants.T
        values = getattr(constants, field)
        if values is None:
            raise MissingConstant([field, "T"])
        return len(values) + offset


constants_validator = ConstantsValidator()


# --- Descriptor loading ---

def load_json(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path} is not valid JSON: {e}") from e


def load_problem_descriptor(source: str, known_kinds: Sequence[str]) -> Dict[str, Any]:
    """A JSON file path, or a bare adapter kind name meaning its defaults."""
    if os.path.isfile(source):
        return load_json(source)
    if source in known_kinds:
        return {"kind": source}
    raise FileNotFoundError(f"'{source}' is neither a descriptor file nor one of {', '.join(known_kinds)}")


def load_constants(path: str) -> ProblemConstants:
    return ProblemConstants.model_validate(load_json(path))


def parse_float_list(text: Optional[str]) -> Optional[List[float]]:
    if text is None or text == "":
        return None
    return [float(v) for v in text.split(",")]


def parse_truncations(text: Optional[str]) -> Optional[List[Optional[int]]]:
    if text is None or text == "":
        return None
    out: List[Optional[int]] = []
    for token in text.split(","):
        token = token.strip().lower()
        out.append(None if token in ("inf", "none", "") else int(token))
    return out


def parse_int_list(text: Optional[str]) -> Optional[List[int]]:
    if text is None or text == "":
        return None
    return [int(float(v)) for v in text.split(",")]


# --- Request models (input) ---

class RunConfig(BaseModel):
    """A single estimator run: problem descriptor, estimator choice and its configuration."""
    problem: Dict[str, Any] = Field(..., description="Adapter descriptor with a 'kind' field.")
    estimator: Literal["saa", "mlmc", "mlmc-grad"] = "mlmc"
    n1: Optional[int] = Field(None, ge=1)
    rates: Optional[List[float]] = None
    truncations: Optional[List[Optional[int]]] = None
    n: Optional[List[int]] = Field(None, description="SAA branching factors n_1..n_T.")
    x: Optional[List[float]] = None
    seed: int = Field(0, ge=0)
    threads: Optional[int] = Field(None, ge=1)
    block_size: Optional[int] = Field(None, ge=1)
    independent: bool = False

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="after")
    def _estimator_fields(self):
        if self.estimator == "saa":
            if not self.n:
                raise ValueError("the saa estimator needs branching factors n")
        else:
            if self.n1 is None:
                raise ValueError(f"the {self.estimator} estimator needs n1")
            rates = self.rates or []
            truncations = self.truncations if self.truncations is not None else [None] * len(rates)
            if len(rates) != len(truncations):
                raise ValueError(f"{len(rates)} rates but {len(truncations)} truncation points")
        if self.independent and self.estimator != "mlmc-grad":
            raise ValueError("independent sampling only applies to the gradient estimator")
        return self

    def mlmc_config(self) -> MlmcConfig:
        rates = self.rates or []
        truncations = self.truncations if self.truncations is not None else [None] * len(rates)
        extra = {"block_size": self.block_size} if self.block_size else {}
        return MlmcConfig.from_rates(self.n1, rates, truncations, **extra)

    def saa_config(self) -> SaaConfig:
        return SaaConfig(n=self.n, block_size=self.block_size)

    def summary(self) -> Tuple[str, int]:
        trees = self.n[0] if self.estimator == "saa" else self.n1
        return self.estimator, trees


def parse_grid(text: Optional[str]) -> Optional[List[float]]:
    if text is None or text == "":
        return None
    if ":" not in text:
        return parse_float_list(text)
    parts = [float(v) for v in text.split(":")]
    if len(parts) != 3 or parts[2] <= 0:
        raise ValueError(f"grid '{text}' must read start:stop:step with a positive step")
    start, stop, step = parts
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(max(count, 0))]
