# mcco_services/problems/__init__.py
"""Concrete problem adapters, selected by the `kind` field of a JSON descriptor."""
import logging
from typing import Annotated, Any, Callable, Dict, Union

from pydantic import Field, TypeAdapter, ValidationError

from errors import InvalidParams
from ..core import MccoProblem, validate_problem
from .bandits import BanditCostModel, BanditsParams, bandits_ground_truth, bandits_objective, build_bandits
from .entropic import EntropicParams, build_entropic, entropic_exact_value
from .linear import LinearParams, build_linear, linear_exact_gradient, linear_exact_value
from .lqr import LqrParams, build_lqr, lqr_exact_value
from .stopping import (
    BermudanParams,
    StoppingParams,
    bermudan_surrogate_params,
    build_bermudan,
    build_stopping,
    build_stopping_problem,
)
from .synthetic import SyntheticParams, build_synthetic, synthetic_exact_value

logger = logging.getLogger(__name__)

AdapterParams = Annotated[
    Union[SyntheticParams, LinearParams, StoppingParams, BermudanParams, EntropicParams, LqrParams, BanditsParams],
    Field(discriminator="kind"),
]

_adapter_params = TypeAdapter(AdapterParams)

_BUILDERS: Dict[str, Callable[[Any], MccoProblem]] = {
    "synthetic": build_synthetic,
    "linear": build_linear,
    "stopping": build_stopping,
    "bermudan": build_bermudan,
    "entropic": build_entropic,
    "lqr": build_lqr,
    "bandits": build_bandits,
}

KINDS = tuple(_BUILDERS)


def parse_adapter_params(descriptor: Dict[str, Any]):
    """Validate a descriptor dict into the params model named by its `kind`."""
    if not isinstance(descriptor, dict) or "kind" not in descriptor:
        raise InvalidParams(f"problem descriptor needs a 'kind' field, one of {', '.join(KINDS)}")
    try:
        return _adapter_params.validate_python(descriptor)
    except ValidationError as e:
        raise InvalidParams(f"invalid '{descriptor.get('kind')}' descriptor: {e}") from e


def build_problem(params) -> MccoProblem:
    """Build and validate the problem for a params model or a raw descriptor."""
    if isinstance(params, dict):
        params = parse_adapter_params(params)
    builder = _BUILDERS.get(getattr(params, "kind", None))
    if builder is None:
        raise InvalidParams(f"unknown problem kind {getattr(params, 'kind', None)!r}")
    problem = builder(params)
    validate_problem(problem)
    logger.debug(f"Built '{problem.name}' problem: T={problem.T}, dims={problem.dims}.")
    return problem


__all__ = [
    "AdapterParams", "KINDS", "build_problem", "parse_adapter_params",
    "BanditCostModel", "BanditsParams", "BermudanParams", "EntropicParams", "LinearParams",
    "LqrParams", "StoppingParams", "SyntheticParams",
    "bandits_ground_truth", "bandits_objective", "bermudan_surrogate_params", "build_stopping_problem",
    "entropic_exact_value", "linear_exact_gradient", "linear_exact_value", "lqr_exact_value",
    "synthetic_exact_value",
]
