# errors.py
"""Exception hierarchy shared by the services package and the CLI.

Every error carries the process exit code the CLI maps it to:
2 for validation problems, 3 for cost-guard aborts, 4 for failed acceptance checks.
"""
from typing import Iterable, Optional


class MccoError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class DimensionMismatch(MccoError, ValueError):
    """A shape does not match the declared stage dimensions."""
    exit_code = 2

    def __init__(self, stage: Optional[int], message: str):
        self.stage = stage
        prefix = f"stage {stage}: " if stage is not None else ""
        super().__init__(f"{prefix}{message}")


class MissingStage(MccoError, ValueError):
    exit_code = 2

    def __init__(self, stage: int, message: str = "evaluator or sampler is missing"):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class NotDifferentiable(MccoError, ValueError):
    exit_code = 2

    def __init__(self, stage: int):
        self.stage = stage
        super().__init__(f"stage {stage}: integrand is declared nonsmooth (no Jacobian)")


class OutOfSupport(MccoError, ValueError):
    exit_code = 2


class MissingConstant(MccoError, ValueError):
    """A schedule formula needs constants that were not supplied."""
    exit_code = 2

    def __init__(self, names: Iterable[str]):
        self.names = sorted(set(names))
        super().__init__(f"missing problem constants: {', '.join(self.names)}")


class EmptyWindow(MccoError, ValueError):
    exit_code = 2

    def __init__(self, stage: int, message: str):
        self.stage = stage
        super().__init__(f"stage {stage}: {message}")


class InvalidParams(MccoError, ValueError):
    exit_code = 2


class SingularQaa(MccoError, ArithmeticError):
    exit_code = 2


class NonFinite(MccoError, ArithmeticError):
    exit_code = 2


class TooFewSamples(MccoError, ValueError):
    exit_code = 2


class DegenerateFit(MccoError, ValueError):
    exit_code = 2


class CostGuardExceeded(MccoError, RuntimeError):
    """The scenario count passed the configured budget."""
    exit_code = 3


class LevelCapExceeded(CostGuardExceeded):
    """An untruncated level draw passed the hard safety cap."""


class InfiniteCost(MccoError, ArithmeticError):
    exit_code = 3


class AcceptanceFailure(MccoError):
    exit_code = 4


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, MccoError):
        return exc.exit_code
    # pydantic ValidationError and malformed JSON are input errors
    if isinstance(exc, (ValueError, KeyError, FileNotFoundError)):
        return 2
    return 1
