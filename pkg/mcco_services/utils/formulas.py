# mcco_services/utils/formulas.py
"""Small numeric helpers shared by the schedule formulas."""
import math
from typing import Sequence


def ceil_safe(value: float, rel: float = 1e-9) -> int:
    """Ceiling that ignores floating-point noise just above an integer (200.00000000000003 -> 200)."""
    if not math.isfinite(value):
        raise OverflowError(f"cannot round non-finite value {value}")
    return int(math.ceil(value - rel * max(1.0, abs(value))))


def stage_product(values: Sequence[float], start: int, stop: int) -> float:
    """prod_{s=start}^{stop} values_s with 1-based stage indices; empty ranges give 1."""
    out = 1.0
    for s in range(start, stop + 1):
        out *= values[s - 1]
    return out


def log_stage_product(values: Sequence[float], start: int, stop: int) -> float:
    return sum(math.log(values[s - 1]) for s in range(start, stop + 1))
