# mcco_services/randomness.py
"""Splittable random streams and the geometric level laws of the branching factors."""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import settings
from errors import InfiniteCost, LevelCapExceeded, OutOfSupport
from models import LevelDistribution

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RngStream:
    """Stream identified by a master seed and the path of child indices leading to it.

    The state is a numpy SeedSequence keyed by (seed, path) driving a counter-based
    Philox generator, so derivation is deterministic and siblings are independent.
    """
    seed: int
    path: Tuple[int, ...] = ()

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=self.path)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


def root_stream(seed: int) -> RngStream:
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    return RngStream(seed=int(seed))


def derive_stream(parent: RngStream, child_index: int) -> RngStream:
    if child_index < 0:
        raise ValueError(f"child index must be non-negative, got {child_index}")
    return RngStream(seed=parent.seed, path=parent.path + (int(child_index),))


def level_pmf(dist: LevelDistribution, level: int) -> float:
    """q(l) = r (1 - r)^l / (1 - (1 - r)^(M + 1)); the denominator is 1 when untruncated."""
    if level < 0 or (not dist.untruncated and level > dist.truncation):
        raise OutOfSupport(f"level {level} outside the support of {dist}")
    if dist.truncation == 0:
        return 1.0
    return dist.rate * math.pow(1.0 - dist.rate, level) / dist.normalizer


def level_pmf_array(dist: LevelDistribution, levels: np.ndarray) -> np.ndarray:
    if dist.truncation == 0:
        return np.ones(levels.shape)
    return dist.rate * np.power(1.0 - dist.rate, levels) / dist.normalizer


def level_moment(dist: LevelDistribution) -> float:
    """E[2^lambda] = sum_l q(l) 2^l in closed form."""
    if dist.truncation == 0:
        return 1.0
    r = dist.rate
    if dist.untruncated:
        if r <= 0.5:
            raise InfiniteCost(f"untruncated rate {r} <= 1/2 has infinite expected branching")
        return r / (2.0 * r - 1.0)
    ratio = 2.0 * (1.0 - r)
    terms = dist.truncation + 1
    if math.isclose(ratio, 1.0, rel_tol=0.0, abs_tol=1e-15):
        series = float(terms)
    else:
        series = (1.0 - ratio ** terms) / (1.0 - ratio)
    return r * series / dist.normalizer


def sample_levels(
    dist: LevelDistribution,
    generator: np.random.Generator,
    size: int,
    level_cap: Optional[int] = None,
) -> np.ndarray:
    """Inverse-CDF draws of the level; a degenerate law (M = 0) consumes no randomness."""
    if dist.truncation == 0:
        return np.zeros(size, dtype=np.int64)
    cap = settings.MCCO_LEVEL_CAP if level_cap is None else level_cap
    u = generator.random(size)
    with np.errstate(divide="ignore"):
        raw = np.ceil(np.log1p(-u * dist.normalizer) / math.log1p(-dist.rate)) - 1.0
    raw = np.maximum(raw, 0.0)
    if not dist.untruncated:
        raw = np.minimum(raw, dist.truncation)
    if size and raw.max() > cap:
        raise LevelCapExceeded(f"level {raw.max():.0f} drawn with rate {dist.rate} exceeds the safety cap {cap}")
    return raw.astype(np.int64)


def sample_level(dist: LevelDistribution, stream: RngStream) -> int:
    return int(sample_levels(dist, stream.generator(), 1)[0])
