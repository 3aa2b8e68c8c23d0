# mcco_services/parallel.py
"""Ordered execution of independent work items on a thread pool."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

from config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")


def block_sizes(n_items: int, block_size: int) -> List[int]:
    full, rest = divmod(n_items, block_size)
    return [block_size] * full + ([rest] if rest else [])


def run_ordered(work: Callable[[int], T], n_items: int, threads: Optional[int] = None) -> List[T]:
    """Run work(0..n_items-1) and return results in index order, whatever the worker count."""
    workers = min(settings.resolved_threads(threads), max(n_items, 1))
    if workers == 1 or n_items <= 1:
        return [work(i) for i in range(n_items)]
    logger.debug(f"Dispatching {n_items} work items to {workers} threads.")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(work, i) for i in range(n_items)]
        try:
            return [future.result() for future in futures]
        except BaseException:
            # queued items never start once one has failed
            for future in futures:
                future.cancel()
            raise
