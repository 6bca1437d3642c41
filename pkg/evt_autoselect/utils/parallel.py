"""Ordered worker-pool mapping used by bootstrap and Monte Carlo loops."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    """Worker count from ``EVT_WORKERS``, falling back to 1."""
    value = os.getenv("EVT_WORKERS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        logger.warning(f"Ignoring non-integer EVT_WORKERS={value!r}")
        return 1


def ordered_map(
    func: Callable[[T], R],
    items: Iterable[T],
    workers: Optional[int] = 1,
    progress: bool = False,
    desc: Optional[str] = None,
) -> List[R]:
    """Apply ``func`` to every item and return results in input order.

    ``func`` must be a module-level function when ``workers > 1``. Each item
    carries its own generator, so results are identical for any worker count.
    """
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in tqdm(items, desc=desc, disable=not progress)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(func, items, chunksize=max(1, len(items) // (4 * workers)))
        return list(tqdm(results, total=len(items), desc=desc, disable=not progress))
