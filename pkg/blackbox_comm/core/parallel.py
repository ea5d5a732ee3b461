"""Trial worker pool.

Results come back in task order whatever the number of workers, so merged
reports are independent of ``--workers``.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from blackbox_comm.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def run_trials(fn: Callable[[T], R], tasks: Iterable[T], workers: Optional[int] = None,
               chunksize: int = 16) -> List[R]:
    """Map ``fn`` over ``tasks``; ``fn`` and the tasks must be picklable when workers > 1."""
    workers = settings.WORKERS if workers is None else workers
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]

    logger.debug(f"Dispatching {len(tasks)} trials to {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunksize))
