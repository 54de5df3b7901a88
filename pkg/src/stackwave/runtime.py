"""Job bookkeeping, cooperative cancellation and ordered fan-out of independent solves."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, List, Sequence

logger = logging.getLogger(__name__)

_JOB_LOCK = threading.Lock()
_JOB_ACTIVE = False
_CANCEL_EVENT = threading.Event()


class JobStateError(RuntimeError):
    pass


class JobCancelled(RuntimeError):
    pass


def cancel_job() -> None:
    if not _JOB_ACTIVE:
        raise JobStateError("No active job to cancel")
    _CANCEL_EVENT.set()


def cancel_requested() -> bool:
    return _CANCEL_EVENT.is_set()


def raise_if_cancelled() -> None:
    if _CANCEL_EVENT.is_set():
        raise JobCancelled("Job was cancelled")


def _partition_counts(total: int, parts: int) -> List[int]:
    base = total // parts
    remainder = total % parts
    return [base + (1 if i < remainder else 0) for i in range(parts)]


def _chunks(items: Sequence[Any], parts: int) -> List[Sequence[Any]]:
    out = []
    start = 0
    for count in _partition_counts(len(items), parts):
        out.append(items[start:start + count])
        start += count
    return [c for c in out if len(c)]


def _apply_chunk(fn: Callable[[Any], Any], chunk: Sequence[Any]) -> List[Any]:
    return [fn(item) for item in chunk]


def run_ordered(fn: Callable[[Any], Any], items: Iterable[Any], jobs: int = 1) -> List[Any]:
    """Apply `fn` to every item and return the results in input order.

    With jobs > 1 the items are split into contiguous chunks handed to a
    process pool; `fn` must then be picklable (a module-level function).
    Results do not depend on `jobs`.
    """
    items = list(items)
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    if jobs == 1 or len(items) <= 1:
        results = []
        for item in items:
            raise_if_cancelled()
            results.append(fn(item))
        return results

    chunks = _chunks(items, min(jobs, len(items)))
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_apply_chunk, fn, chunk) for chunk in chunks]
        gathered: List[Any] = []
        for future in futures:
            raise_if_cancelled()
            gathered.extend(future.result())
    return gathered


def run(fn: Callable[..., Any], *args, time_job: bool = False, **kwargs):
    """Run one job under the process-wide job lock.

    Only one job may be active at a time; a cancellation requested through
    `cancel_job` is observed by the iterative solvers at their next
    iteration.
    """
    global _JOB_ACTIVE
    with _JOB_LOCK:
        if _JOB_ACTIVE:
            raise JobStateError("A job is already running; wait for it to finish before starting a new one")
        _JOB_ACTIVE = True
        _CANCEL_EVENT.clear()

    start = time.time() if time_job else None
    try:
        result = fn(*args, **kwargs)
    finally:
        _CANCEL_EVENT.clear()
        with _JOB_LOCK:
            _JOB_ACTIVE = False
    if start is not None:
        elapsed = time.time() - start
        logger.info("job %s finished in %.3f s", getattr(fn, "__name__", "job"), elapsed)
        return {"result": result, "elapsed_s": elapsed}
    return result
