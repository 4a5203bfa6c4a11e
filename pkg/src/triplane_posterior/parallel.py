"""
Worker-pool helper.

PURPOSE: Order-preserving parallel map over independent work items
DEPENDENCIES: concurrent.futures (stdlib)

ARCHITECTURE NOTES:
- Threads from a ThreadPoolExecutor; numpy releases the GIL in its heavy kernels
- Each task runs in a copy of the caller's context, so the precision setting and the
  "no active record" state carry over to workers
- workers <= 1 runs inline, which is the bit-reproducible mode
"""

from __future__ import annotations

import contextvars
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply fn to every item and return results in input order."""
    work = list(items)
    if workers <= 1 or len(work) <= 1:
        return [fn(item) for item in work]

    with ThreadPoolExecutor(max_workers=min(workers, len(work))) as executor:
        futures = [executor.submit(contextvars.copy_context().run, fn, item) for item in work]
        return [f.result() for f in futures]
