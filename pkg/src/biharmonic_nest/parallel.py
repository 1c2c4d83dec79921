"""Process-level fan-out capped by ``NEST_THREADS`` (default 1: serial).

Results come back in input order, so reductions downstream stay
deterministic regardless of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("NEST_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items: list) -> list:
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
