"""Deterministic worker-pool helper.

Tasks are independent and pure; results are assembled by index, so the
outcome never depends on the number of workers. MATCHKIT_THREADS caps the
pool size (default 1: most inner loops are already vectorized and gain
little from threading).
"""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    raw = os.environ.get("MATCHKIT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, min(n, os.cpu_count() or 1))


def parallel_map(fn, items):
    """Map `fn` over `items`, preserving order; threaded when allowed."""
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
