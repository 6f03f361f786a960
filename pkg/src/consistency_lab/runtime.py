"""Worker-count control for embarrassingly parallel grid evaluation.

The CONSISTENCY_LAB_THREADS environment variable caps the worker count;
the default is the machine parallelism.  Results are always assembled
in input order, so parallel execution cannot change any output.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "CONSISTENCY_LAB_THREADS"


def worker_count() -> int:
    limit = os.cpu_count() or 1
    raw = os.environ.get(ENV_VAR)
    if raw:
        try:
            limit = min(limit, max(1, int(raw)))
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    return limit


def parallel_map(fn, items):
    """Order-preserving map over independent pure tasks."""
    items = list(items)
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
