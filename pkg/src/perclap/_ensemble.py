"""Ordered, seed-split parallel map over ensemble members."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None or jobs == 0:
        return os.cpu_count() or 1
    if jobs < 0:
        raise ValueError(f"jobs must be non-negative, got {jobs}")
    return int(jobs)


def ordered_map(fn, items, jobs: int | None = 1) -> list:
    """``[fn(x) for x in items]``, optionally in worker processes.

    Results come back in input order whatever the completion order, so any
    reduction over them is independent of ``jobs``.  ``fn`` must be
    picklable when ``jobs > 1``.
    """
    items = list(items)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
