"""Deterministic frame-level fan-out.

Workers must be pure, top-level functions; results come back in input
order, so job count never changes any output.
"""

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs=1):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
