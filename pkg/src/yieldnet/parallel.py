"""Small deterministic parallel-map helper.

Work items must be independent; results come back in input order, so the
worker count never changes any output, only wall time. Threads are enough
here because the heavy lifting happens in numpy with the GIL released.
"""

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, jobs: int = 1):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(fn, items)
