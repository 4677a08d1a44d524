from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

ENV_THREADS = "FUSECAL_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get(ENV_THREADS, "1") or 1)
    return max(1, int(threads))


def for_each_row(fn: Callable[[int], None], n_rows: int, threads: int | None = None) -> None:
    """Call ``fn(row)`` for every row. Each row is handled by exactly one worker."""
    threads = resolve_threads(threads)
    if threads == 1 or n_rows < 2:
        for r in range(n_rows):
            fn(r)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, range(n_rows)))
