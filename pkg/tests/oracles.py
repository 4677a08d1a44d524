"""Independent reference implementations used only by the tests.

None of these share code with the package: they are brute-force or
exact-arithmetic versions of the quantities being checked.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import mpmath
import numpy as np


def cosine_mp(a, b, dps: int = 50) -> float:
    with mpmath.workdps(dps):
        a = [mpmath.mpf(float(x)) for x in a]
        b = [mpmath.mpf(float(x)) for x in b]
        dot = mpmath.fsum(x * y for x, y in zip(a, b))
        na = mpmath.sqrt(mpmath.fsum(x * x for x in a))
        nb = mpmath.sqrt(mpmath.fsum(y * y for y in b))
        return float(dot / (na * nb))


def _pooled(scores, labels):
    """Unique sorted scores with (count, positives) as exact integers."""
    table: dict[float, list[int]] = {}
    for s, y in zip(scores, labels):
        e = table.setdefault(float(s), [0, 0])
        e[0] += 1
        e[1] += int(y)
    keys = sorted(table)
    return keys, [table[k][0] for k in keys], [table[k][1] for k in keys]


def isotonic_by_partitions(scores, labels) -> list[Fraction]:
    """Exact least-squares isotonic fit by enumerating contiguous partitions.

    Returns the fitted value of every input sample (in input order).
    """
    keys, counts, pos = _pooled(scores, labels)
    n = len(keys)
    best = None
    for cuts in itertools.product((0, 1), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        means = []
        sse = Fraction(0)
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            c = sum(counts[lo:hi])
            p = sum(pos[lo:hi])
            m = Fraction(p, c)
            means.append((lo, hi, m))
            # sum of squared 0/1 residuals around m
            sse += p * (1 - m) ** 2 + (c - p) * m ** 2
        if any(a[2] > b[2] for a, b in zip(means, means[1:])):
            continue
        if best is None or sse < best[0]:
            best = (sse, means)
    value = {}
    for lo, hi, m in best[1]:
        for k in range(lo, hi):
            value[keys[k]] = m
    return [value[float(s)] for s in scores]


def squared_error(fitted, labels) -> float:
    return float(sum((Fraction(f) - int(y)) ** 2 for f, y in zip(fitted, labels)))


def grid_step_min_sse(scores, labels, step: float = 0.01) -> float:
    """Minimum squared error over monotone step functions with values on a grid.

    Dynamic programme over the sorted unique scores; the function must give
    tied scores the same value.
    """
    keys, counts, pos = _pooled(scores, labels)
    grid = np.round(np.arange(0, 1 + step / 2, step), 10)
    # best[g] = least error of the prefix with its last value <= grid[g]
    best = np.zeros(len(grid))
    for c, p in zip(counts, pos):
        best = np.minimum.accumulate(best + p * (1 - grid) ** 2 + (c - p) * grid ** 2)
    return float(best[-1])


def grid_step_min_sse_bruteforce(scores, labels, step: float = 0.1) -> float:
    keys, counts, pos = _pooled(scores, labels)
    grid = [round(k * step, 10) for k in range(int(round(1 / step)) + 1)]
    best = float("inf")
    for vals in itertools.combinations_with_replacement(grid, len(keys)):
        e = sum(p * (1 - v) ** 2 + (c - p) * v ** 2 for v, c, p in zip(vals, counts, pos))
        best = min(best, e)
    return best


def argmax_scan(row) -> int:
    best = 0
    for j in range(1, len(row)):
        if row[j] > row[best]:
            best = j
    return best


def shortlist_oracle(cheap: np.ndarray, expensive: np.ndarray, b: int) -> list[int]:
    """Materialise everything, take the cheap top-b, return the best by expensive score."""
    out = []
    for crow, erow in zip(cheap.tolist(), expensive.tolist()):
        ranked = sorted(range(len(crow)), key=lambda j: (-crow[j], j))[:b]
        out.append(min(ranked, key=lambda j: (-erow[j], j)))
    return out
