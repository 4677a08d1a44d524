"""Raw similarity scores: cosine similarity of embeddings and thresholded match counts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._parallel import for_each_row
from .core import EmbeddingMatrix, MatchRecordSet, ScoreKind, ScoreMatrix
from .errors import ConfigError, DegenerateInputError, OutOfBoundsError, RangeError, ShapeError

DEFAULT_MU = 0.5


@dataclass(frozen=True)
class MatchThreshold:
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if not (0.0 <= self.mu <= 1.0):
            raise ConfigError(f"match threshold must lie in [0, 1], got {self.mu}")


def _threshold(mu) -> float:
    return mu.mu if isinstance(mu, MatchThreshold) else MatchThreshold(float(mu)).mu


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity with index-order accumulation, so ``cos(a, b) == cos(b, a)`` bitwise."""
    if len(a) != len(b):
        raise ShapeError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = na = nb = 0.0
    for x, y in zip(a, b):
        x = float(x)
        y = float(y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DegenerateInputError("non-finite vector entry")
        dot += x * y
        na += x * x
        nb += y * y
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("zero-norm vector")
    return dot / math.sqrt(na * nb)


def global_score_matrix(query: EmbeddingMatrix, db: EmbeddingMatrix, threads: int | None = None) -> ScoreMatrix:
    if query.dims != db.dims:
        raise ShapeError(f"embedding dims differ: {query.dims} vs {db.dims}")
    q = query.values
    d = db.values
    # Dots and squared norms share einsum's summation order (BLAS does not
    # guarantee that), and sqrt(na * nb) is used instead of sqrt(na) * sqrt(nb):
    # together they make identical vectors score exactly 1.0.
    qn = np.einsum("ij,ij->i", q, q)
    dn = np.einsum("ij,ij->i", d, d)
    out = np.empty((q.shape[0], d.shape[0]), dtype=np.float64)

    def row(r: int) -> None:
        out[r] = np.einsum("ij,j->i", d, q[r]) / np.sqrt(qn[r] * dn)

    for_each_row(row, q.shape[0], threads)
    np.clip(out, -1.0, 1.0, out=out)
    return ScoreMatrix(out, ScoreKind.RAW_GLOBAL)


def local_match_count(confidences: Sequence[float], threshold=DEFAULT_MU) -> int:
    """Number of matches whose confidence strictly exceeds the threshold."""
    mu = _threshold(threshold)
    n = 0
    for c in confidences:
        if not (0.0 <= c <= 1.0):
            raise RangeError(f"confidence {c!r} outside [0, 1]")
        if c > mu:
            n += 1
    return n


def local_score_matrix(records: MatchRecordSet, threshold=DEFAULT_MU, n_query: int | None = None,
                       n_database: int | None = None, rows=None) -> ScoreMatrix:
    """Thresholded match counts for every pair; pairs without records score 0.

    ``rows`` restricts the output to a subset of query rows (in the given order).
    """
    mu = _threshold(threshold)
    n_query = records.n_query if n_query is None else int(n_query)
    n_database = records.n_database if n_database is None else int(n_database)
    q = records.query_index
    d = records.database_index
    if len(q) and (q.max() >= n_query or d.max() >= n_database):
        raise OutOfBoundsError(f"record index outside {n_query}x{n_database}")
    keep = records.confidence > mu
    flat = np.bincount(q[keep] * n_database + d[keep], minlength=n_query * n_database)
    out = flat.reshape(n_query, n_database).astype(np.float64)
    if rows is not None:
        out = out[np.asarray(rows, dtype=np.int64)]
    return ScoreMatrix(out, ScoreKind.RAW_LOCAL)
