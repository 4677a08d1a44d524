"""Closed-set top-1 retrieval, accuracy, shortlist re-ranking, threshold tuning and calibration subsets."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._parallel import for_each_row
from .calibration import ISOTONIC, apply_calibrator, fit_calibrator
from .core import ItemCatalog, LabelGuard, MatchRecordSet, ScoreMatrix, build_pair_labels, substream
from .errors import (
    ConfigError,
    ConstraintError,
    EmptyDatabaseError,
    FusecalError,
    ScorerError,
    ShapeError,
)
from .similarity import local_score_matrix

logger = logging.getLogger(__name__)

# 0.05, 0.10, ..., 0.95
DEFAULT_MU_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
MAX_SUBSAMPLE_ATTEMPTS = 1000


@dataclass(frozen=True)
class Predictions:
    """Per-query top-1 database index, its identity and its score."""

    indices: np.ndarray
    identities: list[str]
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class RetrievalResult:
    query_indices: np.ndarray
    predictions: Predictions
    top1_accuracy: float


@dataclass(frozen=True)
class Budget:
    b: int

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise ConfigError(f"budget must be a positive integer, got {self.b}")
        object.__setattr__(self, "b", int(self.b))


def _argmax_rows(values: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest database index
    return np.argmax(values, axis=1) if values.shape[0] else np.zeros(0, dtype=np.int64)


def rank_top1(scores: ScoreMatrix | np.ndarray, db_catalog: ItemCatalog) -> Predictions:
    values = scores.values if isinstance(scores, ScoreMatrix) else np.asarray(scores, dtype=np.float64)
    if values.shape[1] == 0 or len(db_catalog) == 0:
        raise EmptyDatabaseError("cannot rank against an empty database")
    if values.shape[1] != len(db_catalog):
        raise ShapeError(f"score matrix has {values.shape[1]} columns, database has {len(db_catalog)} items")
    idx = _argmax_rows(values).astype(np.int64)
    ids = db_catalog.identities
    return Predictions(idx, [ids[i] for i in idx.tolist()], values[np.arange(len(idx)), idx])


def top1_accuracy(predictions: Predictions, query_catalog, db_catalog: ItemCatalog | None = None,
                  query_indices=None) -> float:
    """Fraction of queries whose predicted identity equals their own.

    ``query_indices`` names the catalog rows the predictions belong to
    (default: all rows, in order).
    """
    if query_indices is None:
        query_indices = np.arange(len(query_catalog))
    query_indices = np.asarray(query_indices, dtype=np.int64)
    if len(predictions) != len(query_indices):
        raise ShapeError(f"{len(predictions)} predictions for {len(query_indices)} queries")
    if len(query_indices) == 0:
        return 0.0
    truth = query_catalog.identities_at(query_indices)
    hits = sum(p == t for p, t in zip(predictions.identities, truth))
    return hits / len(truth)


def topk_accuracy(scores: np.ndarray, truth: Sequence[str], db_catalog: ItemCatalog, k: int) -> float:
    if len(truth) == 0:
        return 0.0
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    ids = np.array(db_catalog.identities, dtype=object)
    return float(np.mean([t in set(ids[row]) for t, row in zip(truth, order)]))


def shortlist_order(cheap_row: np.ndarray) -> np.ndarray:
    """Database indices by descending cheap score, ties by lowest index."""
    return np.argsort(-cheap_row, kind="stable")


@dataclass
class ShortlistResult:
    predictions: Predictions
    evaluations: np.ndarray
    rankings: np.ndarray | None = None


def shortlist_rerank(cheap: ScoreMatrix | np.ndarray, expensive_scorer: Callable[[int, int], float],
                     budget: Budget | int, db_catalog: ItemCatalog, query_indices=None,
                     return_ranking: bool = False, threads: int | None = None) -> ShortlistResult:
    """Re-rank the cheap top-B candidates of every query with an expensive scorer.

    ``expensive_scorer(q, d)`` receives the query index (from
    ``query_indices``, default row number) and database index. It is called
    exactly ``min(B, D)`` times per query.

    With ``return_ranking`` the full ranking puts shortlist members first by
    expensive score and keeps the cheap order for everything else.
    """
    budget = budget if isinstance(budget, Budget) else Budget(budget)
    values = cheap.values if isinstance(cheap, ScoreMatrix) else np.asarray(cheap, dtype=np.float64)
    n_q, n_d = values.shape
    if n_d == 0:
        raise EmptyDatabaseError("cannot rank against an empty database")
    if n_d != len(db_catalog):
        raise ShapeError(f"cheap matrix has {n_d} columns, database has {len(db_catalog)} items")
    qidx = np.arange(n_q) if query_indices is None else np.asarray(query_indices, dtype=np.int64)
    if len(qidx) != n_q:
        raise ShapeError("query_indices does not match the cheap matrix rows")
    b = min(budget.b, n_d)

    best = np.empty(n_q, dtype=np.int64)
    best_score = np.empty(n_q, dtype=np.float64)
    evaluations = np.zeros(n_q, dtype=np.int64)
    rankings = np.empty((n_q, n_d), dtype=np.int64) if return_ranking else None

    def row(r: int) -> None:
        order = shortlist_order(values[r])
        members = order[:b]
        q = int(qidx[r])
        scored = np.empty(b, dtype=np.float64)
        for j, d in enumerate(members.tolist()):
            try:
                scored[j] = float(expensive_scorer(q, d))
            except Exception as exc:
                raise ScorerError((q, d), exc) from exc
            evaluations[r] += 1
        # sort shortlist by expensive score desc, then database index asc
        rerank = np.lexsort((members, -scored))
        best[r] = members[rerank[0]]
        best_score[r] = scored[rerank[0]]
        if rankings is not None:
            rankings[r, :b] = members[rerank]
            rankings[r, b:] = order[b:]

    for_each_row(row, n_q, threads)
    ids = db_catalog.identities
    preds = Predictions(best, [ids[i] for i in best.tolist()], best_score)
    return ShortlistResult(preds, evaluations, rankings)


class CountingScorer:
    """Expensive scorer backed by a dense matrix; counts calls per query."""

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values)
        self.calls: dict[int, int] = {}
        self._lock = threading.Lock()

    def __call__(self, q: int, d: int) -> float:
        with self._lock:
            self.calls[q] = self.calls.get(q, 0) + 1
        return float(self.values[q, d])


# -- threshold tuning ------------------------------------------------------


@dataclass
class MuTuning:
    mu: float
    accuracy: dict[float, float]
    failures: dict[float, str] = field(default_factory=dict)

    def curve(self) -> list[dict]:
        return [{"mu": m, "accuracy": a} for m, a in sorted(self.accuracy.items())]


def tune_mu(records: MatchRecordSet, query_catalog, db_catalog: ItemCatalog, validation_indices,
            grid: Sequence[float] | None = None, method: str = ISOTONIC) -> MuTuning:
    """Pick the match threshold maximising validation top-1 accuracy.

    For every grid value the local scores of the validation queries are
    built, a calibrator is fitted on their pairs and applied, and top-1
    accuracy is measured on the same queries. A value whose calibrator cannot
    be fitted (or comes out decreasing) scores ``-inf``. Ties go to the
    smaller threshold.
    """
    grid = DEFAULT_MU_GRID if grid is None else tuple(float(m) for m in grid)
    if not grid:
        raise ConfigError("mu grid is empty")
    rows = np.asarray(validation_indices, dtype=np.int64)
    if len(rows) == 0:
        raise ConfigError("validation split is empty")
    truth = query_catalog.identities_at(rows)
    db_ids = db_catalog.identities
    accuracy: dict[float, float] = {}
    failures: dict[float, str] = {}
    for mu in sorted(set(grid)):
        raw = local_score_matrix(records, mu, rows=rows)
        try:
            pairs = build_pair_labels(raw, _Aligned(truth), db_catalog)
            cal = fit_calibrator(pairs, method)
            if cal.decreasing:
                raise ConfigError("calibrator is decreasing")
        except FusecalError as exc:
            accuracy[mu] = float("-inf")
            failures[mu] = f"{type(exc).__name__}: {exc}"
            continue
        calibrated = apply_calibrator(cal, raw)
        idx = _argmax_rows(calibrated.values)
        accuracy[mu] = float(np.mean([db_ids[i] == t for i, t in zip(idx.tolist(), truth)]))
    best = max(accuracy.values())
    if best == float("-inf"):
        logger.warning("no mu value produced a usable calibrator: %s", failures)
    chosen = min(m for m, a in accuracy.items() if a == best)
    return MuTuning(chosen, accuracy, failures)


class _Aligned:
    """Minimal catalog over an already-extracted identity list."""

    def __init__(self, identities: list[str]):
        self._ids = identities

    def __len__(self) -> int:
        return len(self._ids)

    def identities_at(self, indices) -> list[str]:
        return [self._ids[i] for i in np.asarray(indices, dtype=np.int64).tolist()]


# -- calibration subsets ---------------------------------------------------


def subsample_calibration_set(query_catalog, db_catalog: ItemCatalog, n_items: int, seed: int,
                              candidates=None, min_positive: int = 2, min_negative: int = 2) -> np.ndarray:
    """Seeded subset of candidate query rows whose pairs with the database
    include at least ``min_positive`` positives and ``min_negative`` negatives.
    """
    if n_items < 1:
        raise ConfigError(f"n_items must be >= 1, got {n_items}")
    cand = np.arange(len(query_catalog)) if candidates is None else np.asarray(candidates, dtype=np.int64)
    cand = np.sort(cand)
    n_db = len(db_catalog)
    truth = query_catalog.identities_at(cand)
    db_counts: dict[str, int] = {}
    for ident in db_catalog.identities:
        db_counts[ident] = db_counts.get(ident, 0) + 1
    pos = np.array([db_counts.get(t, 0) for t in truth], dtype=np.int64)
    neg = n_db - pos

    def ok(sel: np.ndarray) -> bool:
        return pos[sel].sum() >= min_positive and neg[sel].sum() >= min_negative

    everything = np.arange(len(cand))
    if not ok(everything):
        raise ConstraintError(
            f"no subset can provide {min_positive} positive and {min_negative} negative pairs "
            f"(at most {pos.sum()} positive, {neg.sum()} negative)")
    if n_items >= len(cand):
        return cand
    for attempt in range(MAX_SUBSAMPLE_ATTEMPTS):
        rng = substream(seed, f"subsample/{attempt}")
        sel = np.sort(rng.choice(len(cand), size=n_items, replace=False))
        if ok(sel):
            return cand[sel]
    raise ConstraintError(f"no valid subset of {n_items} items found in {MAX_SUBSAMPLE_ATTEMPTS} attempts")
