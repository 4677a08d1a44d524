"""Shared data model: catalogs, embeddings, match records, score matrices, splits and pair labels."""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    KindError,
    OutOfBoundsError,
    RangeError,
    ShapeError,
    TestLabelAccessError,
)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named sub-stream of a root seed.

    All randomness in the package goes through here so that e.g. the split
    and the synthetic generator never share draws.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Role(str, enum.Enum):
    DATABASE = "database"
    QUERY = "query"


@dataclass(frozen=True)
class ItemCatalog:
    items: tuple[tuple[str, str], ...]
    role: Role = Role.QUERY
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((str(i), str(c)) for i, c in self.items))
        object.__setattr__(self, "role", Role(self.role))
        seen = set()
        for item_id, identity in self.items:
            if item_id in seen:
                raise ConfigError(f"duplicate item id {item_id!r}")
            if not identity:
                raise ConfigError(f"item {item_id!r} has an empty identity")
            seen.add(item_id)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], role: Role | str = Role.QUERY, name: str = ""):
        return cls(tuple(pairs), Role(role), name)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def item_ids(self) -> list[str]:
        return [i for i, _ in self.items]

    @property
    def identities(self) -> list[str]:
        return [c for _, c in self.items]

    def index_map(self) -> dict[str, int]:
        return {item_id: k for k, (item_id, _) in enumerate(self.items)}

    def identities_at(self, indices) -> list[str]:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.items)):
            raise OutOfBoundsError("index outside the catalog")
        return [self.items[i][1] for i in idx.tolist()]


class LabelGuard:
    """Catalog view that refuses to reveal identities of locked items.

    Used to keep test-split labels out of every stage before final scoring.
    """

    def __init__(self, catalog: ItemCatalog, locked=()):
        self.catalog = catalog
        self._locked = frozenset(int(i) for i in np.asarray(locked, dtype=np.int64).reshape(-1))

    def __len__(self) -> int:
        return len(self.catalog)

    @property
    def item_ids(self) -> list[str]:
        return self.catalog.item_ids

    @property
    def identities(self) -> list[str]:
        return self.identities_at(range(len(self.catalog)))

    def identities_at(self, indices) -> list[str]:
        idx = np.asarray(list(indices) if isinstance(indices, range) else indices, dtype=np.int64).reshape(-1)
        if self._locked:
            hit = self._locked.intersection(idx.tolist())
            if hit:
                raise TestLabelAccessError(f"identity of locked query item(s) {sorted(hit)[:5]} requested")
        return self.catalog.identities_at(idx)

    def unlock(self) -> None:
        self._locked = frozenset()


def identity_codes(*labels: Sequence[str]) -> list[np.ndarray]:
    """Integer identity codes that are comparable across the given label lists."""
    table: dict[str, int] = {}
    return [np.array([table.setdefault(c, len(table)) for c in lab], dtype=np.int64) for lab in labels]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Row-aligned embeddings. Values are held in float64; zero-norm rows are rejected."""

    values: np.ndarray
    catalog_ref: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"embedding matrix must be 2-D, got shape {v.shape}")
        finite = np.isfinite(v).all(axis=1)
        if not finite.all():
            row = int(np.argmin(finite))
            raise DegenerateInputError(f"non-finite value in embedding row {row}", row=row)
        norms = np.sqrt(np.einsum("ij,ij->i", v, v))
        zero = norms == 0.0
        if zero.any():
            row = int(np.argmax(zero))
            raise DegenerateInputError(f"zero-norm embedding at row {row}", row=row)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]

    def check_catalog(self, catalog: ItemCatalog) -> None:
        if self.rows != len(catalog):
            raise ShapeError(f"embedding has {self.rows} rows but catalog has {len(catalog)} items")


class MatchRecordSet:
    """Per-pair lists of match confidences.

    Stored as three flat arrays in insertion order. Pairs without records are
    equivalent to an empty confidence list.
    """

    def __init__(self, query_index, database_index, confidence, n_query: int, n_database: int):
        q = np.asarray(query_index, dtype=np.int64).reshape(-1)
        d = np.asarray(database_index, dtype=np.int64).reshape(-1)
        c = np.asarray(confidence, dtype=np.float64).reshape(-1)
        if not (len(q) == len(d) == len(c)):
            raise ShapeError("record arrays differ in length")
        if len(q):
            if q.min() < 0 or q.max() >= n_query or d.min() < 0 or d.max() >= n_database:
                raise OutOfBoundsError(f"record index outside {n_query}x{n_database}")
            bad = ~((c >= 0.0) & (c <= 1.0))
            if bad.any():
                k = int(np.argmax(bad))
                raise RangeError(f"confidence {c[k]!r} outside [0, 1] for pair ({q[k]}, {d[k]})")
        self.query_index = _frozen(q)
        self.database_index = _frozen(d)
        self.confidence = _frozen(c)
        self.n_query = int(n_query)
        self.n_database = int(n_database)

    @classmethod
    def from_mapping(cls, records: Mapping[tuple[int, int], Sequence[float]], n_query: int, n_database: int):
        q, d, c = [], [], []
        for (qi, di), confs in records.items():
            for x in confs:
                q.append(qi)
                d.append(di)
                c.append(x)
        return cls(q, d, c, n_query, n_database)

    def __len__(self) -> int:
        return len(self.confidence)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatchRecordSet):
            return NotImplemented
        return (self.n_query, self.n_database) == (other.n_query, other.n_database) and self.to_mapping() == other.to_mapping()

    def to_mapping(self) -> dict[tuple[int, int], list[float]]:
        out: dict[tuple[int, int], list[float]] = {}
        for q, d, c in zip(self.query_index.tolist(), self.database_index.tolist(), self.confidence.tolist()):
            out.setdefault((q, d), []).append(c)
        return out

    def get(self, query: int, database: int) -> list[float]:
        mask = (self.query_index == query) & (self.database_index == database)
        return self.confidence[mask].tolist()

    def pairs(self) -> Iterator[tuple[int, int]]:
        return iter(self.to_mapping())


class ScoreKind(str, enum.Enum):
    RAW_GLOBAL = "raw_global"
    RAW_LOCAL = "raw_local"
    CALIBRATED = "calibrated"
    FUSED = "fused"


@dataclass(frozen=True)
class ScoreMatrix:
    """Dense query x database scores.

    ``flagged`` marks a matrix produced by a decreasing calibrator; fusion
    refuses such input.
    """

    values: np.ndarray
    kind: ScoreKind
    flagged: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"score matrix must be 2-D, got shape {v.shape}")
        kind = ScoreKind(self.kind)
        if not np.isfinite(v).all():
            raise RangeError("score matrix contains non-finite values")
        if v.size:
            if kind is ScoreKind.RAW_GLOBAL and (v.min() < -1.0 or v.max() > 1.0):
                raise RangeError("raw global scores must lie in [-1, 1]")
            if kind is ScoreKind.RAW_LOCAL and (v.min() < 0.0 or not np.array_equal(v, np.floor(v))):
                raise RangeError("raw local scores must be non-negative integers")
            if kind in (ScoreKind.CALIBRATED, ScoreKind.FUSED) and (v.min() < 0.0 or v.max() > 1.0):
                raise RangeError(f"{kind.value} scores must lie in [0, 1]")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", _frozen(v))

    @property
    def n_query(self) -> int:
        return self.values.shape[0]

    @property
    def n_database(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def rows(self, index) -> "ScoreMatrix":
        return ScoreMatrix(self.values[np.asarray(index, dtype=np.int64)], self.kind, self.flagged)

    def require_kind(self, *kinds: ScoreKind) -> None:
        if self.kind not in kinds:
            raise KindError(f"expected {[k.value for k in kinds]}, got {self.kind.value}")


@dataclass(frozen=True)
class SplitSpec:
    validation_indices: np.ndarray
    test_indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        v = np.sort(np.asarray(self.validation_indices, dtype=np.int64))
        t = np.sort(np.asarray(self.test_indices, dtype=np.int64))
        if np.intersect1d(v, t).size:
            raise ConfigError("validation and test indices overlap")
        object.__setattr__(self, "validation_indices", _frozen(v))
        object.__setattr__(self, "test_indices", _frozen(t))

    @property
    def n_items(self) -> int:
        return len(self.validation_indices) + len(self.test_indices)


@dataclass(frozen=True)
class PairLabelSet:
    scores: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        y = np.asarray(self.labels).reshape(-1)
        if len(s) != len(y):
            raise ShapeError("scores and labels differ in length")
        if len(y) and not np.isin(y, (0, 1)).all():
            raise RangeError("labels must be 0 or 1")
        object.__setattr__(self, "scores", _frozen(s))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive


def build_pair_labels(scores: ScoreMatrix, query_catalog: ItemCatalog | LabelGuard, db_catalog: ItemCatalog, subset=None) -> PairLabelSet:
    """All (subset query, database item) pairs in row-major order, labelled by identity equality."""
    if scores.shape != (len(query_catalog), len(db_catalog)):
        raise ShapeError(f"score matrix {scores.shape} does not match catalogs ({len(query_catalog)}, {len(db_catalog)})")
    subset = np.arange(len(query_catalog)) if subset is None else np.asarray(subset, dtype=np.int64).reshape(-1)
    if subset.size and (subset.min() < 0 or subset.max() >= len(query_catalog)):
        raise OutOfBoundsError("subset index outside the query catalog")
    qcodes, dcodes = identity_codes(query_catalog.identities_at(subset), db_catalog.identities)
    labels = qcodes[:, None] == dcodes[None, :]
    return PairLabelSet(scores.values[subset].reshape(-1), labels.reshape(-1))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def make_split(query_catalog: ItemCatalog | int, ratio: float = 0.5, seed: int = 0) -> SplitSpec:
    """Seeded random validation/test partition with ``round_half_up(ratio * N)`` validation items."""
    if not (0.0 < ratio < 1.0):
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    n = query_catalog if isinstance(query_catalog, int) else len(query_catalog)
    if n < 1:
        raise ConfigError("cannot split an empty query catalog")
    k = round_half_up(ratio * n)
    perm = substream(seed, "split").permutation(n)
    return SplitSpec(perm[:k], perm[k:], seed)
