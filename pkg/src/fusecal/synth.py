"""Synthetic re-identification benchmark.

Each identity gets a random unit prototype; its items are the prototype plus
isotropic Gaussian noise, renormalised. Items of every identity are split
between database and queries. Match confidences are drawn per pair:
spurious matches for every pair concentrate below ``0.5 - separation/2``,
genuine matches for same-identity pairs concentrate above
``0.5 + separation/2``. The number of genuine matches depends on a per-item
quality so that some queries are hard for the local score alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import EmbeddingMatrix, ItemCatalog, MatchRecordSet, Role, substream
from .errors import ConfigError, IoError
from .io import write_embedding_file, write_label_file, write_match_file


@dataclass(frozen=True)
class SynthParams:
    n_identities: int = 50
    items_per_identity: int = 8
    dims: int = 32
    sigma: float = 0.25
    separation: float = 0.3
    seed: int = 0
    spurious_rate: float = 3.0
    genuine_rate: float = 6.0
    outlier_fraction: float = 0.1

    def validate(self) -> None:
        for name in ("n_identities", "items_per_identity", "dims"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if self.items_per_identity < 2:
            raise ConfigError("items_per_identity must be >= 2 so every query identity is in the database")
        if not self.sigma >= 0:
            raise ConfigError(f"sigma must be non-negative, got {self.sigma}")
        if not (0.0 < self.separation < 1.0):
            raise ConfigError(f"separation must lie in (0, 1), got {self.separation}")
        if self.spurious_rate < 0 or self.genuine_rate <= 0 or not (0.0 <= self.outlier_fraction <= 1.0):
            raise ConfigError("invalid match-rate parameters")


@dataclass
class SyntheticDataset:
    params: SynthParams
    query_catalog: ItemCatalog
    db_catalog: ItemCatalog
    query_embeddings: EmbeddingMatrix
    db_embeddings: EmbeddingMatrix
    records: MatchRecordSet


def _confidences(rng: np.random.Generator, n: int, lo: float, hi: float, outlier: float) -> np.ndarray:
    c = rng.uniform(lo, hi, size=n)
    out = rng.random(n) < outlier
    c[out] = rng.random(int(out.sum()))
    return np.round(c, 6)


def generate_synthetic(params: SynthParams | None = None, **overrides) -> SyntheticDataset:
    params = params or SynthParams()
    if overrides:
        params = SynthParams(**{**asdict(params), **overrides})
    params.validate()
    rng = substream(params.seed, "synth")
    n_id, per_id, dims = params.n_identities, params.items_per_identity, params.dims

    proto = rng.normal(size=(n_id, dims))
    proto /= np.linalg.norm(proto, axis=1, keepdims=True)
    items = np.repeat(proto, per_id, axis=0) + params.sigma * rng.normal(size=(n_id * per_id, dims))
    items /= np.linalg.norm(items, axis=1, keepdims=True)
    # stored as float32 on disk; keep the in-memory copy identical
    items = items.astype(np.float32).astype(np.float64)
    quality = rng.beta(2.0, 2.0, size=n_id * per_id)

    n_db_per = (per_id + 1) // 2
    db_rows, q_rows = [], []
    for k in range(n_id):
        perm = k * per_id + rng.permutation(per_id)
        db_rows.extend(perm[:n_db_per].tolist())
        q_rows.extend(perm[n_db_per:].tolist())
    db_rows = np.array(sorted(db_rows))
    q_rows = np.array(sorted(q_rows))

    def catalog(rows, role):
        return ItemCatalog(tuple((f"item{r:05d}", f"id{r // per_id:04d}") for r in rows.tolist()), role)

    qcat = catalog(q_rows, Role.QUERY)
    dcat = catalog(db_rows, Role.DATABASE)

    n_q, n_d = len(q_rows), len(db_rows)
    same = (q_rows[:, None] // per_id) == (db_rows[None, :] // per_id)
    n_spurious = rng.poisson(params.spurious_rate, size=(n_q, n_d))
    lam = params.genuine_rate * quality[q_rows][:, None] * quality[db_rows][None, :]
    n_genuine = np.where(same, rng.poisson(lam), 0)

    half = params.separation / 2.0
    pair_q, pair_d = np.indices((n_q, n_d))
    qi = np.concatenate([np.repeat(pair_q.ravel(), n_spurious.ravel()), np.repeat(pair_q.ravel(), n_genuine.ravel())])
    di = np.concatenate([np.repeat(pair_d.ravel(), n_spurious.ravel()), np.repeat(pair_d.ravel(), n_genuine.ravel())])
    conf = np.concatenate([
        _confidences(rng, int(n_spurious.sum()), 0.0, 0.5 - half, params.outlier_fraction),
        _confidences(rng, int(n_genuine.sum()), 0.5 + half, 1.0, params.outlier_fraction),
    ])
    order = np.lexsort((np.arange(len(qi)), di, qi))
    records = MatchRecordSet(qi[order], di[order], conf[order], n_q, n_d)

    return SyntheticDataset(params, qcat, dcat, EmbeddingMatrix(items[q_rows], "query"),
                            EmbeddingMatrix(items[db_rows], "database"), records)


FILES = {
    "query_labels": "query_labels.csv",
    "database_labels": "database_labels.csv",
    "query_embeddings": "query.femb",
    "database_embeddings": "database.femb",
    "matches": "matches.csv",
    "config": "config.yaml",
}


def write_synthetic(dataset: SyntheticDataset, out_dir) -> dict[str, Path]:
    """Write a dataset plus a ready-to-run pipeline config into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    paths = {k: out / v for k, v in FILES.items()}
    write_label_file(paths["query_labels"], dataset.query_catalog)
    write_label_file(paths["database_labels"], dataset.db_catalog)
    write_embedding_file(paths["query_embeddings"], dataset.query_embeddings)
    write_embedding_file(paths["database_embeddings"], dataset.db_embeddings)
    header = "synthetic matches " + " ".join(f"{k}={v}" for k, v in asdict(dataset.params).items())
    write_match_file(paths["matches"], dataset.records, dataset.query_catalog, dataset.db_catalog, header=header)
    config = {
        "seed": dataset.params.seed,
        "labels": {"query": FILES["query_labels"], "database": FILES["database_labels"]},
        "scores": [
            {"name": "global", "type": "global", "query_embeddings": FILES["query_embeddings"],
             "database_embeddings": FILES["database_embeddings"]},
            {"name": "local", "type": "local", "matches": FILES["matches"]},
        ],
        "calibration": "isotonic_pchip",
        "mu": {"policy": "tuned"},
        "split": {"ratio": 0.5},
    }
    try:
        paths["config"].write_text(yaml.safe_dump(config, sort_keys=False))
    except OSError as exc:
        raise IoError(f"cannot write {paths['config']}: {exc}") from exc
    return paths
