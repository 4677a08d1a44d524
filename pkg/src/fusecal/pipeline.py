"""End-to-end evaluation: score, calibrate on validation queries, fuse, evaluate on test queries."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .calibration import ISOTONIC, Calibrator, apply_calibrator, canonical_method, fit_calibrator
from .core import (
    EmbeddingMatrix,
    ItemCatalog,
    LabelGuard,
    MatchRecordSet,
    ScoreMatrix,
    SplitSpec,
    build_pair_labels,
)
from .errors import ConfigError, FusecalError
from .fusion import FusionConfig, default_config, fuse
from .retrieval import (
    DEFAULT_MU_GRID,
    Budget,
    CountingScorer,
    RetrievalResult,
    rank_top1,
    shortlist_rerank,
    subsample_calibration_set,
    top1_accuracy,
    topk_accuracy,
    tune_mu,
)
from .similarity import DEFAULT_MU, global_score_matrix, local_score_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlobalSource:
    name: str
    query: EmbeddingMatrix
    database: EmbeddingMatrix
    kind = "global"


@dataclass(frozen=True)
class LocalSource:
    name: str
    records: MatchRecordSet
    kind = "local"


ScoreSource = Union[GlobalSource, LocalSource]


@dataclass(frozen=True)
class MuPolicy:
    """Either a fixed match threshold or a grid searched on validation queries."""

    fixed: float | None = DEFAULT_MU
    grid: tuple[float, ...] | None = None

    @classmethod
    def fixed_at(cls, mu: float = DEFAULT_MU) -> "MuPolicy":
        return cls(fixed=float(mu))

    @classmethod
    def tuned(cls, grid: Sequence[float] | None = None) -> "MuPolicy":
        return cls(fixed=None, grid=tuple(DEFAULT_MU_GRID if grid is None else grid))

    @property
    def is_tuned(self) -> bool:
        return self.fixed is None


@dataclass
class PipelineResult:
    fused: RetrievalResult
    per_score: dict[str, RetrievalResult]
    calibrators: dict[str, Calibrator]
    mu: dict[str, float]
    diagnostics: dict = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.fused.top1_accuracy


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except FusecalError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


def run_pipeline(query_catalog: ItemCatalog, db_catalog: ItemCatalog, sources: Sequence[ScoreSource],
                 split: SplitSpec, *, method: str = ISOTONIC, mu_policy: MuPolicy | None = None,
                 fusion: FusionConfig | Mapping[str, float] | None = None,
                 budgets: Sequence[int] | None = None,
                 calibrators: Mapping[str, Calibrator] | None = None,
                 calibration_items: int | None = None, calibration_seed: int = 0,
                 threads: int | None = None) -> PipelineResult:
    """Run the full protocol.

    Calibrators (and tuned thresholds) only ever see validation queries;
    test identities stay behind a :class:`LabelGuard` until the final
    accuracy computation. Passing ``calibrators`` selects zero-shot mode:
    nothing is fitted and no query label is read before evaluation.
    """
    method = canonical_method(method)
    mu_policy = mu_policy or MuPolicy.fixed_at()
    zero_shot = calibrators is not None
    if not sources:
        raise ConfigError("at least one score source is required")
    names = [s.name for s in sources]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate score names {names}")
    if split.n_items != len(query_catalog):
        raise ConfigError(f"split covers {split.n_items} queries, catalog has {len(query_catalog)}")
    if zero_shot:
        if mu_policy.is_tuned:
            raise ConfigError("zero-shot mode requires a fixed mu")
        missing = set(names) - set(calibrators)
        if missing:
            raise ConfigError(f"zero-shot mode lacks calibrators for {sorted(missing)}")
    if isinstance(fusion, Mapping):
        fusion = FusionConfig.from_weights(fusion)
    fusion = fusion or default_config(names)
    if set(fusion.names) - set(names):
        raise ConfigError(f"fusion names {fusion.names} not among score sources {names}")

    test_rows = split.test_indices
    locked = np.arange(len(query_catalog)) if zero_shot else test_rows
    guard = LabelGuard(query_catalog, locked=locked)

    cal_rows = split.validation_indices
    if not zero_shot and calibration_items is not None:
        with _stage("subsample"):
            cal_rows = subsample_calibration_set(guard, db_catalog, calibration_items, calibration_seed,
                                                 candidates=split.validation_indices)

    calibrated: dict[str, ScoreMatrix] = {}
    fitted: dict[str, Calibrator] = {}
    mus: dict[str, float] = {}
    score_diag: dict[str, dict] = {}
    for src in sources:
        diag: dict = {"type": src.kind}
        if isinstance(src, GlobalSource):
            with _stage(f"score:{src.name}"):
                src.query.check_catalog(query_catalog)
                src.database.check_catalog(db_catalog)
                raw = global_score_matrix(src.query, src.database, threads)
        else:
            mu = mu_policy.fixed
            if mu_policy.is_tuned:
                with _stage(f"tune-mu:{src.name}"):
                    tuning = tune_mu(src.records, guard, db_catalog, cal_rows, mu_policy.grid, method)
                mu = tuning.mu
                diag["mu_curve"] = tuning.curve()
                if tuning.failures:
                    diag["mu_failures"] = {str(k): v for k, v in sorted(tuning.failures.items())}
            mus[src.name] = mu
            diag["mu"] = mu
            with _stage(f"score:{src.name}"):
                raw = local_score_matrix(src.records, mu, len(query_catalog), len(db_catalog))
        with _stage(f"calibrate:{src.name}"):
            if zero_shot:
                cal = calibrators[src.name]
            else:
                cal = fit_calibrator(build_pair_labels(raw, guard, db_catalog, cal_rows), method)
            calibrated[src.name] = apply_calibrator(cal, raw, threads)
        fitted[src.name] = cal
        diag["calibration"] = cal.method
        score_diag[src.name] = diag

    with _stage("fuse"):
        fused = fuse({n: calibrated[n] for n in fusion.names}, fusion)

    # final evaluation: the only place test identities are read
    guard.unlock()
    truth = query_catalog.identities_at(test_rows)

    def evaluate(matrix: ScoreMatrix) -> RetrievalResult:
        preds = rank_top1(matrix.values[test_rows], db_catalog)
        return RetrievalResult(test_rows, preds, top1_accuracy(preds, query_catalog, db_catalog, test_rows))

    with _stage("evaluate"):
        per_score = {n: evaluate(m) for n, m in calibrated.items()}
        fused_result = evaluate(fused)
    for n, r in per_score.items():
        score_diag[n]["accuracy"] = r.top1_accuracy

    diagnostics = {
        "scores": score_diag,
        "fused": {
            "accuracy": fused_result.top1_accuracy,
            "top5_accuracy": topk_accuracy(fused.values[test_rows], truth, db_catalog, 5),
            "weights": fusion.weights,
        },
        "calibration_method": method,
        "zero_shot": zero_shot,
        "n_validation": int(len(split.validation_indices)),
        "n_calibration_queries": 0 if zero_shot else int(len(cal_rows)),
        "n_test": int(len(test_rows)),
        "n_database": len(db_catalog),
    }

    if budgets:
        cheap_name = next((s.name for s in sources if isinstance(s, GlobalSource)), None)
        if cheap_name is None:
            raise ConfigError("the shortlist strategy needs a global score as the cheap ranking")
        curve = []
        with _stage("shortlist"):
            for b in sorted({Budget(b).b for b in budgets}):
                scorer = CountingScorer(fused.values)
                res = shortlist_rerank(calibrated[cheap_name].values[test_rows], scorer, b, db_catalog,
                                       query_indices=test_rows, threads=threads)
                curve.append({
                    "budget": b,
                    "accuracy": top1_accuracy(res.predictions, query_catalog, db_catalog, test_rows),
                    "evaluations_per_query": int(res.evaluations.max()) if len(res.evaluations) else 0,
                })
        diagnostics["budget_curve"] = curve
        diagnostics["shortlist_cheap_score"] = cheap_name

    return PipelineResult(fused_result, per_score, fitted, mus, diagnostics)
