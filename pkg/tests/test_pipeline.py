import json

import numpy as np
import pytest

from fusecal.core import EmbeddingMatrix, make_split
from fusecal.errors import ConfigError, ShapeError, FlaggedCalibratorError, TestLabelAccessError
from fusecal.pipeline import GlobalSource, LocalSource, MuPolicy, run_pipeline
from fusecal.report import build_report
from fusecal.retrieval import rank_top1, top1_accuracy
from fusecal.similarity import global_score_matrix
from fusecal.synth import generate_synthetic


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(n_identities=30, items_per_identity=6, seed=4)


def sources(ds):
    return [GlobalSource("global", ds.query_embeddings, ds.db_embeddings), LocalSource("local", ds.records)]


class TestSingleScore:
    def test_calibration_does_not_change_ranking(self, data):
        split = make_split(data.query_catalog, 0.5, 1)
        res = run_pipeline(data.query_catalog, data.db_catalog, sources(data)[:1], split)
        raw = global_score_matrix(data.query_embeddings, data.db_embeddings).values[split.test_indices]
        preds = rank_top1(raw, data.db_catalog)
        expected = top1_accuracy(preds, data.query_catalog, data.db_catalog, split.test_indices)
        assert res.accuracy == expected
        assert res.per_score["global"].top1_accuracy == expected
        assert res.diagnostics["fused"]["weights"] == {"global": 1.0}


class TestFusedPipeline:
    def test_fusion_not_worse(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        res = run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, mu_policy=MuPolicy.tuned())
        best = max(r.top1_accuracy for r in res.per_score.values())
        assert res.accuracy >= best - 0.02
        assert 0.05 <= res.mu["local"] <= 0.95
        assert res.diagnostics["n_test"] + res.diagnostics["n_validation"] == len(data.query_catalog)

    def test_budget_curve(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        budgets = [1, 2, 5, 20, len(data.db_catalog)]
        res = run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, budgets=budgets)
        curve = res.diagnostics["budget_curve"]
        assert [c["budget"] for c in curve] == budgets
        assert [c["evaluations_per_query"] for c in curve] == budgets
        # B=1 is the cheap ranking, B=D the full fused ranking
        assert curve[0]["accuracy"] == res.per_score["global"].top1_accuracy
        assert curve[-1]["accuracy"] == res.accuracy

    def test_platt(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        res = run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, method="platt")
        assert res.diagnostics["calibration_method"] == "platt"
        assert 0.0 <= res.accuracy <= 1.0

    def test_subsampled_calibration(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        res = run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, calibration_items=10,
                           calibration_seed=3)
        assert res.diagnostics["n_calibration_queries"] == 10

    def test_report_is_deterministic(self, data):
        split = make_split(data.query_catalog, 0.5, 2)
        runs = [run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, mu_policy=MuPolicy.tuned(),
                             budgets=[1, 5]) for _ in range(2)]
        a, b = (json.dumps(build_report(r), sort_keys=True) for r in runs)
        assert a == b


class TestZeroShot:
    def test_uses_no_labels_before_evaluation(self, data, monkeypatch):
        split = make_split(data.query_catalog, 0.5, 0)
        fitted = run_pipeline(data.query_catalog, data.db_catalog, sources(data), split).calibrators
        other = generate_synthetic(n_identities=30, items_per_identity=6, seed=9)
        split_b = make_split(other.query_catalog, 0.5, 0)

        import fusecal.pipeline as pipeline_mod
        seen = []
        real = pipeline_mod.fit_calibrator
        monkeypatch.setattr(pipeline_mod, "fit_calibrator", lambda *a, **k: seen.append(1) or real(*a, **k))
        res = run_pipeline(other.query_catalog, other.db_catalog, sources(other), split_b, calibrators=fitted)
        assert not seen
        assert res.diagnostics["zero_shot"] and res.diagnostics["n_calibration_queries"] == 0
        assert res.calibrators == fitted

    def test_guard_blocks_test_label_reads(self, data, monkeypatch):
        import fusecal.pipeline as pipeline_mod
        split = make_split(data.query_catalog, 0.5, 0)

        def peek(scores, guard, db, rows=None):
            return guard.identities_at(split.test_indices[:1])

        monkeypatch.setattr(pipeline_mod, "build_pair_labels", peek)
        with pytest.raises(TestLabelAccessError):
            run_pipeline(data.query_catalog, data.db_catalog, sources(data)[:1], split)

    def test_tuned_mu_rejected(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        with pytest.raises(ConfigError):
            run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, calibrators={},
                         mu_policy=MuPolicy.tuned())

    def test_missing_calibrator(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        fitted = run_pipeline(data.query_catalog, data.db_catalog, sources(data)[:1], split).calibrators
        with pytest.raises(ConfigError, match="local"):
            run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, calibrators=fitted)


class TestErrors:
    def test_stage_context(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        bad = GlobalSource("global", EmbeddingMatrix(data.query_embeddings.values[:-1]), data.db_embeddings)
        with pytest.raises(ShapeError) as err:
            run_pipeline(data.query_catalog, data.db_catalog, [bad], split)
        assert getattr(err.value, "stage", None) == "score:global"
        assert "[score:global]" in str(err.value)

    def test_duplicate_names(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        src = sources(data)[0]
        with pytest.raises(ConfigError):
            run_pipeline(data.query_catalog, data.db_catalog, [src, src], split)

    def test_no_sources(self, data):
        with pytest.raises(ConfigError):
            run_pipeline(data.query_catalog, data.db_catalog, [], make_split(data.query_catalog, 0.5, 0))

    def test_flagged_calibrator_rejected(self, data):
        split = make_split(data.query_catalog, 0.5, 0)
        fitted = dict(run_pipeline(data.query_catalog, data.db_catalog, sources(data), split).calibrators)
        from dataclasses import replace
        fitted["local"] = replace(fitted["local"], decreasing=True)
        with pytest.raises(FlaggedCalibratorError):
            run_pipeline(data.query_catalog, data.db_catalog, sources(data), split, calibrators=fitted)
