import numpy as np
import pytest

from fusecal.core import ItemCatalog, MatchRecordSet, Role, ScoreKind, ScoreMatrix, make_split
from fusecal.errors import ConfigError, ConstraintError, EmptyDatabaseError, ScorerError, ShapeError
from fusecal.retrieval import (
    DEFAULT_MU_GRID,
    Budget,
    CountingScorer,
    Predictions,
    rank_top1,
    shortlist_rerank,
    subsample_calibration_set,
    top1_accuracy,
    tune_mu,
)
from fusecal.similarity import local_score_matrix

from oracles import argmax_scan, shortlist_oracle


def catalog(identities, role=Role.QUERY, prefix="q"):
    return ItemCatalog(tuple((f"{prefix}{i}", c) for i, c in enumerate(identities)), role)


DB2 = catalog(["A", "B"], Role.DATABASE, "d")


class TestRankTop1:
    def test_argmax(self):
        assert rank_top1(ScoreMatrix([[0.9, 0.1]], ScoreKind.FUSED), DB2).indices.tolist() == [0]

    def test_tie_lowest_index(self):
        assert rank_top1(ScoreMatrix([[0.5, 0.5]], ScoreKind.FUSED), DB2).indices.tolist() == [0]

    def test_random_vs_scan(self):
        rng = np.random.default_rng(0)
        vals = rng.integers(0, 4, (5, 5)).astype(float)
        db = catalog("ABCDE", Role.DATABASE, "d")
        got = rank_top1(ScoreMatrix(vals, ScoreKind.RAW_LOCAL), db).indices.tolist()
        assert got == [argmax_scan(r) for r in vals.tolist()]

    def test_empty_database(self):
        with pytest.raises(EmptyDatabaseError):
            rank_top1(ScoreMatrix(np.zeros((2, 0)), ScoreKind.FUSED), catalog([], Role.DATABASE))


class TestAccuracy:
    def preds(self, ids):
        return Predictions(np.zeros(len(ids), dtype=int), list(ids), np.zeros(len(ids)))

    def test_values(self):
        q = catalog("ABCD")
        assert top1_accuracy(self.preds("ABCD"), q, DB2) == 1.0
        assert top1_accuracy(self.preds("BCDA"), q, DB2) == 0.0
        assert top1_accuracy(self.preds("ABDC"), q, DB2) == 0.5

    def test_count_mismatch(self):
        with pytest.raises(ShapeError):
            top1_accuracy(self.preds("AB"), catalog("ABC"), DB2)

    def test_relabeling_invariance(self):
        q = catalog("ABAB")
        relabeled = catalog(["x", "y", "x", "y"])
        p = self.preds("ABBB")
        p2 = self.preds(["x", "y", "y", "y"])
        assert top1_accuracy(p, q, DB2) == top1_accuracy(p2, relabeled, DB2) == 0.75


class TestShortlist:
    def setup_method(self):
        rng = np.random.default_rng(42)
        self.cheap = rng.random((6, 5))
        self.exp = rng.random((6, 5))
        self.db = catalog("ABCDE", Role.DATABASE, "d")

    def test_full_budget_equals_full_ranking(self):
        res = shortlist_rerank(self.cheap, CountingScorer(self.exp), 5, self.db)
        assert res.predictions.indices.tolist() == rank_top1(self.exp, self.db).indices.tolist()
        big = shortlist_rerank(self.cheap, CountingScorer(self.exp), 50, self.db)
        assert big.predictions.indices.tolist() == res.predictions.indices.tolist()
        assert big.evaluations.tolist() == [5] * 6

    def test_budget_one_is_cheap_top1(self):
        scorer = CountingScorer(self.exp)
        res = shortlist_rerank(self.cheap, scorer, Budget(1), self.db)
        assert res.predictions.indices.tolist() == rank_top1(self.cheap, self.db).indices.tolist()
        assert scorer.calls == {q: 1 for q in range(6)}

    def test_budget_three_vs_oracle(self):
        res = shortlist_rerank(self.cheap, CountingScorer(self.exp), 3, self.db)
        assert res.predictions.indices.tolist() == shortlist_oracle(self.cheap, self.exp, 3)
        assert res.evaluations.tolist() == [3] * 6

    def test_ties(self):
        cheap = np.array([[0.5, 0.5, 0.5, 0.1]])
        exp = np.array([[0.2, 0.9, 0.9, 1.0]])
        db = catalog("ABCD", Role.DATABASE, "d")
        assert shortlist_rerank(cheap, CountingScorer(exp), 3, db).predictions.indices.tolist() == [1]
        assert shortlist_rerank(cheap, CountingScorer(exp), 2, db).predictions.indices.tolist() == [1]

    def test_full_ranking(self):
        res = shortlist_rerank(self.cheap, CountingScorer(self.exp), 2, self.db, return_ranking=True)
        for r in range(6):
            ranking = res.rankings[r].tolist()
            assert sorted(ranking) == list(range(5))
            cheap_order = sorted(range(5), key=lambda j: (-self.cheap[r, j], j))
            assert set(ranking[:2]) == set(cheap_order[:2])
            assert ranking[2:] == cheap_order[2:]
            assert ranking[0] == res.predictions.indices[r]

    def test_scorer_error_carries_pair(self):
        def boom(q, d):
            raise RuntimeError("nope")

        with pytest.raises(ScorerError) as err:
            shortlist_rerank(self.cheap, boom, 2, self.db, query_indices=np.arange(10, 16))
        assert err.value.pair[0] == 10

    def test_threads_same_result(self):
        a = shortlist_rerank(self.cheap, CountingScorer(self.exp), 3, self.db, threads=1)
        b = shortlist_rerank(self.cheap, CountingScorer(self.exp), 3, self.db, threads=4)
        assert a.predictions.indices.tolist() == b.predictions.indices.tolist()

    def test_invalid_budget(self):
        with pytest.raises(ConfigError):
            Budget(0)

    def test_cheap_top1_already_best_is_stable(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            cheap = rng.random((8, 10))
            exp = rng.random((8, 10))
            c1 = cheap.argmax(1)
            agree = c1 == exp.argmax(1)
            for b in (1, 2, 5, 10):
                got = shortlist_rerank(cheap, CountingScorer(exp), b, catalog("ABCDEFGHIJ", Role.DATABASE, "d"))
                assert np.all(got.predictions.indices[agree] == c1[agree])


def threshold_instance():
    """Positives: 3 matches at 0.7. Negatives: 5 matches at 0.38."""
    qcat = catalog([f"id{k}" for k in range(6)])
    dcat = catalog([f"id{k}" for k in range(6)], Role.DATABASE, "d")
    mapping = {}
    for q in range(6):
        for d in range(6):
            mapping[(q, d)] = [0.7] * 3 if q == d else [0.38] * 5
    return qcat, dcat, MatchRecordSet.from_mapping(mapping, 6, 6)


class TestTuneMu:
    def test_single_grid(self):
        qcat, dcat, rec = threshold_instance()
        assert tune_mu(rec, qcat, dcat, [0, 1, 2], [0.5]).mu == 0.5

    def test_ties_go_to_smaller(self):
        qcat, dcat, rec = threshold_instance()
        assert tune_mu(rec, qcat, dcat, [0, 1, 2], [0.6, 0.45]).mu == 0.45

    @pytest.mark.filterwarnings("ignore:isotonic fit collapsed")
    def test_separated_confidences(self):
        qcat, dcat, rec = threshold_instance()
        rows = [0, 1, 2, 3]
        # exhaustive oracle: raw local accuracy per grid value (calibration keeps the argmax)
        oracle = {}
        for mu in DEFAULT_MU_GRID:
            m = local_score_matrix(rec, mu).values[rows]
            oracle[mu] = np.mean([argmax_scan(r) == q for r, q in zip(m.tolist(), rows)])
        best = max(oracle.values())
        expected = min(m for m, a in oracle.items() if a == best)
        assert expected == 0.40
        tuning = tune_mu(rec, qcat, dcat, rows)
        assert tuning.mu == expected
        assert all(tuning.accuracy[m] == 1.0 for m in DEFAULT_MU_GRID if 0.4 <= m < 0.7)
        # above 0.7 every count is zero: the calibrator cannot be fitted
        assert tuning.accuracy[0.75] == float("-inf") and 0.75 in tuning.failures

    def test_errors(self):
        qcat, dcat, rec = threshold_instance()
        with pytest.raises(ConfigError):
            tune_mu(rec, qcat, dcat, [0], [])
        with pytest.raises(ConfigError):
            tune_mu(rec, qcat, dcat, [], [0.5])


class TestSubsample:
    def setup_method(self):
        self.q = catalog([f"id{k % 5}" for k in range(20)])
        self.d = catalog([f"id{k}" for k in range(5)], Role.DATABASE, "d")

    def test_saturation(self):
        sub = subsample_calibration_set(self.q, self.d, 50, seed=1, candidates=np.arange(10))
        assert sub.tolist() == list(range(10))

    def test_deterministic(self):
        a = subsample_calibration_set(self.q, self.d, 4, seed=3)
        b = subsample_calibration_set(self.q, self.d, 4, seed=3)
        assert a.tolist() == b.tolist() and len(a) == 4

    def test_constraint_met(self):
        for seed in range(20):
            sub = subsample_calibration_set(self.q, self.d, 2, seed=seed)
            # each query has exactly one positive, so 2 items give 2 positives and 8 negatives
            assert len(sub) == 2

    def test_unsatisfiable(self):
        q = catalog(["X", "Y", "Z"])
        with pytest.raises(ConstraintError):
            subsample_calibration_set(q, self.d, 2, seed=0)

    def test_resamples_until_valid(self):
        # only items 0 and 1 have database matches
        q = catalog(["id0", "id0", "X", "Y", "Z", "W"])
        sub = subsample_calibration_set(q, self.d, 2, seed=0)
        assert sub.tolist() == [0, 1]

    def test_bad_n(self):
        with pytest.raises(ConfigError):
            subsample_calibration_set(self.q, self.d, 0, seed=0)
