import numpy as np
import pytest

from fusecal.core import make_split
from fusecal.errors import ConfigError
from fusecal.pipeline import GlobalSource, run_pipeline
from fusecal.similarity import global_score_matrix
from fusecal.synth import SynthParams, generate_synthetic, write_synthetic


def test_zero_noise_gives_exact_self_similarity():
    ds = generate_synthetic(n_identities=5, items_per_identity=4, dims=16, sigma=0.0, seed=1)
    s = global_score_matrix(ds.query_embeddings, ds.db_embeddings).values
    q_ids = np.array(ds.query_catalog.identities)
    d_ids = np.array(ds.db_catalog.identities)
    same = q_ids[:, None] == d_ids[None, :]
    assert np.all(s[same] == 1.0)


def test_same_seed_same_bytes(tmp_path):
    a = write_synthetic(generate_synthetic(n_identities=6, items_per_identity=4, seed=5), tmp_path / "a")
    b = write_synthetic(generate_synthetic(n_identities=6, items_per_identity=4, seed=5), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes(), key
    c = write_synthetic(generate_synthetic(n_identities=6, items_per_identity=4, seed=6), tmp_path / "c")
    assert c["matches"].read_bytes() != a["matches"].read_bytes()


def test_confidence_concentration():
    ds = generate_synthetic(n_identities=10, items_per_identity=4, separation=0.4, seed=2, outlier_fraction=0.0)
    rec = ds.records
    q_ids = np.array(ds.query_catalog.identities)[rec.query_index]
    d_ids = np.array(ds.db_catalog.identities)[rec.database_index]
    neg = rec.confidence[q_ids != d_ids]
    assert neg.max() <= 0.3
    # positives carry both spurious (low) and genuine (high) matches
    pos = rec.confidence[q_ids == d_ids]
    assert pos.max() >= 0.7 and not np.any((pos > 0.3) & (pos < 0.7))


def test_closed_set():
    ds = generate_synthetic(n_identities=7, items_per_identity=3, seed=0)
    assert set(ds.query_catalog.identities) <= set(ds.db_catalog.identities)
    assert len(ds.db_catalog) == 14 and len(ds.query_catalog) == 7


@pytest.mark.parametrize("bad", [{"n_identities": 0}, {"items_per_identity": 1}, {"separation": 1.0},
                                 {"separation": 0.0}, {"sigma": -1.0}, {"dims": 0}])
def test_invalid_params(bad):
    with pytest.raises(ConfigError):
        generate_synthetic(**bad)


def test_nearly_separable_instance():
    ds = generate_synthetic(SynthParams(n_identities=20, items_per_identity=10, sigma=0.05, separation=0.8, seed=0))
    split = make_split(ds.query_catalog, 0.5, 0)
    res = run_pipeline(ds.query_catalog, ds.db_catalog,
                       [GlobalSource("global", ds.query_embeddings, ds.db_embeddings)], split)
    assert res.accuracy >= 0.95
