"""Identify the most similar database item by fusing calibrated similarity scores."""

__version__ = "0.1.0"

from .calibration import (
    Calibrator,
    IsotonicFit,
    apply_calibrator,
    build_pchip,
    fit_calibrator,
    fit_isotonic_pav,
    fit_platt,
)
from .core import (
    EmbeddingMatrix,
    ItemCatalog,
    MatchRecordSet,
    PairLabelSet,
    Role,
    ScoreKind,
    ScoreMatrix,
    SplitSpec,
    build_pair_labels,
    make_split,
)
from .fusion import FusionConfig, default_config, fuse
from .pipeline import GlobalSource, LocalSource, MuPolicy, PipelineResult, run_pipeline
from .retrieval import (
    Budget,
    RetrievalResult,
    rank_top1,
    shortlist_rerank,
    subsample_calibration_set,
    top1_accuracy,
    tune_mu,
)
from .similarity import MatchThreshold, cosine_similarity, global_score_matrix, local_match_count, local_score_matrix
from .synth import SynthParams, generate_synthetic, write_synthetic
