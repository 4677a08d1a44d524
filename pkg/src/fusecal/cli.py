"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data/format error,
3 numeric/convergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import resolve_threads
from .calibration import Calibrator, apply_calibrator, canonical_method, fit_calibrator
from .config import load_config, run_config
from .core import Role, ScoreKind, build_pair_labels, make_split
from .errors import ConfigError, FusecalError
from .fusion import FusionConfig, default_config, fuse
from .io import read_embedding_file, read_label_file, read_match_file, read_score_file, write_score_file
from .pipeline import MuPolicy
from .report import emit_report
from .retrieval import CountingScorer, rank_top1, shortlist_rerank, top1_accuracy, tune_mu
from .similarity import DEFAULT_MU, global_score_matrix, local_score_matrix
from .synth import SynthParams, generate_synthetic, write_synthetic

logger = logging.getLogger("fusecal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CALIBRATION_CHOICES = ["isotonic", "isotonic_pchip", "platt", "logistic"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _pairs_arg(values, what: str) -> dict[str, str]:
    out = {}
    for v in values or []:
        if "=" not in v:
            raise ConfigError(f"{what} must look like NAME=VALUE, got {v!r}")
        k, _, val = v.partition("=")
        out[k] = val
    return out


def _split_rows(args, n_query: int) -> np.ndarray:
    if args.split == "all":
        return np.arange(n_query)
    split = make_split(n_query, args.ratio, args.seed)
    return split.validation_indices if args.split == "validation" else split.test_indices


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    params = SynthParams(n_identities=args.identities, items_per_identity=args.items_per_identity, dims=args.dims,
                         sigma=args.sigma, separation=args.separation, seed=args.seed)
    paths = write_synthetic(generate_synthetic(params), args.out)
    _print_json({k: str(v) for k, v in paths.items()})
    return EXIT_OK


def cmd_score_global(args) -> int:
    scores = global_score_matrix(read_embedding_file(args.query_emb), read_embedding_file(args.db_emb), args.threads)
    write_score_file(args.out, scores)
    return EXIT_OK


def cmd_score_local(args) -> int:
    qcat = read_label_file(args.query_labels, Role.QUERY)
    dcat = read_label_file(args.db_labels, Role.DATABASE)
    records = read_match_file(args.matches, qcat, dcat)
    write_score_file(args.out, local_score_matrix(records, args.mu))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    qcat = read_label_file(args.query_labels, Role.QUERY)
    dcat = read_label_file(args.db_labels, Role.DATABASE)
    raw = read_score_file(args.scores)
    rows = make_split(qcat, args.ratio, args.seed).validation_indices
    cal = fit_calibrator(build_pair_labels(raw, qcat, dcat, rows), args.calibration)
    cal.save(args.out)
    if args.apply_out:
        write_score_file(args.apply_out, apply_calibrator(cal, raw, args.threads))
    return EXIT_OK


def cmd_apply(args) -> int:
    cal = Calibrator.load(args.calibrator)
    write_score_file(args.out, apply_calibrator(cal, read_score_file(args.scores), args.threads))
    return EXIT_OK


def cmd_fuse(args) -> int:
    inputs = _pairs_arg(args.input, "--input")
    if not inputs:
        raise ConfigError("fuse needs at least one --input NAME=FILE")
    weights = _pairs_arg(args.weight, "--weight")
    if weights:
        config = FusionConfig.from_weights({k: float(v) for k, v in weights.items()})
    else:
        config = default_config(list(inputs))
    write_score_file(args.out, fuse({k: read_score_file(v) for k, v in inputs.items()}, config))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    qcat = read_label_file(args.query_labels, Role.QUERY)
    dcat = read_label_file(args.db_labels, Role.DATABASE)
    scores = read_score_file(args.scores)
    rows = _split_rows(args, len(qcat))
    preds = rank_top1(scores.values[rows], dcat)
    _print_json({"split": args.split, "n_queries": int(len(rows)),
                 "top1_accuracy": top1_accuracy(preds, qcat, dcat, rows)})
    return EXIT_OK


def cmd_tune_mu(args) -> int:
    qcat = read_label_file(args.query_labels, Role.QUERY)
    dcat = read_label_file(args.db_labels, Role.DATABASE)
    records = read_match_file(args.matches, qcat, dcat)
    rows = make_split(qcat, args.ratio, args.seed).validation_indices
    tuning = tune_mu(records, qcat, dcat, rows, args.grid, args.calibration)
    curve = [{"mu": m, "accuracy": (a if a != float("-inf") else None)} for m, a in sorted(tuning.accuracy.items())]
    _print_json({"mu": tuning.mu, "curve": curve, "failures": {str(k): v for k, v in tuning.failures.items()}})
    return EXIT_OK


def cmd_shortlist(args) -> int:
    qcat = read_label_file(args.query_labels, Role.QUERY)
    dcat = read_label_file(args.db_labels, Role.DATABASE)
    cheap = read_score_file(args.cheap)
    expensive = read_score_file(args.expensive)
    if cheap.shape != expensive.shape:
        raise ConfigError(f"cheap {cheap.shape} and expensive {expensive.shape} matrices differ in shape")
    rows = _split_rows(args, len(qcat))
    budgets = sorted(set(args.budget or [1]))
    curve = []
    for b in budgets:
        res = shortlist_rerank(cheap.values[rows], CountingScorer(expensive.values), b, dcat,
                               query_indices=rows, threads=args.threads)
        curve.append({"budget": b, "accuracy": top1_accuracy(res.predictions, qcat, dcat, rows),
                      "evaluations_per_query": int(res.evaluations.max()) if len(rows) else 0})
    _print_json({"split": args.split, "budget_curve": curve})
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run needs --config")
    cfg = load_config(args.config)
    overrides = {"seed": args.seed, "calibration": canonical_method(args.calibration) if args.calibration else None}
    if args.mu is not None:
        overrides["mu"] = MuPolicy.fixed_at(args.mu)
    if args.budget:
        overrides["budgets"] = tuple(sorted(set(cfg.budgets) | set(args.budget)))
    if args.zero_shot:
        overrides["zero_shot_dir"] = Path(args.zero_shot)
    cfg = cfg.with_overrides(**overrides)
    result, inputs = run_config(cfg, threads=args.threads)
    out = Path(args.out or ".")
    extra = {"seed": cfg.seed, "calibration": cfg.calibration, "split_ratio": cfg.split_ratio}
    emit_report(result, inputs.query_catalog, inputs.db_catalog, out, extra=extra)
    summary = {n: r.top1_accuracy for n, r in result.per_score.items()}
    summary["fused"] = result.accuracy
    _print_json({"accuracy": summary, "mu": result.mu, "out": str(out)})
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $FUSECAL_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    labels = argparse.ArgumentParser(add_help=False)
    labels.add_argument("--query-labels", required=True)
    labels.add_argument("--db-labels", required=True)

    split = argparse.ArgumentParser(add_help=False)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--ratio", type=float, default=0.5)

    which = argparse.ArgumentParser(add_help=False)
    which.add_argument("--split", choices=["test", "validation", "all"], default="test")

    parser = _Parser(prog="fusecal", description="Calibrated similarity-score fusion for closed-set identification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=50)
    p.add_argument("--items-per-identity", type=int, default=8)
    p.add_argument("--dims", type=int, default=32)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--separation", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score-global", parents=[common], help="cosine similarity matrix from embeddings")
    p.add_argument("--query-emb", required=True)
    p.add_argument("--db-emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_global)

    p = sub.add_parser("score-local", parents=[common, labels], help="thresholded match counts")
    p.add_argument("--matches", required=True)
    p.add_argument("--mu", type=float, default=DEFAULT_MU)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_local)

    p = sub.add_parser("calibrate", parents=[common, labels, split], help="fit a calibrator on validation queries")
    p.add_argument("--scores", required=True)
    p.add_argument("--calibration", choices=CALIBRATION_CHOICES, default="isotonic")
    p.add_argument("--out", required=True, help="calibrator JSON")
    p.add_argument("--apply-out", help="also write the calibrated matrix")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("apply", parents=[common], help="apply a saved calibrator to a raw matrix")
    p.add_argument("--calibrator", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("fuse", parents=[common], help="weighted average of calibrated matrices")
    p.add_argument("--input", action="append", metavar="NAME=FILE")
    p.add_argument("--weight", action="append", metavar="NAME=W")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", parents=[common, labels, split, which], help="top-1 accuracy of a matrix")
    p.add_argument("--scores", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune-mu", parents=[common, labels, split], help="search the match threshold")
    p.add_argument("--matches", required=True)
    p.add_argument("--grid", type=float, nargs="+")
    p.add_argument("--calibration", choices=CALIBRATION_CHOICES, default="isotonic")
    p.set_defaults(func=cmd_tune_mu)

    p = sub.add_parser("shortlist", parents=[common, labels, split, which], help="budgeted shortlist re-ranking")
    p.add_argument("--cheap", required=True)
    p.add_argument("--expensive", required=True)
    p.add_argument("--budget", type=int, action="append")
    p.set_defaults(func=cmd_shortlist)

    p = sub.add_parser("run", parents=[common], help="full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--budget", type=int, action="append")
    p.add_argument("--calibration", choices=CALIBRATION_CHOICES, default=None)
    p.add_argument("--zero-shot", metavar="DIR", default=None)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.threads = resolve_threads(args.threads)
    except ValueError:
        parser.error("FUSECAL_THREADS must be an integer")
    try:
        return args.func(args)
    except FusecalError as exc:
        print(f"fusecal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
