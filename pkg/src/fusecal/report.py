"""Report emission: a JSON summary plus a CSV of per-query predictions."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .config import calibrator_path
from .core import ItemCatalog
from .errors import IoError
from .pipeline import PipelineResult

REPORT_FILE = "report.json"
PREDICTIONS_FILE = "predictions.csv"


def _clean(obj):
    """Make a value JSON-safe: non-finite floats become null, keys become strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def build_report(result: PipelineResult, extra: dict | None = None) -> dict:
    diag = {k: v for k, v in result.diagnostics.items() if k != "budget_curve"}
    accuracy = {name: r.top1_accuracy for name, r in result.per_score.items()}
    accuracy["fused"] = result.fused.top1_accuracy
    report = {
        "format": "fusecal-report",
        "version": 1,
        "accuracy": accuracy,
        "mu": dict(result.mu),
        "budget_curve": result.diagnostics.get("budget_curve", []),
        "diagnostics": diag,
    }
    if extra:
        report["run"] = extra
    return _clean(report)


def predictions_csv(result: PipelineResult, query_catalog: ItemCatalog, db_catalog: ItemCatalog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_id", "true_identity", "predicted_item", "predicted_identity", "fused_score", "correct"])
    qids = query_catalog.item_ids
    dids = db_catalog.item_ids
    truth = query_catalog.identities
    p = result.fused.predictions
    for q, d, ident, score in zip(result.fused.query_indices.tolist(), p.indices.tolist(), p.identities,
                                  p.scores.tolist()):
        w.writerow([qids[q], truth[q], dids[d], ident, repr(score), int(ident == truth[q])])
    return buf.getvalue()


def emit_report(result: PipelineResult, query_catalog: ItemCatalog, db_catalog: ItemCatalog, out_dir,
                extra: dict | None = None, save_calibrators: bool = True) -> dict[str, Path]:
    """Write ``report.json``, ``predictions.csv`` and the fitted calibrators.

    Output is a pure function of the result, so re-emitting gives
    byte-identical files.
    """
    out = Path(out_dir)
    paths = {"report": out / REPORT_FILE, "predictions": out / PREDICTIONS_FILE}
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths["report"].write_text(json.dumps(build_report(result, extra), indent=2, sort_keys=True) + "\n")
        paths["predictions"].write_text(predictions_csv(result, query_catalog, db_catalog))
        if save_calibrators:
            cal_dir = out / "calibrators"
            cal_dir.mkdir(exist_ok=True)
            for name, cal in sorted(result.calibrators.items()):
                p = calibrator_path(cal_dir, name)
                cal.save(p)
                paths[f"calibrator:{name}"] = p
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
    return paths
