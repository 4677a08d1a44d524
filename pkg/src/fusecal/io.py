"""On-disk formats.

Embedding file (little-endian)::

    b"FEMB"  u32 version=1  u64 rows  u64 dims  rows*dims float32, row-major

Score-matrix file, used for intermediates between CLI stages::

    b"FSCM"  u32 version=1  u32 kind  u32 flagged  u64 rows  u64 cols  rows*cols float64

Label files hold ``item_id,identity_id`` lines; match files hold
``query_id,database_id,confidence`` lines. Both accept ``#`` comments and
blank lines.
"""

from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

from .core import EmbeddingMatrix, ItemCatalog, MatchRecordSet, Role, ScoreKind, ScoreMatrix
from .errors import FormatError, IoError, RangeError, UnknownItemError

EMBEDDING_MAGIC = b"FEMB"
SCORES_MAGIC = b"FSCM"
FORMAT_VERSION = 1
_EMB_HEADER = struct.Struct("<4sIQQ")
_SCORE_HEADER = struct.Struct("<4sIIIQQ")
_KIND_CODES = {ScoreKind.RAW_GLOBAL: 0, ScoreKind.RAW_LOCAL: 1, ScoreKind.CALIBRATED: 2, ScoreKind.FUSED: 3}
_KIND_FROM_CODE = {v: k for k, v in _KIND_CODES.items()}


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_text_lines(path) -> list[str]:
    try:
        with open(path, newline="") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


# -- embeddings -------------------------------------------------------------


def write_embedding_file(path, matrix) -> None:
    values = matrix.values if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    if values.ndim != 2:
        raise FormatError("shape", f"expected a 2-D matrix, got {values.shape}")
    rows, dims = values.shape
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    _write_bytes(path, _EMB_HEADER.pack(EMBEDDING_MAGIC, FORMAT_VERSION, rows, dims) + payload)


def read_embedding_file(path, catalog_ref: str = "") -> EmbeddingMatrix:
    data = _read_bytes(path)
    if len(data) < 4 or data[:4] != EMBEDDING_MAGIC:
        raise FormatError("magic", f"{path} does not start with {EMBEDDING_MAGIC!r}")
    if len(data) < _EMB_HEADER.size:
        raise FormatError("length", f"{path} is shorter than the header")
    _, version, rows, dims = _EMB_HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise FormatError("version", f"unsupported embedding format version {version}")
    expected = _EMB_HEADER.size + rows * dims * 4
    if len(data) != expected:
        raise FormatError("length", f"{path}: header declares {rows}x{dims} ({expected} bytes), file has {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_EMB_HEADER.size).reshape(rows, dims)
    return EmbeddingMatrix(values.astype(np.float64), catalog_ref=catalog_ref or str(path))


# -- score matrices ---------------------------------------------------------


def write_score_file(path, scores: ScoreMatrix) -> None:
    rows, cols = scores.shape
    header = _SCORE_HEADER.pack(SCORES_MAGIC, FORMAT_VERSION, _KIND_CODES[scores.kind], int(scores.flagged), rows, cols)
    _write_bytes(path, header + np.ascontiguousarray(scores.values, dtype="<f8").tobytes())


def read_score_file(path) -> ScoreMatrix:
    data = _read_bytes(path)
    if len(data) < 4 or data[:4] != SCORES_MAGIC:
        raise FormatError("magic", f"{path} does not start with {SCORES_MAGIC!r}")
    if len(data) < _SCORE_HEADER.size:
        raise FormatError("length", f"{path} is shorter than the header")
    _, version, kind, flagged, rows, cols = _SCORE_HEADER.unpack_from(data)
    if version != FORMAT_VERSION or kind not in _KIND_FROM_CODE:
        raise FormatError("version", f"unsupported score file (version {version}, kind {kind})")
    if len(data) != _SCORE_HEADER.size + rows * cols * 8:
        raise FormatError("length", f"{path}: payload does not match {rows}x{cols}")
    values = np.frombuffer(data, dtype="<f8", offset=_SCORE_HEADER.size).reshape(rows, cols)
    return ScoreMatrix(values.copy(), _KIND_FROM_CODE[kind], bool(flagged))


# -- labels -----------------------------------------------------------------


def _data_rows(lines: list[str]):
    for n, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield n, next(csv.reader([stripped]))


def read_label_file(path, role: Role | str = Role.QUERY) -> ItemCatalog:
    items = []
    seen = set()
    for n, fields in _data_rows(_read_text_lines(path)):
        if len(fields) != 2:
            raise FormatError("labels", f"{path} line {n}: expected 'item_id,identity_id'")
        item_id, identity = (f.strip() for f in fields)
        if not item_id or not identity:
            raise FormatError("labels", f"{path} line {n}: empty item or identity")
        if item_id in seen:
            raise FormatError("labels", f"{path} line {n}: duplicate item id {item_id!r}")
        seen.add(item_id)
        items.append((item_id, identity))
    return ItemCatalog(tuple(items), Role(role), name=str(path))


def write_label_file(path, catalog: ItemCatalog) -> None:
    text = "".join(f"{i},{c}\n" for i, c in catalog.items)
    _write_bytes(path, text.encode())


# -- match records ----------------------------------------------------------


def read_match_file(path, query_catalog: ItemCatalog, db_catalog: ItemCatalog) -> MatchRecordSet:
    qmap = query_catalog.index_map()
    dmap = db_catalog.index_map()
    q, d, c = [], [], []
    for n, fields in _data_rows(_read_text_lines(path)):
        if len(fields) != 3:
            raise FormatError("match", f"{path} line {n}: expected 'query_id,database_id,confidence'")
        qid, did, conf = (f.strip() for f in fields)
        if qid not in qmap:
            raise UnknownItemError(qid, line=n)
        if did not in dmap:
            raise UnknownItemError(did, line=n)
        try:
            value = float(conf)
        except ValueError:
            raise RangeError(f"confidence {conf!r} is not a number", line=n) from None
        if not math.isfinite(value) or not (0.0 <= value <= 1.0):
            raise RangeError(f"confidence {conf!r} outside [0, 1]", line=n)
        q.append(qmap[qid])
        d.append(dmap[did])
        c.append(value)
    return MatchRecordSet(q, d, c, len(query_catalog), len(db_catalog))


def format_match_lines(records: MatchRecordSet, query_catalog: ItemCatalog, db_catalog: ItemCatalog) -> str:
    qids = query_catalog.item_ids
    dids = db_catalog.item_ids
    return "".join(
        f"{qids[qi]},{dids[di]},{ci!r}\n"
        for qi, di, ci in zip(records.query_index.tolist(), records.database_index.tolist(), records.confidence.tolist())
    )


def write_match_file(path, records: MatchRecordSet, query_catalog: ItemCatalog, db_catalog: ItemCatalog,
                     header: str | None = None) -> None:
    text = format_match_lines(records, query_catalog, db_catalog)
    if header:
        text = "".join(f"# {h}\n" for h in header.splitlines()) + text
    _write_bytes(path, text.encode())
