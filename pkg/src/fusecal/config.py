"""Pipeline configuration documents (YAML or JSON)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from .calibration import Calibrator, canonical_method
from .core import ItemCatalog, Role, make_split
from .errors import ConfigError
from .fusion import FusionConfig
from .io import read_embedding_file, read_label_file, read_match_file
from .pipeline import GlobalSource, LocalSource, MuPolicy, PipelineResult, run_pipeline

SCHEMA = {
    "type": "object",
    "required": ["labels", "scores"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "labels": {
            "type": "object",
            "required": ["query", "database"],
            "additionalProperties": False,
            "properties": {"query": {"type": "string"}, "database": {"type": "string"}},
        },
        "scores": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "type"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "type": {"enum": ["global", "local"]},
                    "query_embeddings": {"type": "string"},
                    "database_embeddings": {"type": "string"},
                    "matches": {"type": "string"},
                },
            },
        },
        "calibration": {"enum": ["isotonic", "isotonic_pchip", "platt", "logistic"]},
        "mu": {
            "type": "object",
            "required": ["policy"],
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["fixed", "tuned"]},
                "value": {"type": "number", "minimum": 0, "maximum": 1},
                "grid": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
            },
        },
        "fusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"weights": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}}},
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        },
        "shortlist": {
            "type": "object",
            "required": ["budgets"],
            "additionalProperties": False,
            "properties": {"budgets": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}}},
        },
        "calibration_subset": {
            "type": "object",
            "required": ["n_items"],
            "additionalProperties": False,
            "properties": {"n_items": {"type": "integer", "minimum": 1}},
        },
        "zero_shot": {
            "type": "object",
            "required": ["calibrators"],
            "additionalProperties": False,
            "properties": {"calibrators": {"type": "string"}},
        },
    },
}


@dataclass(frozen=True)
class ScoreSpec:
    name: str
    type: str
    paths: dict[str, Path]


@dataclass(frozen=True)
class PipelineConfig:
    query_labels: Path
    database_labels: Path
    scores: tuple[ScoreSpec, ...]
    seed: int = 0
    threads: int | None = None
    calibration: str = "isotonic_pchip"
    mu: MuPolicy = field(default_factory=MuPolicy.fixed_at)
    weights: dict[str, float] | None = None
    split_ratio: float = 0.5
    budgets: tuple[int, ...] = ()
    calibration_items: int | None = None
    zero_shot_dir: Path | None = None

    def with_overrides(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what}: file {path} does not exist")
    return path


def parse_config(doc: dict, base_dir=".") -> PipelineConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    base = Path(base_dir)
    scores = []
    for entry in doc["scores"]:
        if entry["type"] == "global":
            keys = ("query_embeddings", "database_embeddings")
        else:
            keys = ("matches",)
        missing = [k for k in keys if k not in entry]
        if missing:
            raise ConfigError(f"score {entry['name']!r} lacks {missing}")
        extra = set(entry) - set(keys) - {"name", "type"}
        if extra:
            raise ConfigError(f"score {entry['name']!r} has fields {sorted(extra)} not used by type {entry['type']}")
        paths = {k: _require_file(_resolve(base, entry[k]), f"score {entry['name']!r} {k}") for k in keys}
        scores.append(ScoreSpec(entry["name"], entry["type"], paths))
    names = [s.name for s in scores]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate score names {names}")

    mu_doc = doc.get("mu", {"policy": "fixed", "value": 0.5})
    if mu_doc["policy"] == "fixed":
        mu = MuPolicy.fixed_at(mu_doc.get("value", 0.5))
    else:
        mu = MuPolicy.tuned(mu_doc.get("grid"))

    weights = doc.get("fusion", {}).get("weights")
    if weights is not None:
        FusionConfig.from_weights(weights)
        if set(weights) != set(names):
            raise ConfigError(f"fusion weights {sorted(weights)} must name exactly the scores {sorted(names)}")

    zs = doc.get("zero_shot")
    return PipelineConfig(
        query_labels=_require_file(_resolve(base, doc["labels"]["query"]), "query labels"),
        database_labels=_require_file(_resolve(base, doc["labels"]["database"]), "database labels"),
        scores=tuple(scores),
        seed=doc.get("seed", 0),
        threads=doc.get("threads"),
        calibration=canonical_method(doc.get("calibration", "isotonic_pchip")),
        mu=mu,
        weights=weights,
        split_ratio=doc.get("split", {}).get("ratio", 0.5),
        budgets=tuple(doc.get("shortlist", {}).get("budgets", ())),
        calibration_items=doc.get("calibration_subset", {}).get("n_items"),
        zero_shot_dir=_resolve(base, zs["calibrators"]) if zs else None,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return parse_config(doc, path.parent)


def calibrator_path(directory, name: str) -> Path:
    return Path(directory) / f"{name}.calibrator.json"


def load_calibrators(directory, names) -> dict[str, Calibrator]:
    out = {}
    for name in names:
        p = calibrator_path(directory, name)
        if not p.is_file():
            raise ConfigError(f"zero-shot calibrator for {name!r} not found at {p}")
        out[name] = Calibrator.load(p)
    return out


@dataclass
class LoadedInputs:
    query_catalog: ItemCatalog
    db_catalog: ItemCatalog
    sources: list


def load_inputs(cfg: PipelineConfig) -> LoadedInputs:
    qcat = read_label_file(cfg.query_labels, Role.QUERY)
    dcat = read_label_file(cfg.database_labels, Role.DATABASE)
    sources = []
    for s in cfg.scores:
        if s.type == "global":
            sources.append(GlobalSource(s.name, read_embedding_file(s.paths["query_embeddings"]),
                                        read_embedding_file(s.paths["database_embeddings"])))
        else:
            sources.append(LocalSource(s.name, read_match_file(s.paths["matches"], qcat, dcat)))
    return LoadedInputs(qcat, dcat, sources)


def run_config(cfg: PipelineConfig, threads: int | None = None) -> tuple[PipelineResult, LoadedInputs]:
    inputs = load_inputs(cfg)
    split = make_split(inputs.query_catalog, cfg.split_ratio, cfg.seed)
    calibrators = None
    if cfg.zero_shot_dir is not None:
        calibrators = load_calibrators(cfg.zero_shot_dir, [s.name for s in cfg.scores])
    result = run_pipeline(
        inputs.query_catalog, inputs.db_catalog, inputs.sources, split,
        method=cfg.calibration, mu_policy=cfg.mu, fusion=cfg.weights, budgets=cfg.budgets or None,
        calibrators=calibrators, calibration_items=cfg.calibration_items, calibration_seed=cfg.seed,
        threads=threads if threads is not None else cfg.threads,
    )
    return result, inputs
