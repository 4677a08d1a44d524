"""Weighted-average fusion of calibrated score matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ScoreKind, ScoreMatrix
from .errors import ConfigError, FlaggedCalibratorError, ShapeError


@dataclass(frozen=True)
class FusionConfig:
    """Named weights, normalised to sum to one at construction."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        entries = tuple((str(n), float(w)) for n, w in self.entries)
        if not entries:
            raise ConfigError("fusion needs at least one score")
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate score names in fusion config: {names}")
        if any(not np.isfinite(w) or w < 0 for _, w in entries):
            raise ConfigError("fusion weights must be finite and non-negative")
        total = math.fsum(w for _, w in entries)
        if total <= 0:
            raise ConfigError("at least one fusion weight must be positive")
        object.__setattr__(self, "entries", tuple((n, w / total) for n, w in entries))

    @classmethod
    def from_weights(cls, weights: Mapping[str, float]) -> "FusionConfig":
        return cls(tuple(weights.items()))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    @property
    def weights(self) -> dict[str, float]:
        return dict(self.entries)


def default_config(names: Sequence[str]) -> FusionConfig:
    if not names:
        raise ConfigError("cannot build a fusion config from an empty name list")
    return FusionConfig(tuple((n, 1.0) for n in names))


def fuse(matrices: Mapping[str, ScoreMatrix] | Sequence[tuple[str, ScoreMatrix]],
         config: FusionConfig | None = None) -> ScoreMatrix:
    """Entry-wise weighted mean. Terms are summed in name-sorted order for reproducibility."""
    named = dict(matrices.items() if isinstance(matrices, Mapping) else matrices)
    if config is None:
        config = default_config(sorted(named))
    if set(named) != set(config.names):
        raise ConfigError(f"fusion config names {sorted(config.names)} do not match matrices {sorted(named)}")
    shapes = {m.shape for m in named.values()}
    if len(shapes) != 1:
        raise ShapeError(f"cannot fuse matrices of different shapes: {sorted(shapes)}")
    for name, m in named.items():
        m.require_kind(ScoreKind.CALIBRATED)
        if m.flagged:
            raise FlaggedCalibratorError(f"score {name!r} was calibrated by a decreasing calibrator")

    weights = config.weights
    order = sorted(named)
    if len(order) == 1:
        return ScoreMatrix(named[order[0]].values.copy(), ScoreKind.FUSED)
    out = np.zeros(shapes.pop(), dtype=np.float64)
    for name in order:
        out += weights[name] * named[name].values
    # convexity holds exactly; clip rounding past the extreme inputs
    stack = np.stack([named[n].values for n in order])
    np.clip(out, stack.min(axis=0), stack.max(axis=0), out=out)
    return ScoreMatrix(out, ScoreKind.FUSED)
