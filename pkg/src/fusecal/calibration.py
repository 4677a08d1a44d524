"""Calibration of raw similarity scores into same-identity probabilities.

Two strictly increasing maps are supported:

* ``isotonic_pchip``: pool-adjacent-violators isotonic regression whose
  blocks are turned into knots and joined by a monotone cubic Hermite
  interpolant with Fritsch-Carlson tangent limiting.
* ``platt``: one-dimensional logistic regression fitted by Newton's method.

Strictness matters because retrieval takes an argmax over calibrated scores;
a flat stretch would create ties that the raw scores did not have.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import for_each_row
from .core import PairLabelSet, ScoreKind, ScoreMatrix
from .errors import (
    ConfigError,
    ConvergenceError,
    FormatError,
    InsufficientClassesError,
    InsufficientDataError,
    IoError,
)

logger = logging.getLogger(__name__)

ISOTONIC = "isotonic_pchip"
PLATT = "platt"
METHOD_ALIASES = {"isotonic": ISOTONIC, "isotonic_pchip": ISOTONIC, "platt": PLATT, "logistic": PLATT}

# Knot values are squeezed into [TAIL_MARGIN, 1 - TAIL_MARGIN]; the margin is
# the room the bounded tails use outside the knot range.
TAIL_MARGIN = 1e-9

PLATT_L2 = 1e-6
PLATT_MAX_ITER = 100
PLATT_GRAD_TOL = 1e-10
# Beyond this logit the logistic curve is continued with a hyperbolic tail so
# that outputs stay distinguishable in float64 instead of saturating at 1.0.
_LOGIT_KNEE = 20.0
_SIGMOID_KNEE = 1.0 / (1.0 + math.exp(_LOGIT_KNEE))


def canonical_method(method: str) -> str:
    try:
        return METHOD_ALIASES[method]
    except KeyError:
        raise ConfigError(f"unknown calibration method {method!r}") from None


def _check_pairs(pairs: PairLabelSet) -> None:
    if len(pairs) < 2:
        raise InsufficientDataError(f"need at least 2 pairs, got {len(pairs)}")
    if pairs.n_positive == 0 or pairs.n_negative == 0:
        raise InsufficientClassesError("calibration pairs contain a single class")


# -- isotonic regression ---------------------------------------------------


@dataclass(frozen=True)
class IsotonicFit:
    """PAV blocks. ``x`` is the mean raw score of each block, ``y`` its fitted value.

    ``lo``/``hi`` are the smallest and largest raw score in each block.
    """

    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    x_min: float
    x_max: float

    @property
    def n_blocks(self) -> int:
        return len(self.x)

    @property
    def blocks(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))

    def fitted_values(self, scores) -> np.ndarray:
        """Step-function value for each (training) score."""
        s = np.asarray(scores, dtype=np.float64)
        k = np.clip(np.searchsorted(self.hi, s, side="left"), 0, self.n_blocks - 1)
        return self.y[k]


def fit_isotonic_pav(pairs: PairLabelSet) -> IsotonicFit:
    """Least-squares non-decreasing fit of labels against scores.

    Tied scores are pooled first. Blocks are merged while the left mean is
    greater than or equal to the right one, so the resulting values are
    strictly increasing. Means are compared as exact integer cross products.
    """
    _check_pairs(pairs)
    uniq, inverse, counts = np.unique(pairs.scores, return_inverse=True, return_counts=True)
    positives = np.bincount(inverse, weights=pairs.labels, minlength=len(uniq))

    # block = [positives, count, score_sum, lo, hi]
    stack: list[list] = []
    for u, c, p in zip(uniq.tolist(), counts.tolist(), positives.tolist()):
        cur = [int(p), int(c), u * c, u, u]
        while stack and stack[-1][0] * cur[1] >= cur[0] * stack[-1][1]:
            prev = stack.pop()
            cur = [prev[0] + cur[0], prev[1] + cur[1], prev[2] + cur[2], prev[3], cur[4]]
        stack.append(cur)

    x = np.array([b[2] / b[1] for b in stack])
    # a block's mean can round outside its own score range
    x = np.clip(x, [b[3] for b in stack], [b[4] for b in stack])
    return IsotonicFit(
        x=x,
        y=np.array([b[0] / b[1] for b in stack]),
        lo=np.array([b[3] for b in stack]),
        hi=np.array([b[4] for b in stack]),
        x_min=float(uniq[0]),
        x_max=float(uniq[-1]),
    )


def fritsch_carlson_tangents(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    delta = np.diff(y) / h
    m = np.empty_like(x)
    m[0] = delta[0]
    m[-1] = delta[-1]
    m[1:-1] = 0.5 * (delta[:-1] + delta[1:])
    for k in range(len(delta)):
        if delta[k] == 0.0:
            m[k] = m[k + 1] = 0.0
            continue
        a = m[k] / delta[k]
        b = m[k + 1] / delta[k]
        r = a * a + b * b
        if r > 9.0:
            t = 3.0 / math.sqrt(r)
            m[k] = t * a * delta[k]
            m[k + 1] = t * b * delta[k]
    return m


def hermite_eval(x: np.ndarray, y: np.ndarray, m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate the cubic Hermite interpolant at ``s`` (assumed within ``[x[0], x[-1]]``)."""
    k = np.clip(np.searchsorted(x, s, side="right") - 1, 0, len(x) - 2)
    h = x[k + 1] - x[k]
    t = (s - x[k]) / h
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    out = h00 * y[k] + h10 * h * m[k] + h01 * y[k + 1] + h11 * h * m[k + 1]
    # the exact interpolant is bracketed by its knots; absorb rounding
    return np.clip(out, y[k], y[k + 1])


# -- the calibrator --------------------------------------------------------


@dataclass(frozen=True)
class Calibrator:
    """A fitted map from raw score to [0, 1].

    ``decreasing`` is set when a Platt fit ends up with a non-positive slope;
    such a calibrator would invert rankings and fusion rejects it.
    """

    method: str
    x_min: float
    x_max: float
    knots_x: np.ndarray | None = None
    knots_y: np.ndarray | None = None
    tangents: np.ndarray | None = None
    slope: float = 0.0
    intercept: float = 0.0
    decreasing: bool = False
    tail_margin: float = TAIL_MARGIN

    def __call__(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        if self.method == ISOTONIC:
            return self._eval_pchip(s)
        return logistic(self.slope * s + self.intercept)

    def _eval_pchip(self, s: np.ndarray) -> np.ndarray:
        x, y, m = self.knots_x, self.knots_y, self.tangents
        out = np.empty(s.shape, dtype=np.float64)
        below = s < x[0]
        above = s > x[-1]
        inside = ~(below | above)
        out[inside] = hermite_eval(x, y, m, s[inside])
        # bounded, strictly increasing tails scaled to the training range
        w_lo = x[0] - self.x_min if x[0] > self.x_min else 1.0
        w_hi = self.x_max - x[-1] if self.x_max > x[-1] else 1.0
        out[below] = y[0] - self.tail_margin * -np.expm1(-(x[0] - s[below]) / w_lo)
        out[above] = y[-1] + self.tail_margin * -np.expm1(-(s[above] - x[-1]) / w_hi)
        return np.clip(out, 0.0, 1.0)

    # -- serialization --

    def to_dict(self) -> dict:
        doc = {
            "format": "fusecal-calibrator",
            "version": 1,
            "method": self.method,
            "training_range": [self.x_min, self.x_max],
            "decreasing": self.decreasing,
        }
        if self.method == ISOTONIC:
            doc["knots"] = {
                "x": self.knots_x.tolist(),
                "y": self.knots_y.tolist(),
                "tangents": self.tangents.tolist(),
            }
            doc["tail_margin"] = self.tail_margin
        else:
            doc["platt"] = {"slope": self.slope, "intercept": self.intercept}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Calibrator":
        try:
            if doc.get("format") != "fusecal-calibrator":
                raise FormatError("calibrator", "missing format tag")
            method = doc["method"]
            x_min, x_max = (float(v) for v in doc["training_range"])
            if method == ISOTONIC:
                k = doc["knots"]
                return cls(ISOTONIC, x_min, x_max,
                           knots_x=np.array(k["x"], dtype=np.float64),
                           knots_y=np.array(k["y"], dtype=np.float64),
                           tangents=np.array(k["tangents"], dtype=np.float64),
                           decreasing=bool(doc["decreasing"]),
                           tail_margin=float(doc["tail_margin"]))
            if method == PLATT:
                p = doc["platt"]
                return cls(PLATT, x_min, x_max, slope=float(p["slope"]), intercept=float(p["intercept"]),
                           decreasing=bool(doc["decreasing"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError("calibrator", str(exc)) from exc
        raise FormatError("calibrator", f"unknown method {method!r}")

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Calibrator":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError("calibrator", str(exc)) from exc
        return cls.from_dict(doc)

    def save(self, path) -> None:
        try:
            Path(path).write_text(self.dumps())
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Calibrator":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        return cls.loads(text)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Calibrator):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def build_pchip(fit: IsotonicFit, tail_margin: float = TAIL_MARGIN) -> Calibrator:
    if fit.n_blocks < 2:
        raise InsufficientDataError(f"need at least 2 knots for a strictly increasing interpolant, got {fit.n_blocks}")
    y = tail_margin + (1.0 - 2.0 * tail_margin) * fit.y
    m = fritsch_carlson_tangents(fit.x, y)
    return Calibrator(ISOTONIC, fit.x_min, fit.x_max, knots_x=fit.x.copy(), knots_y=y, tangents=m,
                      tail_margin=tail_margin)


def pchip_from_knots(x, y, x_min=None, x_max=None) -> Calibrator:
    """Calibrator through explicit knots (mostly useful for tests and hand-built maps)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fit = IsotonicFit(x, y, x, x, float(x[0] if x_min is None else x_min), float(x[-1] if x_max is None else x_max))
    return build_pchip(fit)


# -- Platt scaling ---------------------------------------------------------


def logistic(z) -> np.ndarray:
    """Logistic function with hyperbolic tails past |z| = 20.

    Strictly increasing and inside (0, 1); near 1 the float64 spacing still
    merges inputs whose logits differ by less than about ``z**2 * 5e-8``.
    Differs from the plain logistic by less than 2.1e-9.
    """
    z = np.asarray(z, dtype=np.float64)
    out = np.empty(z.shape, dtype=np.float64)
    mid = np.abs(z) <= _LOGIT_KNEE
    zm = z[mid]
    e = np.exp(-np.abs(zm))
    out[mid] = np.where(zm >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    hi = z > _LOGIT_KNEE
    lo = z < -_LOGIT_KNEE
    out[hi] = 1.0 - _SIGMOID_KNEE / (1.0 + (z[hi] - _LOGIT_KNEE))
    out[lo] = _SIGMOID_KNEE / (1.0 + (-_LOGIT_KNEE - z[lo]))
    return out


def _plain_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_DECREMENT_RTOL = 8 * np.finfo(np.float64).eps


def fit_platt(pairs: PairLabelSet, l2: float = PLATT_L2, max_iter: int = PLATT_MAX_ITER,
              tol: float = PLATT_GRAD_TOL) -> Calibrator:
    """L2-regularised logistic regression of labels on raw scores.

    Scores are standardised internally; the penalty applies to the
    standardised coefficients and the loss is the mean log-loss.
    """
    _check_pairs(pairs)
    s = pairs.scores
    y = pairs.labels.astype(np.float64)
    n = len(s)
    center = float(s.mean())
    scale = float(s.std())
    if scale == 0.0:
        scale = 1.0
    X = np.column_stack([(s - center) / scale, np.ones(n)])

    # signed margins: the loss is softplus(-m) and d loss/dz is -sign * sigmoid(-m),
    # written per label so neither involves a cancellation
    sign = np.where(y > 0.5, 1.0, -1.0)

    def objective(w):
        return float(np.mean(np.logaddexp(0.0, -sign * (X @ w))) + 0.5 * l2 * (w @ w))

    w = np.zeros(2)
    f = objective(w)
    for it in range(max_iter + 1):
        z = X @ w
        p = _plain_sigmoid(z)
        g = X.T @ (-sign * _plain_sigmoid(-sign * z)) / n + l2 * w
        if np.linalg.norm(g) < tol:
            break
        if it == max_iter:
            raise ConvergenceError(f"Platt scaling gradient norm {np.linalg.norm(g):.3g} above {tol}", it)
        H = (X.T * (p * (1.0 - p))) @ X / n + l2 * np.eye(2)
        step = np.linalg.solve(H, g)
        decrement = float(g @ step)
        if decrement <= _DECREMENT_RTOL * f:
            # remaining progress is below the float64 resolution of the objective
            break
        t = 1.0
        while True:
            w_new = w - t * step
            f_new = objective(w_new)
            if f_new <= f - 0.25 * t * decrement or t < 1e-12:
                break
            t *= 0.5
        w, f = w_new, f_new

    slope = float(w[0] / scale)
    intercept = float(w[1] - w[0] * center / scale)
    decreasing = not slope > 0.0
    if decreasing:
        logger.warning("Platt fit has non-positive slope %.3g; calibrator flagged as decreasing", slope)
    return Calibrator(PLATT, float(s.min()), float(s.max()), slope=slope, intercept=intercept,
                      decreasing=decreasing)


def fit_calibrator(pairs: PairLabelSet, method: str = ISOTONIC) -> Calibrator:
    """Fit either calibrator. A one-block isotonic fit falls back to Platt with a warning."""
    method = canonical_method(method)
    if method == PLATT:
        return fit_platt(pairs)
    fit = fit_isotonic_pav(pairs)
    if fit.n_blocks < 2:
        warnings.warn("isotonic fit collapsed to a single block; falling back to Platt scaling",
                      RuntimeWarning, stacklevel=2)
        return fit_platt(pairs)
    return build_pchip(fit)


def apply_calibrator(cal: Calibrator, scores: ScoreMatrix, threads: int | None = None) -> ScoreMatrix:
    scores.require_kind(ScoreKind.RAW_GLOBAL, ScoreKind.RAW_LOCAL)
    out = np.empty(scores.shape, dtype=np.float64)
    raw = scores.values

    def row(r: int) -> None:
        out[r] = cal(raw[r])

    for_each_row(row, scores.n_query, threads)
    return ScoreMatrix(out, ScoreKind.CALIBRATED, flagged=cal.decreasing)
