"""Split conformal prediction intervals for estimated segmentation quality.

Calibration: for each calibration case we hold a reverse-accuracy score set
and the true quality score. The score set yields empirical lower/upper
quantiles (q_low at p_low near the center, q_high at p_high near the top,
reflecting that reverse-accuracy scoring tends to underestimate quality),
and the nonconformity of a case is how far the truth falls outside them:

    s = max(q_low - y, y - q_high)

The threshold q_hat is the ceil((1 - alpha) * (n + 1))-th smallest of the n
calibration nonconformity scores; when that index exceeds n the threshold
is +inf and intervals are vacuous. A new case's interval is

    [q_low - q_hat, q_high + q_hat]

clipped to the score range [0, 1]. If calibration and test cases are
exchangeable, the interval contains the true score with probability at
least 1 - alpha (marginal coverage).

Residual-style alternatives are provided: "residual" uses s = |y - y_pred|
with intervals y_pred +/- q_hat, and "locally_weighted" divides by the
score-set spread sigma with intervals y_pred +/- q_hat * sigma.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .rca import ScoreSet

NONCONFORMITY_KINDS = ("cqr_empirical", "residual", "locally_weighted")

SCORE_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class QuantilePair:
    """Lower/upper empirical quantiles of one score set."""

    q_low: float
    q_high: float

    def __post_init__(self):
        if self.q_low > self.q_high:
            raise DataError(f"q_low {self.q_low} exceeds q_high {self.q_high}")


def empirical_quantile(values, p: float) -> float:
    """Higher nearest-rank quantile: the ceil(p*m)-th smallest of m values."""
    values = list(values)
    if not values:
        raise DataError("cannot take a quantile of an empty sequence")
    if not 0.0 < p <= 1.0:
        raise DataError(f"quantile level must lie in (0, 1], got {p}")
    k = math.ceil(p * len(values))
    return float(sorted(values)[k - 1])


def quantile_pair(values, p_low: float, p_high: float) -> QuantilePair:
    if p_low > p_high:
        raise DataError(f"p_low {p_low} exceeds p_high {p_high}")
    return QuantilePair(empirical_quantile(values, p_low), empirical_quantile(values, p_high))


def conformal_threshold(scores, alpha: float) -> float:
    """The ceil((1-alpha)(n+1))-th smallest calibration score, +inf on overflow.

    The +1 inflation is what turns an empirical quantile into a finite-sample
    coverage guarantee; for small n the required index can exceed n, in which
    case only the vacuous interval is valid.
    """
    scores = list(scores)
    n = len(scores)
    if n < 1:
        raise DataError("conformal threshold needs at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    k = math.ceil((1.0 - alpha) * (n + 1))
    if k > n:
        return math.inf
    return float(sorted(scores)[k - 1])


def nonconformity_residual(predicted: float, truth: float) -> float:
    return abs(truth - predicted)


def nonconformity_locally_weighted(predicted: float, sigma: float, truth: float) -> float:
    if sigma <= 0.0:
        raise DataError(f"sigma must be positive, got {sigma}")
    return abs(truth - predicted) / sigma


def nonconformity_cqr(q: QuantilePair, truth: float) -> float:
    """Signed distance from the truth to the quantile band (negative inside)."""
    return max(q.q_low - truth, truth - q.q_high)


@dataclass(frozen=True)
class CalibrationRecord:
    """One calibration case: its score set and the true quality score."""

    id: str
    score_set: ScoreSet
    true_score: float


@dataclass(frozen=True)
class ConformalCalibration:
    """Everything needed to turn a new score set into a prediction interval."""

    alpha: float
    p_low: float
    p_high: float
    q_hat: float
    n: int
    kind: str = "cqr_empirical"
    created_from: str = ""

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DataError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("p_low", "p_high"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DataError(f"{name} must lie in (0, 1], got {v}")
        if self.p_low > self.p_high:
            raise DataError(f"p_low {self.p_low} exceeds p_high {self.p_high}")
        if self.kind not in NONCONFORMITY_KINDS:
            raise DataError(f"kind must be one of {NONCONFORMITY_KINDS}, got {self.kind!r}")
        if self.n < 1:
            raise DataError(f"calibration size must be >= 1, got {self.n}")
        finite_expected = math.ceil((1.0 - self.alpha) * (self.n + 1)) <= self.n
        if math.isinf(self.q_hat) == finite_expected:
            raise DataError(
                f"q_hat={self.q_hat} inconsistent with alpha={self.alpha}, n={self.n}"
            )

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "p_low": self.p_low,
            "p_high": self.p_high,
            "q_hat": None if math.isinf(self.q_hat) else self.q_hat,
            "n": self.n,
            "kind": self.kind,
            "created_from": self.created_from,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ConformalCalibration":
        try:
            q_hat = data["q_hat"]
            return cls(
                alpha=float(data["alpha"]),
                p_low=float(data["p_low"]),
                p_high=float(data["p_high"]),
                q_hat=math.inf if q_hat is None else float(q_hat),
                n=int(data["n"]),
                kind=data.get("kind", "cqr_empirical"),
                created_from=data.get("created_from", ""),
            )
        except KeyError as exc:
            raise DataError(f"calibration JSON missing field {exc}")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ConformalCalibration":
        try:
            return cls.from_json_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load calibration from {path}: {exc}")


def _point_and_spread(score_set: ScoreSet):
    values = np.asarray(score_set.scores, dtype=np.float64)
    return float(values.mean()), float(values.std())


def _record_score(record: CalibrationRecord, p_low: float, p_high: float, kind: str) -> float:
    y = record.true_score
    if kind == "cqr_empirical":
        return nonconformity_cqr(quantile_pair(record.score_set.scores, p_low, p_high), y)
    predicted, sigma = _point_and_spread(record.score_set)
    if kind == "residual":
        return nonconformity_residual(predicted, y)
    return nonconformity_locally_weighted(predicted, sigma, y)


def calibrate(
    records,
    alpha: float,
    p_low: float = 0.4,
    p_high: float = 0.95,
    kind: str = "cqr_empirical",
    created_from: str = "",
) -> ConformalCalibration:
    """Compute nonconformity scores for every calibration record and the threshold."""
    records = list(records)
    if not records:
        raise DataError("calibration needs at least one record")
    if kind not in NONCONFORMITY_KINDS:
        raise DataError(f"kind must be one of {NONCONFORMITY_KINDS}, got {kind!r}")
    scores = [_record_score(r, p_low, p_high, kind) for r in records]
    q_hat = conformal_threshold(scores, alpha)
    return ConformalCalibration(alpha, p_low, p_high, q_hat, len(records), kind, created_from)


@dataclass(frozen=True)
class PredictionInterval:
    """A clipped quality interval; raw bounds are kept for diagnostics.

    ``degenerate`` marks intervals whose raw bounds crossed (possible when
    q_hat is negative); they collapse to the midpoint and count as covering
    only on exact equality.
    """

    lower: float
    upper: float
    raw_lower: float
    raw_upper: float
    degenerate: bool = False

    def __post_init__(self):
        lo, hi = SCORE_RANGE
        if not (lo <= self.lower <= self.upper <= hi):
            raise DataError(
                f"clipped interval must satisfy {lo} <= lower <= upper <= {hi}, "
                f"got [{self.lower}, {self.upper}]"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, truth: float) -> bool:
        return self.lower <= truth <= self.upper


def _clip(x: float) -> float:
    return min(max(x, SCORE_RANGE[0]), SCORE_RANGE[1])


def predict_interval(score_set: ScoreSet, calib: ConformalCalibration) -> PredictionInterval:
    """Build the conformalized interval for a new case's score set."""
    if math.isinf(calib.q_hat):
        return PredictionInterval(*SCORE_RANGE, -math.inf, math.inf)

    if calib.kind == "cqr_empirical":
        qp = quantile_pair(score_set.scores, calib.p_low, calib.p_high)
        raw_lower = qp.q_low - calib.q_hat
        raw_upper = qp.q_high + calib.q_hat
    else:
        predicted, sigma = _point_and_spread(score_set)
        half = calib.q_hat if calib.kind == "residual" else calib.q_hat * sigma
        raw_lower = predicted - half
        raw_upper = predicted + half

    if raw_lower > raw_upper:
        mid = _clip((raw_lower + raw_upper) / 2.0)
        return PredictionInterval(mid, mid, raw_lower, raw_upper, degenerate=True)
    return PredictionInterval(_clip(raw_lower), _clip(raw_upper), raw_lower, raw_upper)


def empirical_coverage(intervals, truths) -> float:
    """Fraction of truths inside their interval (bounds inclusive)."""
    intervals = list(intervals)
    truths = list(truths)
    if not intervals or len(intervals) != len(truths):
        raise DataError("need equally many intervals and truths, both nonempty")
    hits = sum(1 for iv, y in zip(intervals, truths) if iv.covers(y))
    return hits / len(intervals)
