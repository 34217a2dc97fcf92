"""Reverse-accuracy scoring: estimate prediction quality without ground truth.

The predicted mask under assessment is used as pseudo-ground truth to
segment every image in an annotated reference database; each transferred
segmentation is scored against that reference's real annotation. A good
prediction lets the reverse segmenter do well on at least some references,
so the score set (its max or mean) tracks the quality of the prediction.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .dataset import ReferenceDatabase
from .errors import DataError
from .image import GrayImage, LabelMask
from .metrics import EvaluationMetric

POINT_ESTIMATE_MODES = ("max", "mean")


@dataclass(frozen=True)
class ScoreSet:
    """Per-reference scores from one reverse-accuracy run."""

    entries: tuple  # ((reference_id, score), ...)
    metric: EvaluationMetric

    def __post_init__(self):
        entries = tuple((str(i), float(s)) for i, s in self.entries)
        if not entries:
            raise DataError("score set must be nonempty")
        if self.metric is EvaluationMetric.DSC:
            bad = [(i, s) for i, s in entries if not 0.0 <= s <= 1.0]
            if bad:
                raise DataError(f"DSC scores must lie in [0, 1], got {bad[:3]}")
        object.__setattr__(self, "entries", entries)

    @property
    def ids(self) -> list:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RcaRequest:
    """Inputs for one reverse-accuracy evaluation."""

    target: GrayImage
    prediction: LabelMask
    segmenter: object  # ReverseSegmenter
    references: ReferenceDatabase
    metric: EvaluationMetric = EvaluationMetric.DSC

    def __post_init__(self):
        if (self.target.width, self.target.height) != (
            self.prediction.width,
            self.prediction.height,
        ):
            raise DataError("target image and predicted mask dimensions differ")


def rca_scores(req: RcaRequest, max_workers: int = 1) -> ScoreSet:
    """Score the reverse segmenter against every reference record.

    Entry order matches the reference order. A failure on any reference
    aborts the whole request (silently dropping references would bias the
    downstream calibration quantiles).
    """

    def one(record):
        try:
            transferred = req.segmenter.segment(
                req.target, req.prediction, record.image, query_id=record.id
            )
            return record.id, req.metric.score(transferred, record.gt_mask)
        except Exception as exc:
            raise DataError(f"reverse segmentation failed for reference {record.id!r}: {exc}") from exc

    records = req.references.records
    if max_workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            entries = list(pool.map(one, records))
    else:
        entries = [one(r) for r in records]
    return ScoreSet(tuple(entries), req.metric)


def rca_point_estimate(scores: ScoreSet, mode: str = "max") -> float:
    """Collapse a score set to a single quality estimate (max or mean)."""
    if mode not in POINT_ESTIMATE_MODES:
        raise DataError(f"mode must be one of {POINT_ESTIMATE_MODES}, got {mode!r}")
    values = scores.scores
    if mode == "max":
        return float(max(values))
    return float(sum(values) / len(values))
