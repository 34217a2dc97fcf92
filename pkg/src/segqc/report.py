"""Evaluation summaries: predicted-vs-true agreement and interval statistics.

Reports are plot-ready: the CSV rows reproduce scatter and coverage panels
in any plotting stack, and the JSON form round-trips losslessly.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conformal import empirical_quantile
from .errors import DataError

CSV_COLUMNS = ("id", "predicted", "true", "lower", "upper", "covered", "width")


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient."""
    xs = np.asarray(list(xs), dtype=np.float64)
    ys = np.asarray(list(ys), dtype=np.float64)
    if xs.size != ys.size or xs.size < 2:
        raise DataError("pearson needs two equal-length sequences of at least 2 values")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        raise DataError("pearson undefined when either sequence has zero variance")
    return float(dx @ dy / denom)


def mae(xs, ys) -> float:
    """Mean absolute difference."""
    xs = np.asarray(list(xs), dtype=np.float64)
    ys = np.asarray(list(ys), dtype=np.float64)
    if xs.size != ys.size or xs.size < 1:
        raise DataError("mae needs two equal-length nonempty sequences")
    return float(np.mean(np.abs(xs - ys)))


def width_stats(intervals):
    """(median, q25, q75) of clipped interval widths, higher nearest-rank."""
    widths = [iv.width for iv in intervals]
    if not widths:
        raise DataError("width_stats needs at least one interval")
    return (
        empirical_quantile(widths, 0.5),
        empirical_quantile(widths, 0.25),
        empirical_quantile(widths, 0.75),
    )


@dataclass(frozen=True)
class ReportPair:
    """One evaluated case; interval bounds are optional."""

    id: str
    predicted: float
    true: float
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if (self.lower is None) != (self.upper is None):
            raise DataError(f"pair {self.id!r}: lower and upper must be given together")

    @property
    def covered(self) -> bool | None:
        if self.lower is None:
            return None
        return self.lower <= self.true <= self.upper

    @property
    def width(self) -> float | None:
        if self.lower is None:
            return None
        return self.upper - self.lower


@dataclass(frozen=True)
class EvaluationReport:
    pairs: tuple

    def __post_init__(self):
        pairs = tuple(self.pairs)
        if not pairs:
            raise DataError("report needs at least one pair")
        object.__setattr__(self, "pairs", pairs)

    def summary(self) -> dict:
        """Aggregate statistics, always recomputed from the pairs."""
        predicted = [p.predicted for p in self.pairs]
        true = [p.true for p in self.pairs]
        try:
            correlation = pearson(predicted, true)
        except DataError:
            correlation = None
        with_iv = [p for p in self.pairs if p.lower is not None]
        coverage = (
            sum(1 for p in with_iv if p.covered) / len(with_iv) if with_iv else None
        )
        if with_iv:
            median, q25, q75 = (
                empirical_quantile([p.width for p in with_iv], q) for q in (0.5, 0.25, 0.75)
            )
        else:
            median = q25 = q75 = None
        return {
            "correlation": correlation,
            "mae": mae(predicted, true),
            "coverage": coverage,
            "width_median": median,
            "width_q25": q25,
            "width_q75": q75,
        }

    def to_json_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "id": p.id,
                    "predicted": p.predicted,
                    "true": p.true,
                    "lower": p.lower,
                    "upper": p.upper,
                    "covered": p.covered,
                    "width": p.width,
                }
                for p in self.pairs
            ],
            "summary": self.summary(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "EvaluationReport":
        pairs = tuple(
            ReportPair(p["id"], p["predicted"], p["true"], p.get("lower"), p.get("upper"))
            for p in data["pairs"]
        )
        return cls(pairs)


def emit(report: EvaluationReport, format: str, path) -> None:
    """Serialize a report to JSON or CSV (columns: id, predicted, true,
    lower, upper, covered, width)."""
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n")
        return
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for p in report.pairs:
                writer.writerow(
                    [
                        p.id,
                        repr(p.predicted),
                        repr(p.true),
                        "" if p.lower is None else repr(p.lower),
                        "" if p.upper is None else repr(p.upper),
                        "" if p.covered is None else str(p.covered).lower(),
                        "" if p.width is None else repr(p.width),
                    ]
                )
        return
    raise DataError(f"unknown report format {format!r}; use 'json' or 'csv'")


def load_report(path) -> EvaluationReport:
    """Parse a JSON report back (the inverse of emit(..., 'json', ...))."""
    try:
        return EvaluationReport.from_json_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load report from {path}: {exc}")
