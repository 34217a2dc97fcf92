"""Synthetic coverage experiments and mask degradation utilities.

The controlled experiment draws true quality scores from Beta(2, 2), builds
each case's score set by adding clipped Gaussian noise around the truth, and
runs the full calibrate/predict cycle. Calibration and test cases are i.i.d.
by construction, so exchangeability holds exactly and the measured coverage
must meet the 1 - alpha target (up to Monte-Carlo error). That isolates the
conformal machinery from any real reverse-segmenter behavior.

Determinism: everything is driven by the xorshift64* stream in ``rng``;
Beta(2, 2) variates are the median of three uniforms (the order-statistic
identity for Beta(k, n+1-k) of n uniforms), Gaussians come from Box-Muller.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationRecord, calibrate, empirical_coverage, predict_interval
from .errors import DataError
from .image import GrayImage, LabelMask
from .metrics import EvaluationMetric
from .rca import ScoreSet
from .rng import Xorshift64Star


@dataclass(frozen=True)
class SyntheticConfig:
    n_cal: int = 200
    n_test: int = 2000
    ref_size: int = 32
    noise_sigma: float = 0.1
    alpha: float = 0.1
    p_low: float = 0.4
    p_high: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if min(self.n_cal, self.n_test, self.ref_size) < 1:
            raise DataError("n_cal, n_test and ref_size must all be >= 1")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def sample_beta22(rng: Xorshift64Star) -> float:
    """Beta(2, 2) variate: the median of three independent uniforms."""
    a = rng.random()
    b = rng.random()
    c = rng.random()
    return a + b + c - min(a, b, c) - max(a, b, c)


def synth_score_set(y_true: float, m: int, sigma: float, rng: Xorshift64Star) -> ScoreSet:
    """m noisy copies of the true score, clipped to [0, 1]."""
    if not 0.0 <= y_true <= 1.0:
        raise DataError(f"y_true must lie in [0, 1], got {y_true}")
    entries = tuple(
        (f"r{i}", min(max(y_true + rng.normal(0.0, sigma), 0.0), 1.0)) for i in range(m)
    )
    return ScoreSet(entries, EvaluationMetric.DSC)


def run_synthetic_trial(cfg: SyntheticConfig):
    """One end-to-end trial; returns (empirical coverage, mean clipped width)."""
    rng = Xorshift64Star(cfg.seed)

    records = []
    for j in range(cfg.n_cal):
        y = sample_beta22(rng)
        records.append(
            CalibrationRecord(f"c{j}", synth_score_set(y, cfg.ref_size, cfg.noise_sigma, rng), y)
        )
    calib = calibrate(records, cfg.alpha, cfg.p_low, cfg.p_high)

    intervals, truths = [], []
    for _ in range(cfg.n_test):
        y = sample_beta22(rng)
        intervals.append(
            predict_interval(synth_score_set(y, cfg.ref_size, cfg.noise_sigma, rng), calib)
        )
        truths.append(y)

    coverage = empirical_coverage(intervals, truths)
    mean_width = float(np.mean([iv.width for iv in intervals]))
    return coverage, mean_width


def _shift(labels: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(labels)
    h, w = labels.shape
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    ys_dst = slice(max(0, dy), min(h, h + dy))
    xs_dst = slice(max(0, dx), min(w, w + dx))
    out[ys_dst, xs_dst] = labels[ys_src, xs_src]
    return out


def _neighbors(fg: np.ndarray):
    # up, down, left, right with out-of-image treated as background
    padded = np.pad(fg, 1, mode="constant", constant_values=False)
    return padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:]


def degrade_mask(mask: LabelMask, severity: int, rng: Xorshift64Star) -> LabelMask:
    """Apply ``severity`` random rounds of 1-px erosion, dilation, or translation.

    Severity 0 is the identity. Erosion/dilation act on the union foreground
    (labels > 0); dilated pixels copy the first foreground neighbor in the
    fixed order up, down, left, right.
    """
    if severity < 0:
        raise DataError(f"severity must be >= 0, got {severity}")
    labels = mask.labels.copy()
    directions = ((1, 0), (-1, 0), (0, 1), (0, -1))
    for _ in range(severity):
        op = rng.randbelow(3)
        fg = labels > 0
        if op == 0:  # erode
            up, down, left, right = _neighbors(fg)
            keep = fg & up & down & left & right
            labels = np.where(keep, labels, 0)
        elif op == 1:  # dilate
            grown = np.zeros_like(labels)
            for dx, dy in ((0, -1), (0, 1), (-1, 0), (1, 0)):
                neighbor = _shift(labels, dx, dy)
                grown = np.where((grown == 0) & (neighbor > 0), neighbor, grown)
            labels = np.where(fg, labels, grown)
        else:  # translate 1 px
            dx, dy = directions[rng.randbelow(4)]
            labels = _shift(labels, dx, dy)
    return LabelMask(labels, mask.class_count)


def disk_phantom(
    width: int,
    height: int,
    cx: float,
    cy: float,
    rx: float,
    ry: float | None = None,
) -> tuple:
    """A cone-intensity ellipse phantom with its half-level mask.

    The intensity ramps from 1 at the center to 0 at the ellipse boundary,
    which gives intensity gradients everywhere inside the structure; the
    mask covers the region where intensity >= 0.5.
    """
    if ry is None:
        ry = rx
    ys, xs = np.mgrid[0:height, 0:width]
    dist = np.sqrt(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)
    intensity = np.clip(1.0 - dist, 0.0, 1.0)
    mask = (dist <= 0.5).astype(np.int32)
    return GrayImage(intensity), LabelMask(mask, 2)
