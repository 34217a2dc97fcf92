"""Segmentation agreement metrics: Dice overlap and boundary distances.

The Dice coefficient is 2|A∩B| / (|A| + |B|) over foreground pixels.
Distance metrics operate on boundary pixels (foreground pixels with at
least one 4-neighbor outside the foreground; image borders count as
outside), with exact Euclidean distances between pixel centers computed
via a distance transform.
"""
from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import DataError, UndefinedMetricError
from .image import LabelMask


class EvaluationMetric(Enum):
    """Agreement metric between a predicted and a reference mask."""

    DSC = "dsc"
    HAUSDORFF = "hausdorff"
    ASSD = "assd"

    def score(self, pred: LabelMask, gt: LabelMask) -> float:
        if self is EvaluationMetric.DSC:
            return dsc_multiclass(pred, gt)
        fn = hausdorff if self is EvaluationMetric.HAUSDORFF else assd
        _check_pair(pred, gt)
        values = [
            fn(pred.binary(c), gt.binary(c)) for c in range(1, pred.class_count)
        ]
        return float(np.mean(values))


def _check_pair(pred: LabelMask, gt: LabelMask, binary: bool = False) -> None:
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise DataError(
            f"mask dimensions differ: {pred.width}x{pred.height} vs {gt.width}x{gt.height}"
        )
    if binary:
        if pred.labels.max() > 1 or gt.labels.max() > 1:
            raise DataError("binary metric requires labels in {0, 1}")
    elif pred.class_count != gt.class_count:
        raise DataError(
            f"class counts differ: {pred.class_count} vs {gt.class_count}"
        )


def dsc_binary(pred: LabelMask, gt: LabelMask) -> float:
    """Dice coefficient of two binary masks.

    Both foregrounds empty counts as perfect agreement (1.0); exactly one
    empty counts as total disagreement (0.0).
    """
    _check_pair(pred, gt, binary=True)
    a = pred.labels != 0
    b = gt.labels != 0
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def dsc_multiclass(pred: LabelMask, gt: LabelMask) -> float:
    """Unweighted macro-average of per-class Dice over foreground classes."""
    _check_pair(pred, gt)
    scores = [
        dsc_binary(pred.binary(c), gt.binary(c)) for c in range(1, pred.class_count)
    ]
    return float(np.mean(scores))


def boundary_pixels(fg: np.ndarray) -> np.ndarray:
    """Boolean map of foreground pixels with a 4-neighbor outside the foreground."""
    padded = np.pad(fg, 1, mode="constant", constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return fg & ~interior


def _directed_boundary_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    # Distances from every boundary pixel of src to the nearest boundary pixel
    # of dst; the EDT gives exact Euclidean distances to the nearest True pixel.
    dist_to_dst = distance_transform_edt(~dst)
    return dist_to_dst[src]


def _boundaries(pred: LabelMask, gt: LabelMask):
    _check_pair(pred, gt, binary=True)
    a = pred.labels != 0
    b = gt.labels != 0
    if not a.any() or not b.any():
        raise UndefinedMetricError("distance metrics require nonempty foregrounds")
    return boundary_pixels(a), boundary_pixels(b)


def hausdorff(pred: LabelMask, gt: LabelMask) -> float:
    """Hausdorff distance between the two mask boundaries, in pixels."""
    ba, bb = _boundaries(pred, gt)
    d_ab = _directed_boundary_distances(ba, bb)
    d_ba = _directed_boundary_distances(bb, ba)
    return float(max(d_ab.max(), d_ba.max()))


def assd(pred: LabelMask, gt: LabelMask) -> float:
    """Average symmetric surface distance between the mask boundaries."""
    ba, bb = _boundaries(pred, gt)
    d_ab = _directed_boundary_distances(ba, bb)
    d_ba = _directed_boundary_distances(bb, ba)
    return float((d_ab.sum() + d_ba.sum()) / (d_ab.size + d_ba.size))
