"""Reverse segmenters: transfer a pseudo-ground-truth mask onto new images.

Two implementations of the same single-method contract:

* ``AtlasSegmenter`` registers the target image to the query with a 6-DOF
  affine transform (multi-resolution descent on mean squared intensity
  difference) and warps the pseudo-ground-truth through it.
* ``ExternalSegmenter`` ingests masks produced by any outside model via a
  JSON manifest mapping query ids to mask files.

Both are deterministic given their inputs and configuration, and safe to
call concurrently for different queries.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import DataError
from .image import GrayImage, LabelMask, load_mask


@dataclass(frozen=True)
class AffineTransform2D:
    """Maps query coordinates (x, y) to atlas coordinates.

    (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)
    """

    a: float
    b: float
    c: float
    d: float
    tx: float
    ty: float

    def __post_init__(self):
        coeffs = (self.a, self.b, self.c, self.d, self.tx, self.ty)
        if not all(math.isfinite(v) for v in coeffs):
            raise DataError(f"affine coefficients must be finite, got {coeffs}")

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

    def apply(self, xs: np.ndarray, ys: np.ndarray):
        u = self.a * xs + self.b * ys + self.tx
        v = self.c * xs + self.d * ys + self.ty
        return u, v


@dataclass(frozen=True)
class AtlasConfig:
    """Registration budget and step sizes.

    Pyramid levels downsample by 2**(level-1)..1 (3 levels: x4, x2, x1).
    The descent proposes normalized-gradient steps and halves the step size
    whenever a proposal fails to improve the objective.
    """

    pyramid_levels: int = 3
    iterations_per_level: int = 100
    fd_step: float = 1e-3
    initial_step: float = 0.1
    min_step: float = 1e-6

    def __post_init__(self):
        for name in ("pyramid_levels", "iterations_per_level", "fd_step", "initial_step", "min_step"):
            if getattr(self, name) <= 0:
                raise DataError(f"AtlasConfig.{name} must be positive")


class ReverseSegmenter(Protocol):
    def segment(
        self,
        target: GrayImage,
        pseudo_gt: LabelMask,
        query: GrayImage,
        query_id: str | None = None,
    ) -> LabelMask: ...


def _sample_bilinear(arr: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample arr at fractional (x=u, y=v), clamping coordinates to the edges."""
    h, w = arr.shape
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bot = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _downsample(arr: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool by an integer factor, edge-replicating to a divisible size."""
    if factor == 1:
        return arr
    h, w = arr.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        arr = np.pad(arr, ((0, ph), (0, pw)), mode="edge")
    h2, w2 = arr.shape
    return arr.reshape(h2 // factor, factor, w2 // factor, factor).mean(axis=(1, 3))


class _LevelProblem:
    """One pyramid level: evaluates the MSE objective for parameter vectors.

    Parameters are (alpha, beta, gamma, delta, u, v) about the image center
    with the linear part scaled by half the larger image dimension, so a unit
    change in any parameter moves the farthest pixel by about one pixel.
    """

    def __init__(self, atlas: np.ndarray, query: np.ndarray):
        self.atlas = atlas
        h, w = query.shape
        self.query_flat = query.ravel()
        ys, xs = np.mgrid[0:h, 0:w]
        self.xs = xs.ravel().astype(np.float64)
        self.ys = ys.ravel().astype(np.float64)
        self.cx = (w - 1) / 2.0
        self.cy = (h - 1) / 2.0
        self.scale = max(w, h) / 2.0

    def to_absolute(self, p: np.ndarray) -> np.ndarray:
        """Center-relative parameters -> absolute (a, b, c, d, tx, ty) rows."""
        p = np.atleast_2d(p)
        a = 1.0 + p[:, 0] / self.scale
        b = p[:, 1] / self.scale
        c = p[:, 2] / self.scale
        d = 1.0 + p[:, 3] / self.scale
        tx = self.cx - (a * self.cx + b * self.cy) + p[:, 4]
        ty = self.cy - (c * self.cx + d * self.cy) + p[:, 5]
        return np.stack([a, b, c, d, tx, ty], axis=1)

    def from_absolute(self, abs6) -> np.ndarray:
        a, b, c, d, tx, ty = abs6
        u = tx - self.cx + (a * self.cx + b * self.cy)
        v = ty - self.cy + (c * self.cx + d * self.cy)
        return np.array([
            (a - 1.0) * self.scale, b * self.scale,
            c * self.scale, (d - 1.0) * self.scale,
            u, v,
        ])

    def objective(self, p: np.ndarray) -> np.ndarray:
        """MSE for each parameter row (batched for finite differences)."""
        rows = self.to_absolute(p)
        u = rows[:, 0:1] * self.xs + rows[:, 1:2] * self.ys + rows[:, 4:5]
        v = rows[:, 2:3] * self.xs + rows[:, 3:4] * self.ys + rows[:, 5:6]
        sampled = _sample_bilinear(self.atlas, u, v)
        diff = sampled - self.query_flat
        return np.mean(diff * diff, axis=1)


def _descend(problem: _LevelProblem, p: np.ndarray, cfg: AtlasConfig, trace=None, level=0):
    """Normalized-gradient descent with step halving; objective never increases."""
    energy = float(problem.objective(p)[0])
    if trace is not None:
        trace.append((level, 0, energy))
    step = cfg.initial_step
    h = cfg.fd_step
    eye = np.eye(6)
    for it in range(1, cfg.iterations_per_level + 1):
        probes = np.concatenate([p + h * eye, p - h * eye], axis=0)
        vals = problem.objective(probes)
        grad = (vals[:6] - vals[6:]) / (2.0 * h)
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            break
        proposal = p - (step / norm) * grad
        prop_energy = float(problem.objective(proposal)[0])
        if prop_energy < energy:
            p = proposal
            energy = prop_energy
            if trace is not None:
                trace.append((level, it, energy))
        else:
            step *= 0.5
            if step < cfg.min_step:
                break
    return p, energy


def _conjugate_to_finer(abs6: np.ndarray, ratio: float) -> np.ndarray:
    # Coarse pixel i maps to fine coordinate ratio*i + (ratio-1)/2; conjugating
    # the transform by that change of coordinates keeps the linear part and
    # rescales the translation.
    a, b, c, d, tx, ty = abs6
    off = (ratio - 1.0) / 2.0
    return np.array([
        a, b, c, d,
        ratio * tx + off * (1.0 - a - b),
        ratio * ty + off * (1.0 - c - d),
    ])


def atlas_register(
    atlas: GrayImage,
    query: GrayImage,
    cfg: AtlasConfig = AtlasConfig(),
    trace: list | None = None,
) -> AffineTransform2D:
    """Find the affine transform minimizing MSE between atlas∘T and query.

    Coarse-to-fine over an average-pooled pyramid; each level runs a fixed
    budget of finite-difference gradient steps. When ``trace`` is given it
    collects (level, iteration, objective) for every accepted state.
    """
    if (atlas.width, atlas.height) != (query.width, query.height):
        raise DataError(
            f"registration requires equal dimensions, got "
            f"{atlas.width}x{atlas.height} vs {query.width}x{query.height}"
        )
    factors = [2 ** (cfg.pyramid_levels - 1 - i) for i in range(cfg.pyramid_levels)]
    abs6 = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    prev_factor = None
    for level, factor in enumerate(factors):
        if prev_factor is not None:
            abs6 = _conjugate_to_finer(abs6, prev_factor / factor)
        problem = _LevelProblem(
            _downsample(atlas.pixels, factor), _downsample(query.pixels, factor)
        )
        p = problem.from_absolute(abs6)
        p, _ = _descend(problem, p, cfg, trace=trace, level=level)
        abs6 = problem.to_absolute(p)[0]
        prev_factor = factor
    return AffineTransform2D(*abs6)


def warp_mask(pseudo_gt: LabelMask, t: AffineTransform2D, out_w: int, out_h: int) -> LabelMask:
    """Pull labels through the transform with nearest-neighbor lookup.

    Output pixel (x, y) takes the label at the nearest integer of T(x, y);
    coordinates falling outside the mask become background (0).
    """
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    u, v = t.apply(xs.astype(np.float64), ys.astype(np.float64))
    iu = np.floor(u + 0.5).astype(np.int64)
    iv = np.floor(v + 0.5).astype(np.int64)
    inside = (iu >= 0) & (iu < pseudo_gt.width) & (iv >= 0) & (iv < pseudo_gt.height)
    out = np.zeros((out_h, out_w), dtype=np.int32)
    out[inside] = pseudo_gt.labels[iv[inside], iu[inside]]
    return LabelMask(out, pseudo_gt.class_count)


def atlas_segment(
    target: GrayImage,
    pseudo_gt: LabelMask,
    query: GrayImage,
    cfg: AtlasConfig = AtlasConfig(),
) -> LabelMask:
    """Register target to query, then transfer the pseudo-ground truth."""
    if (target.width, target.height) != (pseudo_gt.width, pseudo_gt.height):
        raise DataError("target image and pseudo ground truth dimensions differ")
    t = atlas_register(target, query, cfg)
    return warp_mask(pseudo_gt, t, query.width, query.height)


class AtlasSegmenter:
    """Built-in reverse segmenter: affine registration + label transfer."""

    def __init__(self, cfg: AtlasConfig = AtlasConfig()):
        self.cfg = cfg

    def segment(self, target, pseudo_gt, query, query_id=None) -> LabelMask:
        return atlas_segment(target, pseudo_gt, query, self.cfg)


@dataclass(frozen=True)
class ExternalManifest:
    """Maps query ids to mask files produced by an outside segmenter."""

    entries: dict  # id -> Path
    class_count: int


def load_external_manifest(path, class_count: int) -> ExternalManifest:
    """Read a JSON object of {id: mask-path}; relative paths resolve beside it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {path}: {exc.msg}")
    if not isinstance(raw, dict) or not all(isinstance(v, str) for v in raw.values()):
        raise DataError(f"manifest {path} must be a JSON object mapping id to mask path")
    base = path.parent
    entries = {k: (base / v if not Path(v).is_absolute() else Path(v)) for k, v in raw.items()}
    return ExternalManifest(entries, class_count)


def external_segment(
    manifest: ExternalManifest,
    query_id: str,
    expected_width: int | None = None,
    expected_height: int | None = None,
) -> LabelMask:
    """Load and validate the externally produced mask for one query id."""
    if query_id not in manifest.entries:
        raise DataError(f"no external mask registered for id {query_id!r}")
    mask = load_mask(manifest.entries[query_id], manifest.class_count)
    if expected_width is not None and (mask.width, mask.height) != (expected_width, expected_height):
        raise DataError(
            f"external mask for {query_id!r} is {mask.width}x{mask.height}, "
            f"expected {expected_width}x{expected_height}"
        )
    return mask


class ExternalSegmenter:
    """Reverse segmenter backed by precomputed masks from a manifest."""

    def __init__(self, manifest: ExternalManifest):
        self.manifest = manifest

    def segment(self, target, pseudo_gt, query, query_id=None) -> LabelMask:
        if query_id is None:
            raise DataError("external segmenter needs the query id to look up its mask")
        mask = external_segment(self.manifest, query_id, query.width, query.height)
        if mask.class_count != pseudo_gt.class_count:
            raise DataError(
                f"external mask for {query_id!r} has class_count {mask.class_count}, "
                f"expected {pseudo_gt.class_count}"
            )
        return mask
