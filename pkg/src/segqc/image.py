"""Grayscale images, label masks, PNG I/O and resizing.

Images hold normalized float intensities in [0, 1]; masks hold integer
class labels in [0, class_count). Both are immutable after construction
and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

# Rec. 601 luma weights for color-to-gray conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Default working resolution applied by the pipelines before processing.
DEFAULT_SIZE = 256


@dataclass(frozen=True)
class GrayImage:
    """A 2-D grayscale raster with intensities in [0, 1]."""

    pixels: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"image must be a nonempty 2-D array, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("image intensities must lie in [0, 1]")
        if not arr.flags.owndata:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class LabelMask:
    """A 2-D integer label map; label 0 is background."""

    labels: np.ndarray  # int32, shape (height, width)
    class_count: int

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2 or arr.size == 0:
            raise DataError(f"mask must be a nonempty 2-D array, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise DataError("mask labels must be integers")
        arr = arr.astype(np.int32)
        if self.class_count < 2:
            raise DataError(f"class_count must be >= 2, got {self.class_count}")
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= self.class_count:
            raise DataError(
                f"labels must lie in [0, {self.class_count}), found range [{lo}, {hi}]"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def binary(self, label: int) -> "LabelMask":
        """One-vs-rest mask for a single class."""
        return LabelMask((self.labels == label).astype(np.int32), 2)


def load_image(path) -> GrayImage:
    """Load a raster file as a normalized grayscale image.

    8-bit inputs are divided by 255, 16-bit by 65535; color inputs are
    converted to luma with Rec. 601 weights first.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            arr = np.asarray(im)
    except DataError:
        raise
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except Exception as exc:
        raise DataError(f"unreadable image file {path}: {exc}")

    if mode == "L":
        return GrayImage(arr.astype(np.float64) / 255.0)
    if mode in ("I;16", "I"):
        return GrayImage(arr.astype(np.float64) / 65535.0)
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64)
        luma = rgb @ np.asarray(LUMA_WEIGHTS)
        return GrayImage(np.clip(luma / 255.0, 0.0, 1.0))
    raise DataError(f"unsupported raster mode {mode!r} in {path}")


def save_image(img: GrayImage, path) -> None:
    """Write an image as 8-bit grayscale PNG (intensity * 255, rounded)."""
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_mask(path, class_count: int) -> LabelMask:
    """Load a raster file whose pixel values are label indices."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except FileNotFoundError:
        raise DataError(f"mask file not found: {path}")
    except Exception as exc:
        raise DataError(f"unreadable mask file {path}: {exc}")

    if mode not in ("L", "P", "I;16", "I"):
        raise DataError(f"mask file must be single-channel, got mode {mode!r} in {path}")
    return LabelMask(arr.astype(np.int64), class_count)


def save_mask(mask: LabelMask, path) -> None:
    """Write a mask as 8-bit grayscale PNG (label = pixel value)."""
    if mask.class_count > 256:
        raise DataError("cannot store more than 256 classes in an 8-bit PNG")
    data = mask.labels.astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # Pixel-center mapping; reduces to the identity when n_out == n_in.
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(img: GrayImage, w: int, h: int) -> GrayImage:
    """Resample an image to (w, h) with bilinear interpolation, edges clamped."""
    if w < 1 or h < 1:
        raise DataError(f"target size must be >= 1, got {w}x{h}")
    if w == img.width and h == img.height:
        return img
    src = img.pixels
    sx = _source_coords(w, img.width)
    sy = _source_coords(h, img.height)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, img.width - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, img.height - 1)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)

    top = src[np.ix_(y0, x0)] * (1 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1 - fx) + src[np.ix_(y1, x1)] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return GrayImage(np.clip(out, 0.0, 1.0))


def resize_nearest(mask: LabelMask, w: int, h: int) -> LabelMask:
    """Resample a mask to (w, h) with nearest-neighbor (labels stay categorical)."""
    if w < 1 or h < 1:
        raise DataError(f"target size must be >= 1, got {w}x{h}")
    if w == mask.width and h == mask.height:
        return mask
    # floor(x + 0.5): round-half-up, independent of banker's rounding.
    ix = np.clip(np.floor(_source_coords(w, mask.width) + 0.5).astype(np.int64), 0, mask.width - 1)
    iy = np.clip(np.floor(_source_coords(h, mask.height) + 0.5).astype(np.int64), 0, mask.height - 1)
    return LabelMask(mask.labels[np.ix_(iy, ix)], mask.class_count)
