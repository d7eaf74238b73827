"""Grayscale rasters and the pixel-level operations used to normalize and
compose glyph images: luminance conversion, tight crop, bilinear resize,
and the two horizontal join modes (edge-to-edge and overlapped)."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# Intensity convention: 1.0 = white paper, 0.0 = black ink.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ZeroDimensionError(ValueError):
    """Raster width or height is zero."""


class EmptyInkError(ValueError):
    """No pixel darker than the ink threshold."""


class HeightMismatchError(ValueError):
    """Horizontal join of rasters with different heights."""


class OverlapTooLargeError(ValueError):
    """Overlap not strictly inside both joined rasters."""


class UnreadableImageError(ValueError):
    """Image file could not be decoded; message carries the path."""


@dataclass(frozen=True, eq=False)
class GrayRaster:
    """2-D grid of intensities in [0, 1], row-major, immutable.

    pixels has shape (height, width) with float64 entries.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D pixel grid, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ZeroDimensionError(f"raster dimensions must be >= 1, got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must lie in [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class InkThreshold:
    """A pixel counts as ink iff its intensity is strictly below ``value``."""

    value: float = 0.98

    def __post_init__(self):
        if not 0.0 < self.value < 1.0:
            raise ValueError(f"ink threshold must lie in (0, 1), got {self.value}")


DEFAULT_INK_THRESHOLD = InkThreshold()


def to_grayscale(rgb: np.ndarray) -> GrayRaster:
    """Convert an (H, W, 3) array of [0,1] channel values to luminance."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {rgb.shape}")
    if rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise ZeroDimensionError(f"image dimensions must be >= 1, got {rgb.shape[:2]}")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise ValueError("channel values must lie in [0, 1]")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    # 0.299 R + 0.587 G + 0.114 B, rearranged so gray pixels map to
    # themselves exactly (the weights sum to 1 in the reals, not in floats).
    _, wg, wb = LUMA_WEIGHTS
    luma = r + wg * (g - r) + wb * (b - r)
    return GrayRaster(np.clip(luma, 0.0, 1.0))


def tight_crop(img: GrayRaster, threshold: InkThreshold = DEFAULT_INK_THRESHOLD) -> GrayRaster:
    """Minimal axis-aligned sub-rectangle containing every ink pixel."""
    ink = img.pixels < threshold.value
    rows = np.nonzero(ink.any(axis=1))[0]
    cols = np.nonzero(ink.any(axis=0))[0]
    if rows.size == 0:
        raise EmptyInkError(
            f"no pixel below ink threshold {threshold.value}; cannot crop an all-white raster"
        )
    return GrayRaster(img.pixels[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1])


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    # Endpoint-aligned sampling: output corners map onto input corners, so
    # resizing to the same size is the identity and constants stay constant.
    if n_out == 1:
        return np.array([(n_in - 1) / 2.0])
    return np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))


def resize(img: GrayRaster, out_w: int, out_h: int) -> GrayRaster:
    """Bilinear resize to exactly (out_w, out_h) pixels."""
    if out_w < 1 or out_h < 1:
        raise ZeroDimensionError(f"target dimensions must be >= 1, got {(out_w, out_h)}")
    src = img.pixels
    ys = _axis_coords(out_h, img.height)
    xs = _axis_coords(out_w, img.width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, img.height - 1)
    x1 = np.minimum(x0 + 1, img.width - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = (1.0 - wx) * src[np.ix_(y0, x0)] + wx * src[np.ix_(y0, x1)]
    bot = (1.0 - wx) * src[np.ix_(y1, x0)] + wx * src[np.ix_(y1, x1)]
    out = (1.0 - wy) * top + wy * bot
    return GrayRaster(np.clip(out, 0.0, 1.0))


def hjoin(left: GrayRaster, right: GrayRaster) -> GrayRaster:
    """Concatenate two equal-height rasters edge to edge."""
    if left.height != right.height:
        raise HeightMismatchError(f"heights differ: {left.height} vs {right.height}")
    return GrayRaster(np.concatenate([left.pixels, right.pixels], axis=1))


def hjoin_overlap(left: GrayRaster, right: GrayRaster, overlap: int) -> GrayRaster:
    """Concatenate with the right raster's first ``overlap`` columns laid over
    the left raster's last ones; overlapping pixels keep the darker value."""
    if left.height != right.height:
        raise HeightMismatchError(f"heights differ: {left.height} vs {right.height}")
    if not 0 < overlap < min(left.width, right.width):
        raise OverlapTooLargeError(
            f"overlap {overlap} must satisfy 0 < overlap < min({left.width}, {right.width})"
        )
    band = np.minimum(left.pixels[:, left.width - overlap :], right.pixels[:, :overlap])
    out = np.concatenate(
        [left.pixels[:, : left.width - overlap], band, right.pixels[:, overlap:]], axis=1
    )
    return GrayRaster(out)


def load_image(path: str | Path) -> GrayRaster:
    """Read a PNG (or any PIL-readable image) as a grayscale raster.

    8-bit grayscale files map intensity = byte / 255; color images go
    through the luminance conversion.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
                return GrayRaster(arr)
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            return to_grayscale(rgb)
    except (UnidentifiedImageError, OSError) as exc:
        raise UnreadableImageError(f"cannot read image {path}: {exc}") from exc


def save_image(img: GrayRaster, path: str | Path) -> None:
    """Write a raster as an 8-bit grayscale PNG (byte = round(intensity * 255))."""
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path), format="PNG")
