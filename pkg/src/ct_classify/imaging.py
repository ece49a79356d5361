"""Grayscale image loading, bilinear resizing, CLAHE enhancement, median denoising.

Every operation is a pure function over 8-bit grayscale images: inputs are
never mutated and identical inputs give bit-identical outputs. Quantization is
half-up rounding (``floor(x + 0.5)``) at every point where floats become
pixels, so golden images are stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# (row0, col0, row1, col1), half-open on both axes
Bounds = tuple[int, int, int, int]


def round_half_up(x):
    """Round to the nearest integer with .5 going up. Returns a float array."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Single-channel 8-bit image; ``pixels`` is a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"pixels must be a 2-D grid, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image dimensions must be >= 1, got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ClaheParams:
    """Tile grid, clip fraction, and histogram geometry for `clahe`.

    ``clip`` is a normalized fraction of the tile pixel count: the per-bin
    ceiling is ``max(1, round(clip * tile_pixels))``. With the 0.01 default and
    28x28 tiles that ceiling is 8 counts per bin.
    """

    tiles_m: int = 8
    tiles_n: int = 8
    clip: float = 0.01
    bins: int = 256
    gray_levels: int = 256

    def __post_init__(self):
        if self.tiles_m < 1 or self.tiles_n < 1:
            raise ValueError("tile grid must be at least 1x1")
        if not 0.0 < self.clip <= 1.0:
            raise ValueError(f"clip must be in (0, 1], got {self.clip}")
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")
        if self.gray_levels < 2:
            raise ValueError(f"gray_levels must be >= 2, got {self.gray_levels}")


@dataclass(frozen=True, eq=False)
class Histogram:
    """Per-bin pixel counts plus their sum; the sum is invariant under clipping."""

    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError("histogram counts must be 1-D")
        if (counts < 0).any():
            raise ValueError("histogram counts must be non-negative")
        if int(counts.sum()) != self.total:
            raise ValueError(
                f"histogram mass mismatch: counts sum to {int(counts.sum())}, "
                f"total says {self.total}"
            )
        object.__setattr__(self, "counts", counts)

    @property
    def bins(self) -> int:
        return len(self.counts)


@dataclass(frozen=True, eq=False)
class LookupTable:
    """Monotone input-level -> output-level mapping, one entry per gray level."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.int64)
        if entries.ndim != 1:
            raise ValueError("lookup table entries must be 1-D")
        if (np.diff(entries) < 0).any():
            raise ValueError("lookup table must be monotone non-decreasing")
        if (entries < 0).any():
            raise ValueError("lookup table entries must be non-negative")
        object.__setattr__(self, "entries", entries)

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        return self.entries[pixels]


def load_grayscale(path) -> GrayImage:
    """Load a PNG or JPEG file as an 8-bit grayscale image.

    Color inputs are reduced by the per-pixel mean of the RGB channels,
    rounded half-up. Missing files raise FileNotFoundError; undecodable bytes
    raise ValueError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                arr = round_half_up(rgb.mean(axis=2)).astype(np.uint8)
    except UnidentifiedImageError as exc:
        raise ValueError(f"not a decodable PNG/JPEG file: {path}") from exc
    return GrayImage(arr)


def save_png(img: GrayImage, path) -> None:
    """Write an image as an 8-bit grayscale PNG, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(img.pixels), mode="L").save(path, format="PNG")


def _sample_coords(n_in: int, n_out: int) -> np.ndarray:
    # align-corners-false: output pixel centers mapped into source coordinates
    scale = n_in / n_out
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(coords, 0.0, float(n_in - 1))


def resize_bilinear(img: GrayImage, out_h: int, out_w: int) -> GrayImage:
    """Resize with bilinear interpolation (align-corners-false), half-up rounding."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dimensions must be >= 1, got {out_h}x{out_w}")
    src = img.pixels.astype(np.float64)
    h, w = src.shape

    rows = _sample_coords(h, out_h)
    cols = _sample_coords(w, out_w)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]

    top = src[np.ix_(r0, c0)] * (1.0 - fc) + src[np.ix_(r0, c1)] * fc
    bottom = src[np.ix_(r1, c0)] * (1.0 - fc) + src[np.ix_(r1, c1)] * fc
    out = top * (1.0 - fr) + bottom * fr
    return GrayImage(round_half_up(out).astype(np.uint8))


def tile_histogram(img: GrayImage, tile_bounds: Bounds, bins: int,
                   gray_levels: int = 256) -> Histogram:
    """Histogram of one image rectangle; bin index is floor(pixel*bins/gray_levels)."""
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    r0, c0, r1, c1 = tile_bounds
    if not (0 <= r0 < r1 <= img.height and 0 <= c0 < c1 <= img.width):
        raise ValueError(f"empty or out-of-range tile bounds {tile_bounds} "
                         f"for a {img.height}x{img.width} image")
    tile = img.pixels[r0:r1, c0:c1]
    idx = np.minimum(tile.astype(np.int64) * bins // gray_levels, bins - 1)
    counts = np.bincount(idx.ravel(), minlength=bins)
    return Histogram(counts=counts, total=int(tile.size))


def clip_redistribute(hist: Histogram, clip: float) -> Histogram:
    """Cap every bin at ``max(1, round(clip * total))`` and push the excess back.

    Redistribution is deterministic, in three phases:
      (a) clamp each bin at the limit, collecting the excess;
      (b) add floor(excess / bins) to every bin, capped at the limit,
          re-collecting whatever overflows;
      (c) hand the remainder out one count at a time to bins strictly below
          the limit, in ascending index order, wrapping until exhausted.

    Total mass is preserved exactly. Raises ValueError when the limit is too
    small to hold the mass at all (limit * bins < total).
    """
    counts = hist.counts.copy()
    bins = hist.bins
    limit = max(1, int(round_half_up(clip * hist.total)))
    if limit * bins < hist.total:
        raise ValueError(
            f"infeasible clip: limit {limit} over {bins} bins cannot hold "
            f"{hist.total} counts"
        )

    clamped = np.minimum(counts, limit)
    excess = int((counts - clamped).sum())
    counts = clamped

    share = excess // bins
    if share > 0:
        add = np.minimum(limit - counts, share)
        counts += add
        excess -= int(add.sum())

    while excess > 0:
        below = np.flatnonzero(counts < limit)
        take = min(excess, len(below))
        counts[below[:take]] += 1
        excess -= take

    return Histogram(counts=counts, total=hist.total)


def build_mapping(hist: Histogram, gray_levels: int = 256) -> LookupTable:
    """Equalization lookup table: entry j is round((G-1) * CDF(bin of level j))."""
    if hist.total <= 0:
        raise ValueError("cannot build a mapping from an empty histogram")
    cdf = np.cumsum(hist.counts, dtype=np.float64) / hist.total
    levels = np.arange(gray_levels, dtype=np.int64)
    bin_of = np.minimum(levels * hist.bins // gray_levels, hist.bins - 1)
    entries = round_half_up((gray_levels - 1) * cdf[bin_of]).astype(np.int64)
    return LookupTable(entries=entries)


def _tile_edges(size: int, k: int) -> np.ndarray:
    # even partition; remainder rows/columns join the last tile
    base = size // k
    edges = np.arange(k + 1, dtype=np.int64) * base
    edges[-1] = size
    return edges


def _axis_blend(size: int, centers: np.ndarray):
    """Per-coordinate (low tile, high tile, fraction) for center interpolation.

    Coordinates beyond the first/last tile center collapse onto the nearest
    tile (fraction 0 with low == high), and a coordinate exactly on a center
    gets full weight on that tile.
    """
    pos = np.arange(size, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="left")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    safe = np.where(span > 0, span, 1.0)
    frac = np.where(span > 0, (pos - centers[lo]) / safe, 0.0)
    return lo, hi, frac


def clahe(img: GrayImage, params: ClaheParams = ClaheParams()) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    The image is split into an ``tiles_m x tiles_n`` grid (remainder pixels
    join the last tile per axis). Each tile's histogram is clipped,
    redistributed, and turned into an equalization lookup table; each output
    pixel bilinearly blends the four nearest tile-center tables and is rounded
    half-up back to 8 bits.
    """
    m, n = params.tiles_m, params.tiles_n
    if img.height < m or img.width < n:
        raise ValueError(
            f"image {img.height}x{img.width} is smaller than the {m}x{n} tile grid"
        )

    row_edges = _tile_edges(img.height, m)
    col_edges = _tile_edges(img.width, n)

    luts = np.empty((m, n, params.gray_levels), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            bounds = (int(row_edges[i]), int(col_edges[j]),
                      int(row_edges[i + 1]), int(col_edges[j + 1]))
            hist = tile_histogram(img, bounds, params.bins, params.gray_levels)
            hist = clip_redistribute(hist, params.clip)
            luts[i, j] = build_mapping(hist, params.gray_levels).entries

    row_centers = (row_edges[:-1] + row_edges[1:]) / 2.0
    col_centers = (col_edges[:-1] + col_edges[1:]) / 2.0
    r_lo, r_hi, fr = _axis_blend(img.height, row_centers)
    c_lo, c_hi, fc = _axis_blend(img.width, col_centers)

    px = img.pixels
    rl, rh = r_lo[:, None], r_hi[:, None]
    cl, ch = c_lo[None, :], c_hi[None, :]
    fr_, fc_ = fr[:, None], fc[None, :]

    out = ((1.0 - fr_) * (1.0 - fc_) * luts[rl, cl, px]
           + (1.0 - fr_) * fc_ * luts[rl, ch, px]
           + fr_ * (1.0 - fc_) * luts[rh, cl, px]
           + fr_ * fc_ * luts[rh, ch, px])
    return GrayImage(round_half_up(out).astype(np.uint8))


def median_filter_3x3(img: GrayImage) -> GrayImage:
    """Replace each pixel by the median of its 3x3 neighborhood (edges replicated)."""
    h, w = img.height, img.width
    padded = np.pad(img.pixels, 1, mode="edge")
    windows = np.stack([padded[r:r + h, c:c + w]
                        for r in range(3) for c in range(3)])
    return GrayImage(np.median(windows, axis=0).astype(np.uint8))


def preprocess_image(img: GrayImage, params: ClaheParams = ClaheParams(),
                     out_h: int = 224, out_w: int = 224) -> GrayImage:
    """Full enhancement chain: resize, CLAHE, 3x3 median denoise."""
    resized = resize_bilinear(img, out_h, out_w)
    enhanced = clahe(resized, params)
    return median_filter_3x3(enhanced)
