"""Pixel-level primitives on 8-bit grayscale rasters.

A gray image is a 2-D ``numpy.uint8`` array indexed ``[y, x]``.  Every
function here is pure: inputs are never modified.  Rounding is half-up and
borders replicate the nearest edge pixel throughout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ImageSmallerThanGrid,
    OutOfBounds,
    Truncated,
    UnsupportedMaxval,
    ZeroDimension,
)

__all__ = [
    "ClaheParams",
    "IntegralImage",
    "apply_clahe",
    "as_gray",
    "binomial_blur_3x3",
    "build_integrals",
    "decode_pgm",
    "encode_pgm",
    "median_filter_3x3",
    "read_pgm",
    "rect_sum",
    "resize_bilinear",
    "rotate_bilinear",
    "rotate_region",
    "round_half_up",
    "write_pgm",
]


def as_gray(img) -> np.ndarray:
    """Validate and return ``img`` as a 2-D uint8 array (no copy when possible)."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ZeroDimension(f"image has zero extent: {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("pixel values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def round_half_up(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def _to_u8(values) -> np.ndarray:
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# PGM codec
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n\r]*[\n\r]\s*)*([^\s#]+)")


def decode_pgm(data: bytes) -> np.ndarray:
    """Decode a P2 (ASCII) or P5 (binary) PGM stream with maxval <= 255."""
    data = bytes(data)
    if data[:2] not in (b"P2", b"P5"):
        raise BadMagic(f"not a P2/P5 PGM stream (magic {data[:2]!r})")
    magic = data[:2]
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise Truncated("PGM header ends early")
        fields.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise Truncated(f"non-numeric PGM header field: {exc}") from None
    if width < 1 or height < 1:
        raise ZeroDimension(f"PGM declares {width}x{height}")
    if maxval < 1 or maxval > 255:
        raise UnsupportedMaxval(f"maxval {maxval} not in 1..255")

    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates maxval from the payload
        payload = data[pos + 1 : pos + 1 + n]
        if pos >= len(data) or len(payload) < n:
            raise Truncated(f"expected {n} samples, got {max(0, len(payload))}")
        pixels = np.frombuffer(payload, dtype=np.uint8)
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise Truncated(f"expected {n} samples, got {len(tokens)}")
        try:
            pixels = np.array([int(t) for t in tokens[:n]], dtype=np.int64)
        except ValueError:
            raise Truncated("non-numeric sample in P2 payload") from None
        if pixels.min() < 0 or pixels.max() > maxval:
            raise Truncated("sample outside 0..maxval")
        pixels = pixels.astype(np.uint8)
    return pixels.reshape(height, width).copy()


def encode_pgm(img) -> bytes:
    img = as_gray(img)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, img) -> None:
    Path(path).write_bytes(encode_pgm(img))


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates, clamping to the border."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    src = img.astype(np.float64)
    a, b = src[y0, x0], src[y0, x1]
    c, d = src[y1, x0], src[y1, x1]
    # difference form keeps blends of equal values exact
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


def resize_bilinear(img, out_w: int, out_h: int) -> np.ndarray:
    """Resize with pixel-center alignment: src = (dst + 0.5) * scale - 0.5."""
    img = as_gray(img)
    if out_w < 1 or out_h < 1:
        raise ZeroDimension(f"cannot resize to {out_w}x{out_h}")
    h, w = img.shape
    if (out_w, out_h) == (w, h):
        return img.copy()
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return _to_u8(_bilinear(img, gx, gy))


def rotate_bilinear(img, angle_deg: float, cx: float, cy: float) -> np.ndarray:
    """Rotate about (cx, cy), keeping the input dimensions.

    In image coordinates (y down) a positive angle turns content clockwise
    on screen: a point p moves to c + R(angle) (p - c).  Output pixels are
    pulled through the inverse rotation; off-image samples replicate the
    nearest edge pixel.
    """
    img = as_gray(img)
    h, w = img.shape
    return rotate_region(img, angle_deg, cx, cy, 0, 0, w, h)


def rotate_region(img, angle_deg: float, cx: float, cy: float, x: int, y: int, w: int, h: int) -> np.ndarray:
    """The (x, y, w, h) window of ``rotate_bilinear(img, ...)``, computing only that window."""
    img = as_gray(img)
    if not np.isfinite(angle_deg):
        raise ValueError("rotation angle must be finite")
    if angle_deg == 0:
        return img[y : y + h, x : x + w].copy()
    t = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(t), np.sin(t)
    gx, gy = np.meshgrid(np.arange(x, x + w, dtype=np.float64), np.arange(y, y + h, dtype=np.float64))
    dx, dy = gx - cx, gy - cy
    xs = cx + cos_t * dx + sin_t * dy
    ys = cy - sin_t * dx + cos_t * dy
    return _to_u8(_bilinear(img, xs, ys))


def rotate_points(points, angle_deg: float, cx: float, cy: float) -> np.ndarray:
    """Forward-map (x, y) points through the same rotation rotate_bilinear applies."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    t = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(t), np.sin(t)
    dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
    return np.column_stack([cx + cos_t * dx - sin_t * dy, cy + sin_t * dx + cos_t * dy])


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------

def _neighborhood(img: np.ndarray) -> list[np.ndarray]:
    """The nine edge-replicated 3x3 shifts of ``img``, row-major."""
    h, w = img.shape
    p = np.pad(img, 1, mode="edge")
    return [p[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]


def median_filter_3x3(img) -> np.ndarray:
    img = as_gray(img)
    stack = np.stack(_neighborhood(img))
    return np.partition(stack, 4, axis=0)[4].astype(np.uint8)


def binomial_blur_3x3(img) -> np.ndarray:
    """Separable [1, 2, 1] / 4 smoothing in both axes (net kernel / 16)."""
    img = as_gray(img)
    p = np.pad(img.astype(np.int32), 1, mode="edge")
    rows = p[:, :-2] + 2 * p[:, 1:-1] + p[:, 2:]
    acc = rows[:-2] + 2 * rows[1:-1] + rows[2:]
    return ((acc + 8) // 16).astype(np.uint8)


# ---------------------------------------------------------------------------
# Integral images
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegralImage:
    """Summed-area tables with a zero first row and column.

    ``sums[y, x]`` is the sum of pixels in ``[0, x) x [0, y)``; ``sq_sums``
    holds the same for squared intensities.
    """

    sums: np.ndarray
    sq_sums: np.ndarray

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1


def build_integrals(img) -> IntegralImage:
    img = as_gray(img)
    h, w = img.shape
    v = img.astype(np.int64)
    sums = np.zeros((h + 1, w + 1), dtype=np.int64)
    sq = np.zeros((h + 1, w + 1), dtype=np.int64)
    sums[1:, 1:] = v.cumsum(0).cumsum(1)
    sq[1:, 1:] = (v * v).cumsum(0).cumsum(1)
    sums.flags.writeable = False
    sq.flags.writeable = False
    return IntegralImage(sums, sq)


def rect_sum(ii: IntegralImage, x: int, y: int, w: int, h: int, squared: bool = False) -> int:
    if x < 0 or y < 0 or w < 0 or h < 0 or x + w > ii.width or y + h > ii.height:
        raise OutOfBounds(f"rect ({x},{y},{w},{h}) outside {ii.width}x{ii.height}")
    t = ii.sq_sums if squared else ii.sums
    return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


# ---------------------------------------------------------------------------
# CLAHE
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile grid must be at least 1x1")
        if not self.clip_limit > 0:
            raise ValueError("clip_limit must be positive")
        if self.bins != 256:
            raise ValueError("only 256 bins are supported")


def _tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.int64)
    n = tile.size
    if np.count_nonzero(hist) == 1:
        # no contrast to stretch: leave a flat tile as it is
        return np.arange(256, dtype=np.int64)
    clip = max(1, int(clip_limit * n / 256))
    excess = int(np.maximum(hist - clip, 0).sum())
    if excess:
        hist = np.minimum(hist, clip)
        batch, residual = divmod(excess, 256)
        hist += batch
        hist[:residual] += 1
    cdf = np.cumsum(hist)
    return (510 * cdf + n) // (2 * n)  # round_half_up(255 * cdf / n), in integers


def _axis_weights(size: int, tiles: int):
    """Lower/upper tile index and blend weight for every coordinate on one axis."""
    edges = (np.arange(tiles + 1) * size) // tiles
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    coords = np.arange(size, dtype=np.float64)
    hi = np.searchsorted(centers, coords, side="right")
    lo = np.clip(hi - 1, 0, tiles - 1)
    hi = np.clip(hi, 0, tiles - 1)
    span = centers[hi] - centers[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        wt = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1), 0.0)
    return edges, lo, hi, wt


def apply_clahe(img, p: ClaheParams = ClaheParams()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Per-tile 256-bin histograms are clipped at ``clip_limit * pixels / 256``
    (truncated, at least 1); the excess is spread evenly over all bins with
    the remainder going one count each from bin 0 upward.  A tile maps
    ``i -> round(255 * cdf(i))``; pixels between tile centers blend the four
    surrounding maps bilinearly, pixels beyond the outer centers use the
    nearest tile.  A tile holding a single intensity keeps the identity map.
    """
    img = as_gray(img)
    h, w = img.shape
    if w < p.tiles_x or h < p.tiles_y:
        raise ImageSmallerThanGrid(f"{w}x{h} image cannot hold a {p.tiles_x}x{p.tiles_y} grid")

    ex, lo_x, hi_x, wx = _axis_weights(w, p.tiles_x)
    ey, lo_y, hi_y, wy = _axis_weights(h, p.tiles_y)
    luts = np.empty((p.tiles_y, p.tiles_x, 256), dtype=np.float64)
    for ty in range(p.tiles_y):
        for tx in range(p.tiles_x):
            tile = img[ey[ty] : ey[ty + 1], ex[tx] : ex[tx + 1]]
            luts[ty, tx] = _tile_lut(tile, p.clip_limit)

    ly, hy = lo_y[:, None], hi_y[:, None]
    lx, hx = lo_x[None, :], hi_x[None, :]
    fx, fy = wx[None, :], wy[:, None]
    top = luts[ly, lx, img] + fx * (luts[ly, hx, img] - luts[ly, lx, img])
    bottom = luts[hy, lx, img] + fx * (luts[hy, hx, img] - luts[hy, lx, img])
    return _to_u8(top + fy * (bottom - top))
