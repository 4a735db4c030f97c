"""Local binary patterns, grid histograms and nearest-neighbour recognition.

Codes set bit p when neighbour p is greater than or equal to the centre.
The basic 3x3 operator numbers its neighbours clockwise from the top-left
corner; the circular operator places sample p at angle 2*pi*p/P measured
counter-clockwise from +x (image y grows downward, hence the minus sign on
the sine).  Bit p always carries weight 2**p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChipSizeMismatch,
    ChipTooSmall,
    EmptyModel,
    EmptyTrainingSet,
    GridDegenerate,
    InsufficientSamples,
    LengthMismatch,
    MixedChipSizes,
    OutOfBounds,
)
from .image import as_gray

UNKNOWN = -1

# clockwise from top-left, as (dy, dx)
BASIC_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class LbpParams:
    p: int = 8
    r: int = 1
    grid_x: int = 8
    grid_y: int = 8
    mode: str = "circular"

    def __post_init__(self):
        if self.p != 8:
            raise ValueError("recognition uses P = 8 neighbours")
        if self.r < 1 or int(self.r) != self.r:
            raise ValueError("radius must be a positive integer")
        if self.grid_x < 1 or self.grid_y < 1:
            raise ValueError("grid must be at least 1x1")
        if self.mode not in ("basic", "circular"):
            raise ValueError(f"unknown LBP mode {self.mode!r}")
        if self.mode == "basic" and self.r != 1:
            raise ValueError("basic mode is the 3x3 operator (R = 1)")

    @property
    def bins(self) -> int:
        return 1 << self.p

    @property
    def length(self) -> int:
        return self.grid_x * self.grid_y * self.bins


# ---------------------------------------------------------------------------
# Codes
# ---------------------------------------------------------------------------

def lbp_code_basic(window) -> int:
    """Code of a 3x3 window (centre at [1, 1])."""
    w = np.asarray(window, dtype=np.int64).reshape(3, 3)
    center = w[1, 1]
    code = 0
    for bit, (dy, dx) in enumerate(BASIC_OFFSETS):
        if w[1 + dy, 1 + dx] >= center:
            code |= 1 << bit
    return code


def _circle_samples(p: int, r: float):
    """Per sample: integer floor offsets (dx0, dy0) and fractions (fx, fy)."""
    out = []
    for k in range(p):
        theta = 2.0 * math.pi * k / p
        dx, dy = r * math.cos(theta), -r * math.sin(theta)
        # snap cos/sin round-off so axis-aligned samples hit pixels exactly
        if abs(dx - round(dx)) < 1e-9:
            dx = float(round(dx))
        if abs(dy - round(dy)) < 1e-9:
            dy = float(round(dy))
        x0, y0 = math.floor(dx), math.floor(dy)
        out.append((x0, y0, dx - x0, dy - y0))
    return out


def _blend(a, b, c, d, fx, fy):
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    return top + fy * (bottom - top)


def lbp_code_circular(img, xc: int, yc: int, p: int = 8, r: float = 1) -> int:
    """Circular code at one pixel; samples are bilinearly interpolated and
    compared as reals (no rounding)."""
    img = as_gray(img)
    h, w = img.shape
    reach = math.ceil(r)
    if xc - reach < 0 or yc - reach < 0 or xc + reach >= w or yc + reach >= h:
        raise OutOfBounds(f"({xc},{yc}) closer than {r} to the border of {w}x{h}")
    g = img.astype(np.float64)
    center = g[yc, xc]
    code = 0
    for bit, (x0, y0, fx, fy) in enumerate(_circle_samples(p, r)):
        x, y = xc + x0, yc + y0
        x1 = x + 1 if fx > 0 else x
        y1 = y + 1 if fy > 0 else y
        v = _blend(g[y, x], g[y, x1], g[y1, x], g[y1, x1], fx, fy)
        if v >= center:
            code |= 1 << bit
    return code


def lbp_image(chip, p: LbpParams = LbpParams()) -> np.ndarray:
    """Codes at every pixel with a full neighbourhood: (H-2R) x (W-2R)."""
    chip = as_gray(chip)
    h, w = chip.shape
    r = int(p.r)
    if h <= 2 * r or w <= 2 * r:
        raise ChipTooSmall(f"{w}x{h} chip has no interior at radius {r}")
    oh, ow = h - 2 * r, w - 2 * r
    codes = np.zeros((oh, ow), dtype=np.uint16 if p.p > 8 else np.uint8)

    if p.mode == "basic":
        g = chip.astype(np.int16)
        center = g[1:-1, 1:-1]
        for bit, (dy, dx) in enumerate(BASIC_OFFSETS):
            nb = g[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
            codes |= (nb >= center).astype(codes.dtype) << bit
        return codes

    g = chip.astype(np.float64)
    center = g[r : r + oh, r : r + ow]

    def shifted(dx, dy):
        return g[r + dy : r + dy + oh, r + dx : r + dx + ow]

    for bit, (x0, y0, fx, fy) in enumerate(_circle_samples(p.p, r)):
        x1 = x0 + 1 if fx > 0 else x0
        y1 = y0 + 1 if fy > 0 else y0
        v = _blend(shifted(x0, y0), shifted(x1, y0), shifted(x0, y1), shifted(x1, y1), fx, fy)
        codes |= (v >= center).astype(codes.dtype) << bit
    return codes


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------

def _cell_index(n: int, cells: int) -> np.ndarray:
    """Cell of each coordinate: equal cells of n // cells, remainder to the last."""
    size = n // cells
    if size == 0:
        raise GridDegenerate(f"{n} codes cannot fill {cells} cells")
    return np.minimum(np.arange(n) // size, cells - 1)


def lbph_describe(chip, p: LbpParams = LbpParams()) -> np.ndarray:
    """Concatenated per-cell code histograms, cells row-major (int64 counts)."""
    codes = lbp_image(chip, p)
    oh, ow = codes.shape
    cx = _cell_index(ow, p.grid_x)
    cy = _cell_index(oh, p.grid_y)
    cell = cy[:, None] * p.grid_x + cx[None, :]
    flat = cell.astype(np.int64) * p.bins + codes
    return np.bincount(flat.ravel(), minlength=p.length).astype(np.int64)


def euclidean_distance(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"histograms of length {a.shape} and {b.shape}")
    if a.dtype.kind in "iu" and b.dtype.kind in "iu":
        d = a.astype(np.int64) - b.astype(np.int64)
        return math.sqrt(int(np.dot(d, d)))
    d = a.astype(np.float64) - b.astype(np.float64)
    return math.sqrt(float(np.dot(d, d)))


# ---------------------------------------------------------------------------
# Recognizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceTemplate:
    subject_id: int
    histogram: np.ndarray


@dataclass
class RecognizerModel:
    params: LbpParams
    chip_size: int
    templates: list[FaceTemplate]
    threshold: float = math.inf
    names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for t in self.templates:
            if len(t.histogram) != self.params.length:
                raise LengthMismatch(
                    f"template length {len(t.histogram)} != {self.params.length} for {self.params}"
                )
            if self.names and t.subject_id not in self.names:
                raise ValueError(f"subject id {t.subject_id} has no name")
        if self.threshold < 0 or math.isnan(self.threshold):
            raise ValueError("threshold must be a nonnegative distance")
        self._matrix = None

    @property
    def matrix(self) -> np.ndarray:
        """Templates stacked as an (N, length) int64 array."""
        if self._matrix is None:
            if self.templates:
                self._matrix = np.stack([t.histogram for t in self.templates]).astype(np.int64)
            else:
                self._matrix = np.zeros((0, self.params.length), dtype=np.int64)
        return self._matrix

    @property
    def subject_ids(self) -> np.ndarray:
        return np.array([t.subject_id for t in self.templates], dtype=np.int64)

    def name_of(self, subject_id: int) -> str:
        return "unknown" if subject_id == UNKNOWN else self.names.get(subject_id, str(subject_id))


def train(chips, p: LbpParams = LbpParams(), names: dict[int, str] | None = None) -> RecognizerModel:
    """One template per chip; the unknown threshold starts at +inf."""
    chips = list(chips)
    if not chips:
        raise EmptyTrainingSet("no chips to train on")
    shapes = {as_gray(img).shape for _, img in chips}
    if len(shapes) > 1:
        raise MixedChipSizes(f"chips come in several sizes: {sorted(shapes)}")
    (h, w), = shapes
    if h != w:
        raise ChipSizeMismatch(f"chips must be square, got {w}x{h}")
    templates = [FaceTemplate(int(sid), lbph_describe(img, p)) for sid, img in chips]
    if names is None:
        names = {t.subject_id: str(t.subject_id) for t in templates}
    return RecognizerModel(p, w, templates, math.inf, dict(names))


def squared_distances(model: RecognizerModel, hists: np.ndarray) -> np.ndarray:
    """Exact squared distances, (queries, templates).

    Counts are small integers, so the float64 products and sums are exact
    and the result does not depend on summation order.
    """
    q = np.atleast_2d(np.asarray(hists)).astype(np.float64)
    t = model.matrix.astype(np.float64)
    if q.shape[1] != t.shape[1]:
        raise LengthMismatch(f"query length {q.shape[1]} != template length {t.shape[1]}")
    d2 = (q * q).sum(1)[:, None] + (t * t).sum(1)[None, :] - 2.0 * (q @ t.T)
    return np.maximum(d2, 0.0)


def predict_histograms(model: RecognizerModel, hists) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict over precomputed histograms: (ids, distances)."""
    if not model.templates:
        raise EmptyModel("model has no templates")
    d2 = squared_distances(model, hists)
    best = np.argmin(d2, axis=1)  # first minimum wins ties
    dist = np.sqrt(d2[np.arange(len(best)), best])
    ids = model.subject_ids[best]
    ids = np.where(dist > model.threshold, UNKNOWN, ids)
    return ids, dist


def predict(model: RecognizerModel, chip) -> tuple[int, float]:
    if not model.templates:
        raise EmptyModel("model has no templates")
    chip = as_gray(chip)
    if chip.shape != (model.chip_size, model.chip_size):
        raise ChipSizeMismatch(f"chip {chip.shape[1]}x{chip.shape[0]}, model wants {model.chip_size}")
    ids, dist = predict_histograms(model, lbph_describe(chip, model.params))
    return int(ids[0]), float(dist[0])


def genuine_distances(model: RecognizerModel) -> np.ndarray:
    """Leave-one-out distance from each template to its nearest same-subject template."""
    sids = model.subject_ids
    counts = np.bincount(sids - sids.min()) if len(sids) else np.array([])
    if len(sids) == 0 or (counts[counts > 0] < 2).any():
        raise InsufficientSamples("every subject needs at least two templates")
    d2 = squared_distances(model, model.matrix)
    same = sids[:, None] == sids[None, :]
    np.fill_diagonal(same, False)
    return np.sqrt(np.where(same, d2, np.inf).min(axis=1))


def calibrate_threshold(model: RecognizerModel, quantile: float = 0.95) -> float:
    """Set the unknown threshold to the nearest-rank quantile of genuine distances."""
    if not 0 < quantile <= 1:
        raise ValueError("quantile must lie in (0, 1]")
    d = np.sort(genuine_distances(model))
    k = max(0, math.ceil(quantile * len(d) - 1e-9) - 1)
    model.threshold = float(d[k])
    return model.threshold
