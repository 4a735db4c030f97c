"""Viola-Jones Haar cascade: legacy XML parsing and multiscale detection.

Detection scales the feature rectangles instead of the image, so one pair of
integral tables serves every scale.  Windows are variance normalized the way
the public pretrained cascades were trained: the statistics come from the
window inset by one base pixel on each side, and a feature value is its
weighted rectangle sum divided by that inset area.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _scan
from .errors import ImageTooSmall, MalformedXml, MissingElement, OutOfBounds, UnsupportedFeature
from .image import IntegralImage, as_gray, build_integrals

DATA_DIR = Path(__file__).parent / "data"
FRONTAL_FACE_XML = DATA_DIR / "haarcascade_frontalface_default.xml"
EYE_XML = DATA_DIR / "haarcascade_eye.xml"


@dataclass(frozen=True)
class HaarRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple[HaarRect, ...]


@dataclass(frozen=True)
class TreeNode:
    """One split.  Each side is either a child node index or a leaf value."""

    feature: HaarFeature
    threshold: float
    left_node: int | None = None
    left_val: float | None = None
    right_node: int | None = None
    right_val: float | None = None


@dataclass(frozen=True)
class Stage:
    trees: tuple[tuple[TreeNode, ...], ...]
    threshold: float


@dataclass(frozen=True)
class FaceBox:
    x: int
    y: int
    w: int
    h: int
    neighbors: int = 1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)


@dataclass(frozen=True)
class DetectParams:
    scale_factor: float = 1.1
    min_neighbors: int = 3
    min_size: int | None = None  # pixels; None means the base window
    step_fraction: float = 1 / 24

    def __post_init__(self):
        if not self.scale_factor > 1.0:
            raise ValueError("scale_factor must exceed 1")
        if self.min_neighbors < 0:
            raise ValueError("min_neighbors must be >= 0")
        if not self.step_fraction > 0:
            raise ValueError("step_fraction must be positive")


@dataclass(frozen=True)
class CascadeModel:
    base_w: int
    base_h: int
    stages: tuple[Stage, ...]
    _flat: "_FlatCascade" = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_flat", _FlatCascade.build(self))

    @property
    def n_features(self) -> int:
        return sum(len(t) for s in self.stages for t in s.trees)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _child(elem, tag):
    found = elem.find(tag)
    if found is None:
        raise MissingElement(f"<{tag}> missing under <{elem.tag}>")
    return found


def _number(elem, tag, kind=float):
    text = _child(elem, tag).text
    try:
        return kind(text.strip())
    except (AttributeError, ValueError):
        raise MalformedXml(f"<{tag}> holds {text!r}, expected a number") from None


def _parse_node(node, base_w, base_h) -> TreeNode:
    feat = _child(node, "feature")
    tilted = feat.findtext("tilted")
    if tilted is not None and tilted.strip() not in ("", "0"):
        raise UnsupportedFeature("tilted (45 degree) Haar features are not supported")
    rects = []
    for r in _child(feat, "rects"):
        parts = (r.text or "").split()
        if len(parts) != 5:
            raise MalformedXml(f"rect {r.text!r} is not 'x y w h weight'")
        try:
            x, y, w, h = (int(v) for v in parts[:4])
            weight = float(parts[4])
        except ValueError:
            raise MalformedXml(f"rect {r.text!r} is not numeric") from None
        if x < 0 or y < 0 or w < 1 or h < 1 or x + w > base_w or y + h > base_h:
            raise MalformedXml(f"rect {r.text!r} leaves the {base_w}x{base_h} window")
        rects.append(HaarRect(x, y, w, h, weight))
    if not 2 <= len(rects) <= 3:
        raise MalformedXml(f"feature has {len(rects)} rects, expected 2 or 3")
    if not (any(r.weight < 0 for r in rects) and any(r.weight > 0 for r in rects)):
        raise MalformedXml("feature weights must mix signs")

    sides = {}
    for side in ("left", "right"):
        if node.find(f"{side}_val") is not None:
            sides[f"{side}_val"] = _number(node, f"{side}_val")
        elif node.find(f"{side}_node") is not None:
            sides[f"{side}_node"] = _number(node, f"{side}_node", int)
        else:
            raise MissingElement(f"node lacks <{side}_val> or <{side}_node>")
    return TreeNode(HaarFeature(tuple(rects)), _number(node, "threshold"), **sides)


def _check_tree(nodes: list[TreeNode]) -> None:
    # every path must end in a leaf: walk with a visited set to catch cycles
    def walk(i, seen):
        if not 0 <= i < len(nodes):
            raise MalformedXml(f"child index {i} outside tree of {len(nodes)} nodes")
        if i in seen:
            raise MalformedXml("cycle in cascade tree")
        seen = seen | {i}
        n = nodes[i]
        for child in (n.left_node, n.right_node):
            if child is not None:
                walk(child, seen)

    walk(0, frozenset())


def parse_cascade(xml: str) -> CascadeModel:
    """Parse a legacy ("opencv-haar-classifier") cascade document."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from None
    cascade = root if root.find("size") is not None else next(
        (c for c in root if c.find("size") is not None), None
    )
    if cascade is None:
        raise MissingElement("no element with a <size> child")
    try:
        base_w, base_h = (int(v) for v in cascade.findtext("size").split())
    except ValueError:
        raise MalformedXml("<size> must hold two integers") from None

    stages = []
    for s in _child(cascade, "stages"):
        trees = []
        for t in _child(s, "trees"):
            nodes = [_parse_node(n, base_w, base_h) for n in t]
            if not nodes:
                raise MalformedXml("empty tree")
            _check_tree(nodes)
            trees.append(tuple(nodes))
        if not trees:
            raise MalformedXml("stage without trees")
        stages.append(Stage(tuple(trees), _number(s, "stage_threshold")))
    if not stages:
        raise MalformedXml("cascade without stages")
    return CascadeModel(base_w, base_h, tuple(stages))


def load_cascade(path) -> CascadeModel:
    return parse_cascade(Path(path).read_text())


_DEFAULTS: dict[str, CascadeModel] = {}


def default_face_cascade() -> CascadeModel:
    if "face" not in _DEFAULTS:
        _DEFAULTS["face"] = load_cascade(FRONTAL_FACE_XML)
    return _DEFAULTS["face"]


def default_eye_cascade() -> CascadeModel:
    if "eye" not in _DEFAULTS:
        _DEFAULTS["eye"] = load_cascade(EYE_XML)
    return _DEFAULTS["eye"]


# ---------------------------------------------------------------------------
# Scaled geometry
# ---------------------------------------------------------------------------

def _rnd(v: float) -> int:
    return int(math.floor(v + 0.5))


def window_size(model: CascadeModel, scale: float) -> tuple[int, int]:
    return _rnd(model.base_w * scale), _rnd(model.base_h * scale)


def _norm_rect(model: CascadeModel, scale: float) -> tuple[int, int, int, int]:
    inset = _rnd(scale)
    return inset, inset, _rnd((model.base_w - 2) * scale), _rnd((model.base_h - 2) * scale)


def _scale_rects(rects, scale: float):
    """Scaled (x, y, w, h) boxes and weights.

    Corners are rounded (not origin and size separately) so a scaled box
    never leaves the scaled window.  The first weight is rebalanced so the
    scaled feature still sums to zero over a flat window.
    """
    boxes = []
    for r in rects:
        x0, y0 = _rnd(r.x * scale), _rnd(r.y * scale)
        boxes.append((x0, y0, _rnd((r.x + r.w) * scale) - x0, _rnd((r.y + r.h) * scale) - y0))
    weights = [r.weight for r in rects]
    if scale != 1.0:
        rest = sum(wt * b[2] * b[3] for wt, b in zip(weights[1:], boxes[1:]))
        weights[0] = -rest / (boxes[0][2] * boxes[0][3])
    return boxes, weights


@dataclass
class _FlatCascade:
    """Array form of a cascade for the compiled scanner."""

    rects: np.ndarray  # (F, 3, 4) int64 unscaled boxes
    weights: np.ndarray  # (F, 3) float64, zero for absent third rect
    n_rects: np.ndarray  # (F,)
    node_threshold: np.ndarray  # (F,)  one feature per node
    node_left: np.ndarray  # >= 0 node index, < 0 leaf -1-k
    node_right: np.ndarray
    leaves: np.ndarray
    tree_root: np.ndarray
    stage_start: np.ndarray  # (S+1,) into tree_root
    stage_threshold: np.ndarray
    stump_stage: np.ndarray  # per stage: every tree is a single split
    stump_prefix: int  # leading stages made only of single-split trees
    cache: dict = field(default_factory=dict)  # (scale, stride) -> scaled geometry

    @classmethod
    def build(cls, model: CascadeModel) -> "_FlatCascade":
        stumps = np.array([all(len(t) == 1 for t in s.trees) for s in model.stages])
        prefix = len(stumps) if stumps.all() else int(np.argmin(stumps))
        rects, weights, n_rects, thr, left, right = [], [], [], [], [], []
        leaves, roots, starts, sthr = [], [], [0], []
        for stage in model.stages:
            for tree in stage.trees:
                base = len(thr)
                roots.append(base)
                for node in tree:
                    box = np.zeros((3, 4), dtype=np.int64)
                    wts = np.zeros(3)
                    for k, r in enumerate(node.feature.rects):
                        box[k] = (r.x, r.y, r.w, r.h)
                        wts[k] = r.weight
                    rects.append(box)
                    weights.append(wts)
                    n_rects.append(len(node.feature.rects))
                    thr.append(node.threshold)
                    for side_node, side_val, out in (
                        (node.left_node, node.left_val, left),
                        (node.right_node, node.right_val, right),
                    ):
                        if side_node is not None:
                            out.append(base + side_node)
                        else:
                            out.append(-1 - len(leaves))
                            leaves.append(side_val)
            starts.append(len(roots))
            sthr.append(stage.threshold)
        return cls(
            np.array(rects), np.array(weights), np.array(n_rects, dtype=np.int64),
            np.array(thr), np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
            np.array(leaves, dtype=np.float64), np.array(roots, dtype=np.int64),
            np.array(starts, dtype=np.int64), np.array(sthr), stumps, prefix,
        )

    def scaled(self, scale: float):
        """Scaled boxes/weights for every node, matching _scale_rects."""
        lo = np.floor(self.rects[..., :2] * scale + 0.5)
        hi = np.floor((self.rects[..., :2] + self.rects[..., 2:]) * scale + 0.5)
        boxes = np.concatenate([lo, hi - lo], axis=-1).astype(np.int64)
        weights = self.weights.copy()
        if scale != 1.0:
            areas = boxes[:, :, 2] * boxes[:, :, 3]
            rest = np.zeros(len(weights))
            for k in (1, 2):
                rest = rest + np.where(self.n_rects > k, weights[:, k] * areas[:, k], 0.0)
            weights[:, 0] = -rest / areas[:, 0]
        return boxes, weights


# ---------------------------------------------------------------------------
# Window evaluation (reference path)
# ---------------------------------------------------------------------------

def _window_sigma(ii: IntegralImage, model: CascadeModel, x: int, y: int, scale: float):
    nx, ny, nw, nh = _norm_rect(model, scale)
    s = ii.sums
    q = ii.sq_sums
    x0, y0, x1, y1 = x + nx, y + ny, x + nx + nw, y + ny + nh
    total = int(s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0])
    sq = int(q[y1, x1] - q[y0, x1] - q[y1, x0] + q[y0, x0])
    inv_area = 1.0 / (nw * nh)
    mean = total * inv_area
    var = sq * inv_area - mean * mean
    return (math.sqrt(var) if var > 0 else 1.0), inv_area


def _feature_value(ii: IntegralImage, boxes, weights, x: int, y: int) -> float:
    s = ii.sums
    acc = 0.0
    for (bx, by, bw, bh), wt in zip(boxes, weights):
        x0, y0 = x + bx, y + by
        x1, y1 = x0 + bw, y0 + bh
        acc += wt * int(s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0])
    return acc


def evaluate_window(model: CascadeModel, ii: IntegralImage, x: int, y: int, scale: float,
                    early_exit: bool = True) -> tuple[bool, int]:
    """Run the cascade on one window; returns (accepted, stages passed).

    With ``early_exit`` off every stage is evaluated; the window is still
    accepted only when all of them pass, and the count is the number of
    leading stages that passed.
    """
    ww, wh = window_size(model, scale)
    if x < 0 or y < 0 or x + ww > ii.width or y + wh > ii.height:
        raise OutOfBounds(f"{ww}x{wh} window at ({x},{y}) leaves {ii.width}x{ii.height} image")
    sigma, inv_area = _window_sigma(ii, model, x, y, scale)

    passed = 0
    failed = False
    for stage in model.stages:
        total = 0.0
        for tree in stage.trees:
            node = tree[0]
            while True:
                boxes, weights = _scale_rects(node.feature.rects, scale)
                value = _feature_value(ii, boxes, weights, x, y) * inv_area
                if value < node.threshold * sigma:
                    nxt, leaf = node.left_node, node.left_val
                else:
                    nxt, leaf = node.right_node, node.right_val
                if nxt is None:
                    total += leaf
                    break
                node = tree[nxt]
        if total < stage.threshold:
            failed = True
            if early_exit:
                break
        elif not failed:
            passed += 1
    return (not failed), passed


# ---------------------------------------------------------------------------
# Multiscale detection
# ---------------------------------------------------------------------------

def _similar(a: FaceBox, b: FaceBox, eps: float) -> bool:
    delta = eps * min(a.w, b.w)
    return (
        abs(a.x - b.x) <= delta
        and abs(a.y - b.y) <= delta
        and abs(a.x + a.w - b.x - b.w) <= delta
        and abs(a.y + a.h - b.y - b.h) <= delta
    )


def _sort_boxes(boxes):
    return sorted(boxes, key=lambda b: (-b.neighbors, b.y, b.x, b.h, b.w))


def group_rects(raw: list[FaceBox], min_neighbors: int, eps: float = 0.2) -> list[FaceBox]:
    """Merge similar raw detections (transitive closure) into mean boxes.

    Classes smaller than max(1, min_neighbors) are dropped.
    """
    n = len(raw)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if _similar(raw[i], raw[j], eps):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    classes: dict[int, list[FaceBox]] = {}
    for i, box in enumerate(raw):
        classes.setdefault(find(i), []).append(box)

    keep = max(1, min_neighbors)
    out = []
    for members in classes.values():
        if len(members) < keep:
            continue
        k = len(members)
        mean = [_rnd(sum(getattr(b, f) for b in members) / k) for f in ("x", "y", "w", "h")]
        out.append(FaceBox(*mean, neighbors=k))
    return _sort_boxes(out)


def iter_scales(model: CascadeModel, width: int, height: int, p: DetectParams):
    min_size = p.min_size if p.min_size is not None else model.base_w
    scale = max(1.0, min_size / model.base_w)
    while True:
        ww, wh = window_size(model, scale)
        if ww > width or wh > height:
            return
        yield scale
        scale *= p.scale_factor


ROW_STAGES = 1  # leading stages evaluated row-at-a-time by the compiled scanner


def _corner_offsets(boxes: np.ndarray, stride: int) -> np.ndarray:
    """(..., 4) boxes -> (..., 4) flat offsets of the corners, ordered so that
    the rectangle sum is t[o0] - t[o1] - t[o2] + t[o3]."""
    x, y, w, h = (boxes[..., i] for i in range(4))
    return np.stack(
        [(y + h) * stride + x + w, y * stride + x + w, (y + h) * stride + x, y * stride + x],
        axis=-1,
    ).astype(np.int64)


def _float_tables(ii: IntegralImage):
    return ii.sums.astype(np.float64).ravel(), ii.sq_sums.astype(np.float64).ravel()


def scan_scale(model: CascadeModel, ii: IntegralImage, scale: float, step: int,
               tables=None) -> list[tuple[int, int]]:
    """Top-left corners of every accepted window at one scale (compiled path)."""
    flat = model._flat
    stride = ii.width + 1
    key = (scale, stride)
    geom = flat.cache.get(key)
    if geom is None:
        boxes, weights = flat.scaled(scale)
        nx, ny, nw, nh = _norm_rect(model, scale)
        norm_offs = _corner_offsets(np.array([[[nx, ny, nw, nh]]]), stride)[0, 0]
        geom = (_corner_offsets(boxes, stride).ravel(), weights.ravel(), norm_offs, 1.0 / (nw * nh))
        if len(flat.cache) >= 256:
            flat.cache.clear()
        flat.cache[key] = geom
    offs, weights, norm_offs, inv_area = geom
    ww, wh = window_size(model, scale)
    sums, sq_sums = tables if tables is not None else _float_tables(ii)
    hits = _scan.scan(
        sums, sq_sums, stride, ii.width, ii.height, ww, wh, step,
        norm_offs, inv_area, offs, weights, flat.n_rects, flat.node_threshold,
        flat.node_left, flat.node_right, flat.leaves, flat.tree_root, flat.stage_start,
        flat.stage_threshold, flat.stump_stage, min(ROW_STAGES, flat.stump_prefix),
    )
    return [(int(x), int(y)) for x, y in hits]


def detect_raw(model: CascadeModel, img, p: DetectParams = DetectParams(), ii: IntegralImage | None = None) -> list[FaceBox]:
    img = as_gray(img)
    h, w = img.shape
    if w < model.base_w or h < model.base_h:
        raise ImageTooSmall(f"{w}x{h} image smaller than {model.base_w}x{model.base_h} window")
    if ii is None:
        ii = build_integrals(img)
    tables = _float_tables(ii)
    raw = []
    for scale in iter_scales(model, w, h, p):
        ww, wh = window_size(model, scale)
        step = max(1, _rnd(p.step_fraction * ww))
        raw.extend(FaceBox(x, y, ww, wh, 1) for x, y in scan_scale(model, ii, scale, step, tables))
    return raw


def detect_multiscale(model: CascadeModel, img, p: DetectParams = DetectParams()) -> list[FaceBox]:
    """Sliding-window detection over all scales, grouped and sorted by
    descending neighbor count, ties by (y, x).  ``min_neighbors == 0``
    returns the raw accepted windows."""
    raw = detect_raw(model, img, p)
    if p.min_neighbors == 0:
        return _sort_boxes(raw)
    return group_rects(raw, p.min_neighbors)


def iou(a: FaceBox, b: FaceBox) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union else 0.0
