"""Accuracy harness: resolution, rotation and train-size experiments.

Protocol per repeat ``r`` (generator seeded with ``seed + r``): each subject's
images are permuted, the first ``train_per_subject`` enroll and the rest form
the test pool; ``frames_per_repeat`` test frames are then drawn from the pool
with replacement.  Every row of one experiment sees the same draws, so rows
differ only in the degradation they apply.

Chips and descriptors are deterministic functions of (image, angle,
resolution) and are cached across repeats.
"""

from __future__ import annotations

import io
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .db import parse_subject_name
from .errors import DatasetTooSmall, NoFaceFound, NoUnderscore
from .haar import CascadeModel, default_eye_cascade, default_face_cascade
from .image import ClaheParams, read_pgm, resize_bilinear, rotate_bilinear
from .lbph import UNKNOWN, FaceTemplate, LbpParams, RecognizerModel, lbph_describe, predict_histograms
from .prep import PrepParams, prepare_enrollment, prepare_query, whole_image_box

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm",)


@dataclass(frozen=True)
class EvalConfig:
    dataset_dir: Path
    train_per_subject: int = 8
    resolutions: tuple[int, ...] = (15, 20, 30, 35, 45)
    repeats: int = 10
    frames_per_repeat: int = 200
    seed: int = 0
    rotations: tuple[float, ...] | None = None
    rotation_resolution: int | None = None  # None: rotated frames are not degraded
    threshold: float = math.inf
    detect: bool = False  # False: images are pre-cropped faces, the whole frame is the box
    align: bool = True
    prep: PrepParams = PrepParams()
    lbp: LbpParams = LbpParams()
    clahe: ClaheParams = ClaheParams()

    def __post_init__(self):
        if self.train_per_subject < 1:
            raise ValueError("train_per_subject must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.frames_per_repeat < 1:
            raise ValueError("frames_per_repeat must be >= 1")
        if any(r < 8 for r in self.resolutions):
            raise ValueError("resolutions must all be >= 8")
        if self.rotation_resolution is not None and self.rotation_resolution < 8:
            raise ValueError("rotation_resolution must be >= 8")


@dataclass
class EvalRow:
    key: tuple
    correct: int = 0
    wrong: int = 0

    @property
    def rate(self) -> float:
        total = self.correct + self.wrong
        return 100.0 * self.correct / total if total else 0.0


@dataclass(frozen=True)
class Subject:
    name: str
    paths: tuple[Path, ...]


def _natural_key(text: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", text)]


def load_dataset(root) -> list[Subject]:
    """Subjects from per-subject subdirectories, or from ``name_k.pgm`` flat files."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} not found")
    subjects = []
    for sub in sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: _natural_key(d.name)):
        files = sorted((f for f in sub.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES),
                       key=lambda f: _natural_key(f.name))
        if files:
            subjects.append(Subject(sub.name, tuple(files)))
    if subjects:
        return subjects
    groups: dict[str, list[Path]] = {}
    for f in root.iterdir():
        if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES:
            try:
                groups.setdefault(parse_subject_name(f.name), []).append(f)
            except NoUnderscore:
                log.warning("skipping %s: no subject prefix", f.name)
    return [Subject(name, tuple(sorted(files, key=lambda f: _natural_key(f.name))))
            for name, files in sorted(groups.items(), key=lambda kv: kv[0].encode())]


def _check_size(subjects: list[Subject], train_per_subject: int) -> None:
    if len(subjects) < 2:
        raise DatasetTooSmall(f"need at least 2 subjects, found {len(subjects)}")
    short = [s.name for s in subjects if len(s.paths) <= train_per_subject]
    if short:
        raise DatasetTooSmall(
            f"subjects with <= {train_per_subject} images: {', '.join(short[:5])}"
        )


def degrade(chip: np.ndarray, resolution: int) -> np.ndarray:
    """Down-sample a chip to resolution x resolution and back up to its size."""
    h, w = chip.shape
    if resolution == w and resolution == h:
        return chip
    return resize_bilinear(resize_bilinear(chip, resolution, resolution), w, h)


class _Harness:
    """Chip and descriptor caches over one dataset and configuration."""

    def __init__(self, cfg: EvalConfig, face_model: CascadeModel | None, eye_model: CascadeModel | None):
        self.cfg = cfg
        self.subjects = load_dataset(cfg.dataset_dir)
        self.face_model = face_model if face_model is not None or not cfg.detect else default_face_cascade()
        if eye_model is None and cfg.align:
            eye_model = default_eye_cascade()
        self.eye_model = eye_model if cfg.align else None
        self.prep = replace(cfg.prep, align=cfg.align)
        self.images: dict[tuple[int, int], np.ndarray] = {}
        self.templates: dict[tuple[int, int], np.ndarray | None] = {}
        self.queries: dict[tuple, np.ndarray | None] = {}

    def image(self, s: int, i: int) -> np.ndarray:
        key = (s, i)
        if key not in self.images:
            self.images[key] = read_pgm(self.subjects[s].paths[i])
        return self.images[key]

    def _box(self, img):
        return None if self.cfg.detect else whole_image_box(img)

    def template(self, s: int, i: int) -> np.ndarray | None:
        key = (s, i)
        if key not in self.templates:
            img = self.image(s, i)
            try:
                chip = prepare_enrollment(img, self.face_model, self.eye_model, self.prep, self._box(img))
                self.templates[key] = lbph_describe(chip.image, self.cfg.lbp)
            except NoFaceFound:
                log.info("no face in training image %s", self.subjects[s].paths[i])
                self.templates[key] = None
        return self.templates[key]

    def query(self, s: int, i: int, angle: float, resolution: int | None) -> np.ndarray | None:
        key = (s, i, angle, resolution)
        if key not in self.queries:
            img = self.image(s, i)
            if angle:
                h, w = img.shape
                img = rotate_bilinear(img, angle, (w - 1) / 2.0, (h - 1) / 2.0)
            try:
                chip = prepare_query(img, self.face_model, self.eye_model, self.cfg.clahe, self.prep,
                                     self._box(img))
                pixels = chip.image if resolution is None else degrade(chip.image, resolution)
                self.queries[key] = lbph_describe(pixels, self.cfg.lbp)
            except NoFaceFound:
                self.queries[key] = None
        return self.queries[key]

    def splits(self):
        """Yield (train, frames) per repeat as lists of (subject, image) indices."""
        cfg = self.cfg
        _check_size(self.subjects, cfg.train_per_subject)
        for r in range(cfg.repeats):
            rng = np.random.default_rng(cfg.seed + r)
            train, pool = [], []
            for s, subj in enumerate(self.subjects):
                perm = rng.permutation(len(subj.paths))
                train.extend((s, int(i)) for i in perm[: cfg.train_per_subject])
                pool.extend((s, int(i)) for i in perm[cfg.train_per_subject :])
            picks = rng.integers(0, len(pool), size=cfg.frames_per_repeat)
            yield train, [pool[k] for k in picks]

    def model(self, train) -> RecognizerModel:
        templates = [FaceTemplate(s, h) for s, i in train if (h := self.template(s, i)) is not None]
        names = {s: subj.name for s, subj in enumerate(self.subjects)}
        size = self.cfg.prep.chip_size
        return RecognizerModel(self.cfg.lbp, size, templates, self.cfg.threshold, names)

    def score(self, model: RecognizerModel, frames, angle: float, resolution: int | None, row: EvalRow):
        hists, truth = [], []
        for s, i in frames:
            h = self.query(s, i, angle, resolution)
            if h is None:
                row.wrong += 1
            else:
                hists.append(h)
                truth.append(s)
        if not hists:
            return
        if not model.templates:
            row.wrong += len(hists)
            return
        ids, _ = predict_histograms(model, np.stack(hists))
        hit = (ids == np.array(truth)) & (ids != UNKNOWN)
        row.correct += int(hit.sum())
        row.wrong += int(len(hit) - hit.sum())


def run_resolution_eval(cfg: EvalConfig, face_model: CascadeModel | None = None,
                        eye_model: CascadeModel | None = None) -> list[EvalRow]:
    """Rows keyed by (resolution,)."""
    h = _Harness(cfg, face_model, eye_model)
    rows = [EvalRow((res,)) for res in cfg.resolutions]
    for train, frames in h.splits():
        model = h.model(train)
        for row in rows:
            h.score(model, frames, 0.0, row.key[0], row)
    return rows


def run_rotation_eval(cfg: EvalConfig, face_model: CascadeModel | None = None,
                      eye_model: CascadeModel | None = None) -> list[EvalRow]:
    """Rows keyed by (angle,): test frames are rotated in-plane before the query pipeline."""
    if not cfg.rotations:
        raise ValueError("rotation eval needs at least one angle")
    h = _Harness(cfg, face_model, eye_model)
    rows = [EvalRow((float(a),)) for a in cfg.rotations]
    for train, frames in h.splits():
        model = h.model(train)
        for row in rows:
            h.score(model, frames, row.key[0], cfg.rotation_resolution, row)
    return rows


def run_trainsize_eval(cfg: EvalConfig, values, face_model: CascadeModel | None = None,
                       eye_model: CascadeModel | None = None) -> list[EvalRow]:
    """Rows keyed by (train_per_subject, resolution)."""
    values = list(values)
    if not values:
        raise ValueError("no train sizes given")
    _check_size(load_dataset(cfg.dataset_dir), max(values))
    rows = []
    for k in values:
        for row in run_resolution_eval(replace(cfg, train_per_subject=k), face_model, eye_model):
            rows.append(EvalRow((k,) + row.key, row.correct, row.wrong))
    return rows


RESOLUTION_HEADER = ("resolution",)
ROTATION_HEADER = ("angleDeg",)
TRAINSIZE_HEADER = ("trainPerSubject", "resolution")


def _fmt_key(v) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def format_csv(rows: list[EvalRow], key_header: tuple[str, ...]) -> str:
    out = io.StringIO()
    out.write(",".join(key_header + ("correct", "wrong", "rate")) + "\n")
    for row in rows:
        fields = [_fmt_key(v) for v in row.key] + [str(row.correct), str(row.wrong), f"{row.rate:.2f}"]
        out.write(",".join(fields) + "\n")
    return out.getvalue()
