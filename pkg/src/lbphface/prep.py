"""Face normalization: eye localization, in-plane alignment and chip extraction.

Enrollment images are median filtered before cropping; queries go through
CLAHE and a 3x3 binomial blur before detection.  Both paths end in a square
chip of ``PrepParams.chip_size`` pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall, NoFaceFound, OutOfBounds
from .haar import CascadeModel, DetectParams, FaceBox, detect_multiscale
from .image import (
    ClaheParams,
    apply_clahe,
    as_gray,
    binomial_blur_3x3,
    median_filter_3x3,
    resize_bilinear,
    rotate_bilinear,
    rotate_region,
)


@dataclass(frozen=True)
class EyePair:
    left: tuple[float, float]
    right: tuple[float, float]

    def __post_init__(self):
        if not self.left[0] < self.right[0]:
            raise ValueError("left eye must have the smaller x")

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.left[0] + self.right[0]) / 2.0, (self.left[1] + self.right[1]) / 2.0)


@dataclass(frozen=True)
class FaceChip:
    image: np.ndarray
    source_box: FaceBox
    aligned: bool = False


@dataclass(frozen=True)
class PrepParams:
    chip_size: int = 100
    eye_search_band: float = 0.6
    max_correction: float = 45.0
    align: bool = True
    detect: DetectParams = DetectParams()

    def __post_init__(self):
        if self.chip_size < 8:
            raise ValueError("chip_size must be at least 8")
        if not 0 < self.eye_search_band <= 1:
            raise ValueError("eye_search_band must lie in (0, 1]")
        if self.max_correction < 0:
            raise ValueError("max_correction must be nonnegative")


def _check_box(img: np.ndarray, face: FaceBox) -> None:
    h, w = img.shape
    if face.w < 1 or face.h < 1 or face.x < 0 or face.y < 0 or face.x + face.w > w or face.y + face.h > h:
        raise OutOfBounds(f"face box {face} outside {w}x{h} image")


def detect_eyes(img, face: FaceBox, eye_model: CascadeModel, p: PrepParams = PrepParams()) -> EyePair | None:
    """Best eye detection in each half of the face's upper band, or None."""
    img = as_gray(img)
    _check_box(img, face)
    band_h = max(1, int(round(p.eye_search_band * face.h)))
    region = img[face.y : face.y + band_h, face.x : face.x + face.w]
    params = DetectParams(
        scale_factor=p.detect.scale_factor,
        min_neighbors=p.detect.min_neighbors,
        min_size=max(1, face.w // 8),
        step_fraction=p.detect.step_fraction,
    )
    try:
        found = detect_multiscale(eye_model, region, params)
    except ImageTooSmall:
        return None
    mid = face.w / 2.0
    left = next((b for b in found if b.center[0] < mid), None)
    right = next((b for b in found if b.center[0] >= mid), None)
    if left is None or right is None:
        return None
    lx, ly = left.center
    rx, ry = right.center
    if not lx < rx:
        return None
    return EyePair((face.x + lx, face.y + ly), (face.x + rx, face.y + ry))


def eye_angle(eyes: EyePair) -> float:
    """Tilt of the eye line in degrees (positive when the right eye is lower)."""
    return math.degrees(math.atan2(eyes.right[1] - eyes.left[1], eyes.right[0] - eyes.left[0]))


def correction_angle(eyes: EyePair, p: PrepParams = PrepParams()) -> float | None:
    """Rotation align_face applies, or None when the tilt exceeds max_correction."""
    theta = eye_angle(eyes)
    if abs(theta) > p.max_correction:
        return None
    return -theta


def align_face(img, face: FaceBox, eyes: EyePair, p: PrepParams = PrepParams()) -> np.ndarray:
    """Rotate the whole image about the eye midpoint so the eyes are level."""
    img = as_gray(img)
    angle = correction_angle(eyes, p)
    if angle is None or angle == 0:
        return img.copy()
    cx, cy = eyes.midpoint
    return rotate_bilinear(img, angle, cx, cy)


def extract_chip(img, face: FaceBox, p: PrepParams = PrepParams(), aligned: bool = False) -> FaceChip:
    img = as_gray(img)
    _check_box(img, face)
    crop = img[face.y : face.y + face.h, face.x : face.x + face.w]
    return FaceChip(resize_bilinear(crop, p.chip_size, p.chip_size), face, aligned)


def whole_image_box(img) -> FaceBox:
    """Face box covering the full image, for datasets that are already cropped."""
    h, w = as_gray(img).shape
    return FaceBox(0, 0, w, h, 0)


def _locate(img, face_model, p):
    """Highest-neighbour face, with undersized images counting as faceless."""
    if face_model is None:
        raise NoFaceFound("no face model and no face box given")
    try:
        found = detect_multiscale(face_model, img, p.detect)
    except ImageTooSmall as exc:
        raise NoFaceFound(str(exc)) from exc
    if not found:
        raise NoFaceFound("no face detected")
    return found[0]


def _aligned_crop(img, face: FaceBox, eye_model, p: PrepParams, margin: int):
    """Face region of the aligned image, grown by ``margin`` pixels where the image allows.

    Equals cropping ``align_face``'s output but only rotates the pixels kept.
    Returns (region, (x, y) of the face box inside the region, aligned).
    """
    _check_box(img, face)
    h, w = img.shape
    x0, y0 = max(0, face.x - margin), max(0, face.y - margin)
    x1, y1 = min(w, face.x + face.w + margin), min(h, face.y + face.h + margin)
    angle = None
    if p.align and eye_model is not None:
        eyes = detect_eyes(img, face, eye_model, p)
        if eyes is not None:
            angle = correction_angle(eyes, p)
    if angle is None:
        return img[y0:y1, x0:x1], (face.x - x0, face.y - y0), False
    cx, cy = eyes.midpoint
    region = rotate_region(img, angle, cx, cy, x0, y0, x1 - x0, y1 - y0)
    return region, (face.x - x0, face.y - y0), True


def _chip(region, offset, face: FaceBox, p: PrepParams, aligned: bool) -> FaceChip:
    ox, oy = offset
    crop = region[oy : oy + face.h, ox : ox + face.w]
    return FaceChip(resize_bilinear(crop, p.chip_size, p.chip_size), face, aligned)


def prepare_enrollment(img, face_model: CascadeModel | None, eye_model: CascadeModel | None,
                       p: PrepParams = PrepParams(), face: FaceBox | None = None) -> FaceChip:
    """detect -> eyes -> align -> median filter -> crop.

    A caller-supplied ``face`` box skips detection.
    """
    img = as_gray(img)
    if face is None:
        face = _locate(img, face_model, p)
    # one extra pixel each side so the median sees the same neighbours as on the full image
    region, offset, aligned = _aligned_crop(img, face, eye_model, p, margin=1)
    return _chip(median_filter_3x3(region), offset, face, p, aligned)


def prepare_query(img, face_model: CascadeModel | None, eye_model: CascadeModel | None,
                  clahe: ClaheParams = ClaheParams(), p: PrepParams = PrepParams(),
                  face: FaceBox | None = None) -> FaceChip:
    """CLAHE -> blur -> detect -> eyes -> align -> crop."""
    enhanced = binomial_blur_3x3(apply_clahe(as_gray(img), clahe))
    if face is None:
        face = _locate(enhanced, face_model, p)
    region, offset, aligned = _aligned_crop(enhanced, face, eye_model, p, margin=0)
    return _chip(region, offset, face, p, aligned)
