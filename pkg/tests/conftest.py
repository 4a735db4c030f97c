from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lbphface.haar import FaceBox, default_eye_cascade, default_face_cascade
from lbphface.image import read_pgm
from lbphface.lbph import FaceTemplate, LbpParams, RecognizerModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
ORL = DATA / "orl"

# hand-annotated eye centres (x, y) on 92x112 ORL images
EYES = {
    ("s1", 1): ((25.0, 51.0), (62.0, 50.0)),
    ("s5", 1): ((13.0, 57.0), (46.0, 57.0)),
}


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def orl_image(subject: int, index: int) -> np.ndarray:
    return read_pgm(ORL / f"s{subject}" / f"{index}.pgm")


def composite(face: np.ndarray, size: int = 300, background: int = 128):
    """Paste ``face`` centred on a uniform square; returns (image, paste box)."""
    h, w = face.shape
    img = np.full((size, size), background, dtype=np.uint8)
    y, x = (size - h) // 2, (size - w) // 2
    img[y : y + h, x : x + w] = face
    return img, FaceBox(x, y, w, h)


def random_model(rng: np.random.Generator) -> RecognizerModel:
    """A small model with random names, counts and threshold."""
    mode = str(rng.choice(["basic", "circular"]))
    params = LbpParams(
        r=1 if mode == "basic" else int(rng.integers(1, 3)),
        grid_x=int(rng.integers(1, 4)),
        grid_y=int(rng.integers(1, 4)),
        mode=mode,
    )
    n = int(rng.integers(1, 5))
    letters = np.array(list("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-"))
    names = set()
    while len(names) < n:
        names.add("".join(rng.choice(letters, int(rng.integers(1, 9)))))
    names = dict(enumerate(sorted(names, key=str.encode)))
    templates = [
        FaceTemplate(int(rng.integers(0, n)), rng.integers(0, 10**6, params.length, dtype=np.int64))
        for _ in range(int(rng.integers(0, 6)))
    ]
    threshold = float("inf") if rng.random() < 0.2 else float(rng.random() * 10.0 ** rng.integers(-3, 8))
    return RecognizerModel(params, int(rng.integers(8, 200)), templates, threshold, names)


@pytest.fixture(scope="session")
def face_cascade():
    return default_face_cascade()


@pytest.fixture(scope="session")
def eye_cascade():
    return default_eye_cascade()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
