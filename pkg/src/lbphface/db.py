"""Enrollment store, name table, model files and the directory watcher.

Model file (LBPHDB v1, LF line endings)::

    LBPHDB 1
    params P=8 R=1 mode=circular grid=8x8 chip=100
    threshold <float repr or inf>
    names <n>
    <id> <name>                      (n lines, ids ascending)
    templates <m>
    <subjectId> <c0> <c1> ...        (m lines)
    END
"""

from __future__ import annotations

import logging
import math
import os
import re
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadHeader,
    Corrupt,
    EmptyNameSet,
    EmptyStore,
    FaceError,
    IllegalName,
    InsufficientSamples,
    InvariantViolation,
    MalformedLine,
    NoUnderscore,
    VersionUnsupported,
)
from .haar import CascadeModel
from .image import read_pgm, write_pgm
from .lbph import FaceTemplate, LbpParams, RecognizerModel, calibrate_threshold, train
from .prep import PrepParams, prepare_enrollment

log = logging.getLogger(__name__)

MAGIC = "LBPHDB"
VERSION = 1
NAMELIST = "NameList.txt"


# ---------------------------------------------------------------------------
# Names
# ---------------------------------------------------------------------------

def parse_subject_name(filename: str) -> str:
    """Subject name of ``name_index.ext``: everything before the first underscore."""
    stem = Path(filename).name.rsplit(".", 1)[0]
    if "_" not in stem:
        raise NoUnderscore(f"{filename!r} has no '_' before the extension")
    name = stem.split("_", 1)[0]
    if not name:
        raise IllegalName(f"{filename!r} has an empty subject name")
    return name


def validate_name(name: str) -> str:
    # whitespace is structural in both text formats, '_' and separators in file names
    if not name or re.search(r"[_/\\\s]", name) or name in (".", ".."):
        raise IllegalName(f"illegal subject name {name!r}")
    return name


@dataclass(frozen=True)
class NameTable:
    names: tuple[str, ...]

    def __post_init__(self):
        for n in self.names:
            validate_name(n)
        if list(self.names) != sorted(set(self.names), key=str.encode):
            raise InvariantViolation("names must be unique and sorted")

    @property
    def entries(self) -> list[tuple[int, str]]:
        return list(enumerate(self.names))

    def id_of(self, name: str) -> int:
        return self.names.index(name)

    def as_dict(self) -> dict[int, str]:
        return dict(enumerate(self.names))

    def __len__(self):
        return len(self.names)


def build_name_table(names) -> NameTable:
    names = set(names)
    if not names:
        raise EmptyNameSet("no names given")
    for n in names:
        validate_name(n)
    return NameTable(tuple(sorted(names, key=str.encode)))


def _atomic_write(path, data: bytes) -> None:
    """Write to a temporary file beside ``path``, then rename over it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def dumps_namelist(t: NameTable) -> str:
    return "".join(f"{i}\t{n}\n" for i, n in t.entries)


def loads_namelist(text: str) -> NameTable:
    ids, names = [], []
    for lineno, line in enumerate(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"), 1):
        m = re.fullmatch(r"(\d+)\t([^\t]+)", line)
        if not m:
            raise MalformedLine(f"line {lineno}: {line!r}")
        ids.append(int(m.group(1)))
        names.append(m.group(2))
    if ids != list(range(len(ids))):
        raise InvariantViolation(f"ids {ids[:10]} are not 0..n-1 in order")
    try:
        return NameTable(tuple(names))
    except IllegalName as exc:
        raise InvariantViolation(str(exc)) from exc


def save_namelist(t: NameTable, path) -> None:
    _atomic_write(path, dumps_namelist(t).encode())


def load_namelist(path) -> NameTable:
    return loads_namelist(Path(path).read_bytes().decode())


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def dumps_model(m: RecognizerModel) -> str:
    p = m.params
    lines = [
        f"{MAGIC} {VERSION}",
        f"params P={p.p} R={p.r} mode={p.mode} grid={p.grid_x}x{p.grid_y} chip={m.chip_size}",
        f"threshold {'inf' if math.isinf(m.threshold) else repr(float(m.threshold))}",
        f"names {len(m.names)}",
    ]
    lines += [f"{i} {m.names[i]}" for i in sorted(m.names)]
    lines.append(f"templates {len(m.templates)}")
    for t in m.templates:
        lines.append(f"{t.subject_id} " + " ".join(map(str, np.asarray(t.histogram).tolist())))
    lines.append("END")
    return "\n".join(lines) + "\n"


_PARAMS = re.compile(r"params P=(\d+) R=(\d+) mode=(\w+) grid=(\d+)x(\d+) chip=(\d+)")


def loads_model(text: str) -> RecognizerModel:
    lines = text.split("\n")
    head = lines[0].split(" ")
    if head[0] != MAGIC or len(head) != 2:
        raise BadHeader(f"not an {MAGIC} file: {lines[0][:40]!r}")
    if head[1] != str(VERSION):
        raise VersionUnsupported(f"{MAGIC} version {head[1]!r}")
    if not text.endswith("END\n"):
        raise Corrupt("missing END trailer")
    lines = lines[:-1]
    pos = 1

    def take(what):
        nonlocal pos
        if pos >= len(lines):
            raise Corrupt(f"file ends before {what}")
        pos += 1
        return lines[pos - 1]

    try:
        m = _PARAMS.fullmatch(take("params"))
        if not m:
            raise Corrupt("bad params line")
        params = LbpParams(int(m[1]), int(m[2]), int(m[4]), int(m[5]), m[3])
        chip = int(m[6])
        kw, value = take("threshold").split(" ")
        if kw != "threshold":
            raise Corrupt("bad threshold line")
        threshold = float(value)
        kw, n = take("names").split(" ")
        if kw != "names":
            raise Corrupt("bad names line")
        names = {}
        for _ in range(int(n)):
            sid, name = take("name entry").split(" ", 1)
            names[int(sid)] = name
        if list(names) != sorted(names):
            raise Corrupt("name ids not ascending")
        kw, n = take("templates").split(" ")
        if kw != "templates":
            raise Corrupt("bad templates line")
        templates = []
        for _ in range(int(n)):
            fields = take("template").split(" ")
            if len(fields) != params.length + 1:
                raise Corrupt(f"template with {len(fields) - 1} counts, expected {params.length}")
            hist = np.array(fields[1:], dtype=np.int64)
            if (hist < 0).any():
                raise Corrupt("negative histogram count")
            templates.append(FaceTemplate(int(fields[0]), hist))
        if take("END") != "END" or pos != len(lines):
            raise Corrupt("unexpected content before END")
        return RecognizerModel(params, chip, templates, threshold, names)
    except Corrupt:
        raise
    except (ValueError, FaceError) as exc:
        raise Corrupt(str(exc)) from exc


def save_model(m: RecognizerModel, path) -> None:
    _atomic_write(path, dumps_model(m).encode("ascii"))


def load_model(path) -> RecognizerModel:
    data = Path(path).read_bytes()
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise Corrupt("model file is not ASCII") from exc
    return loads_model(text)


# ---------------------------------------------------------------------------
# Enrollment store
# ---------------------------------------------------------------------------

_ENTRY = re.compile(r"([^_/\\\s]+)_(\d+)\.pgm")


@dataclass(frozen=True)
class StoreEntry:
    name: str
    index: int
    path: Path


class EnrollmentStore:
    """Flat directory of ``<name>_<index>.pgm`` chips."""

    def __init__(self, root):
        self.root = Path(root)

    def entries(self) -> list[StoreEntry]:
        out = []
        if not self.root.is_dir():
            return out
        for f in self.root.iterdir():
            m = _ENTRY.fullmatch(f.name)
            if m and f.is_file():
                out.append(StoreEntry(m[1], int(m[2]), f))
        return sorted(out, key=lambda e: (e.name.encode(), e.index))

    def next_index(self, name: str) -> int:
        indices = [e.index for e in self.entries() if e.name == name]
        return max(indices) + 1 if indices else 0

    def add(self, name: str, chip: np.ndarray) -> Path:
        validate_name(name)
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / f"{name}_{self.next_index(name)}.pgm"
        tmp = path.with_name("." + path.name + ".tmp")
        write_pgm(tmp, chip)
        os.replace(tmp, path)
        return path


def enroll(img, name: str, store: EnrollmentStore, face_model: CascadeModel,
           eye_model: CascadeModel | None, prep: PrepParams = PrepParams()) -> Path:
    validate_name(name)
    chip = prepare_enrollment(img, face_model, eye_model, prep)
    return store.add(name, chip.image)


def train_store(store: EnrollmentStore, p: LbpParams = LbpParams(), quantile: float = 0.95) -> RecognizerModel:
    entries = store.entries()
    if not entries:
        raise EmptyStore(f"no enrolled chips in {store.root}")
    table = build_name_table(e.name for e in entries)
    chips = [(table.id_of(e.name), read_pgm(e.path)) for e in entries]
    model = train(chips, p, table.as_dict())
    try:
        calibrate_threshold(model, quantile)
    except InsufficientSamples:
        model.threshold = math.inf
    return model


def publish_model(model: RecognizerModel, model_path) -> None:
    """Atomically write the model and, beside it, its NameList.txt."""
    model_path = Path(model_path)
    save_model(model, model_path)
    save_namelist(NameTable(tuple(model.names[i] for i in sorted(model.names))),
                  model_path.with_name(NAMELIST))


# ---------------------------------------------------------------------------
# Watcher
# ---------------------------------------------------------------------------

class Watcher:
    """Poll a directory, enroll stable new images, retrain once per batch.

    A file is taken once its size has been the same on two consecutive
    polls.  Processed files move to ``incoming/processed``; files that fail
    move to ``incoming/rejected``.
    """

    def __init__(self, incoming, store: EnrollmentStore, model_path, face_model: CascadeModel,
                 eye_model: CascadeModel | None, prep: PrepParams = PrepParams(),
                 lbp: LbpParams = LbpParams(), poll_ms: int = 1000):
        self.incoming = Path(incoming)
        self.store = store
        self.model_path = Path(model_path)
        self.face_model = face_model
        self.eye_model = eye_model
        self.prep = prep
        self.lbp = lbp
        self.poll_ms = poll_ms
        self.sizes: dict[str, int] = {}
        self.replacements = 0
        for d in (self.incoming, self.model_path.parent):
            if not d.is_dir() or not os.access(d, os.R_OK | os.W_OK):
                raise OSError(f"directory {d} is missing or not accessible")

    def _archive(self, f: Path, sub: str) -> None:
        dest = self.incoming / sub
        dest.mkdir(exist_ok=True)
        shutil.move(str(f), str(dest / f.name))

    def poll_once(self) -> int:
        """One poll; returns the number of images enrolled."""
        current = {}
        for f in self.incoming.iterdir():
            if f.is_file() and not f.name.startswith("."):
                try:
                    current[f.name] = f.stat().st_size
                except FileNotFoundError:
                    continue
        ready = sorted(n for n, size in current.items() if self.sizes.get(n) == size)
        self.sizes = {n: s for n, s in current.items() if n not in ready}
        enrolled = 0
        for name in ready:
            f = self.incoming / name
            try:
                subject = parse_subject_name(name)
                enroll(read_pgm(f), subject, self.store, self.face_model, self.eye_model, self.prep)
            except (FaceError, OSError) as exc:
                log.warning("rejected %s: %s", name, exc)
                self._archive(f, "rejected")
                continue
            self._archive(f, "processed")
            enrolled += 1
        if enrolled:
            publish_model(train_store(self.store, self.lbp), self.model_path)
            self.replacements += 1
            log.info("enrolled %d image(s); model replaced", enrolled)
        return enrolled

    def run(self, stop=None, max_polls: int | None = None) -> None:
        """Poll until ``stop`` (a threading.Event) is set or max_polls is reached."""
        polls = 0
        while not (stop is not None and stop.is_set()):
            self.poll_once()
            polls += 1
            if max_polls is not None and polls >= max_polls:
                return
            if stop is not None:
                stop.wait(self.poll_ms / 1000.0)
            else:
                time.sleep(self.poll_ms / 1000.0)
