"""Command-line interface: ``lbphface <command> [options]``.

Exit status is 0 on success, 2 when no face was found and 1 for any other
error (including usage errors).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

from .db import EnrollmentStore, Watcher, enroll, load_model, publish_model, train_store
from .errors import FaceError, NoFaceFound
from .evaluation import (
    RESOLUTION_HEADER,
    ROTATION_HEADER,
    TRAINSIZE_HEADER,
    EvalConfig,
    format_csv,
    run_resolution_eval,
    run_rotation_eval,
    run_trainsize_eval,
)
from .haar import DetectParams, default_eye_cascade, default_face_cascade, detect_multiscale, load_cascade
from .image import ClaheParams, as_gray, read_pgm
from .lbph import predict
from .prep import PrepParams, prepare_query

log = logging.getLogger("lbphface")

EXIT_OK, EXIT_ERROR, EXIT_NOFACE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _cascades(args):
    face = load_cascade(args.cascade) if getattr(args, "cascade", None) else default_face_cascade()
    eye = load_cascade(args.eye_cascade) if getattr(args, "eye_cascade", None) else default_eye_cascade()
    return face, eye


def _prep(args, chip_size: int = 100) -> PrepParams:
    return PrepParams(chip_size=chip_size, align=not getattr(args, "no_align", False))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_detect(args, out) -> int:
    model = load_cascade(args.cascade)
    params = DetectParams(args.scale_factor, args.min_neighbors, args.min_size)
    boxes = detect_multiscale(model, read_pgm(args.input), params)
    for b in boxes:
        print(f"{b.x} {b.y} {b.w} {b.h} {b.neighbors}", file=out)
    return EXIT_OK if boxes else EXIT_NOFACE


def cmd_enroll(args, out) -> int:
    face, eye = _cascades(args)
    path = enroll(read_pgm(args.input), args.name, EnrollmentStore(args.db_dir), face, eye, _prep(args))
    print(f"enrolled {args.name} -> {path}", file=out)
    return EXIT_OK


def cmd_train(args, out) -> int:
    model = train_store(EnrollmentStore(args.db_dir), quantile=args.quantile)
    publish_model(model, args.model)
    print(
        f"trained {len(model.templates)} templates, {len(model.names)} subjects, "
        f"threshold {model.threshold:.3f} -> {args.model}",
        file=out,
    )
    return EXIT_OK


def _query_chip(img, model, face, eye, args):
    """A frame already at chip size is taken as a chip; anything else runs the query pipeline."""
    img = as_gray(img)
    if img.shape == (model.chip_size, model.chip_size):
        return img
    return prepare_query(img, face, eye, ClaheParams(), _prep(args, model.chip_size)).image


def cmd_recognize(args, out) -> int:
    model = load_model(args.model)
    if args.threshold is not None:
        model.threshold = args.threshold
    face, eye = _cascades(args)
    sid, dist = predict(model, _query_chip(read_pgm(args.input), model, face, eye, args))
    print(f"{model.name_of(sid)} {dist:.3f}", file=out)
    return EXIT_OK


def cmd_watch(args, out) -> int:
    face, eye = _cascades(args)
    Path(args.db_dir).mkdir(parents=True, exist_ok=True)
    watcher = Watcher(args.incoming, EnrollmentStore(args.db_dir), args.model, face, eye,
                      _prep(args), poll_ms=args.poll_ms)
    print(f"watching {args.incoming} every {args.poll_ms} ms", file=out, flush=True)
    try:
        watcher.run(max_polls=args.max_polls)
    except KeyboardInterrupt:
        pass
    print(f"stopped after {watcher.replacements} model update(s)", file=out)
    return EXIT_OK


def stream_frames(model, frames, face, eye, prep: PrepParams, interval_ms: float, out,
                  clahe: ClaheParams = ClaheParams()) -> list[float]:
    """Process frames on a fixed cadence; returns per-frame pipeline times in ms."""
    times = []
    start = time.perf_counter()
    for k, path in enumerate(frames):
        due = start + k * interval_ms / 1000.0
        delay = due - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
        img = read_pgm(path)
        t0 = time.perf_counter()
        try:
            chip = prepare_query(img, face, eye, clahe, prep)
            sid, dist = predict(model, chip.image)
        except NoFaceFound:
            print(f"{path.name} noface", file=out, flush=True)
            continue
        elapsed = (time.perf_counter() - t0) * 1000.0
        times.append(elapsed)
        print(f"{path.name} {model.name_of(sid)} {dist:.3f} {elapsed:.1f}", file=out, flush=True)
    return times


def cmd_stream(args, out) -> int:
    model = load_model(args.model)
    face, eye = _cascades(args)
    frames_dir = Path(args.frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory {frames_dir} not found")
    frames = sorted((f for f in frames_dir.iterdir() if f.suffix.lower() == ".pgm"), key=lambda f: f.name)
    stream_frames(model, frames, face, eye, _prep(args, model.chip_size), args.interval_ms, out)
    return EXIT_OK


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        dataset_dir=Path(args.dataset),
        train_per_subject=args.train_per_subject,
        resolutions=args.resolutions,
        repeats=args.repeats,
        frames_per_repeat=args.frames,
        seed=args.seed,
        rotations=args.rotations,
        rotation_resolution=args.rotation_resolution,
        threshold=args.threshold,
        detect=args.detect,
        align=not args.no_align,
    )


def cmd_eval(args, out) -> int:
    cfg = _eval_config(args)
    if args.experiment == "resolution":
        text = format_csv(run_resolution_eval(cfg), RESOLUTION_HEADER)
    elif args.experiment == "rotation":
        text = format_csv(run_rotation_eval(cfg), ROTATION_HEADER)
    else:
        text = format_csv(run_trainsize_eval(cfg, args.train_sizes), TRAINSIZE_HEADER)
    if args.output:
        Path(args.output).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lbphface", description="LBPH face detection and recognition")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cascades(p, required=False):
        p.add_argument("--cascade", required=required, help="face cascade XML (default: bundled)")
        p.add_argument("--eye-cascade", help="eye cascade XML (default: bundled)")

    p = sub.add_parser("detect", help="print face boxes in an image")
    p.add_argument("--cascade", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--scale-factor", type=float, default=1.1)
    p.add_argument("--min-neighbors", type=int, default=3)
    p.add_argument("--min-size", type=int, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("enroll", help="add a face chip to the enrollment store")
    p.add_argument("--name", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--db-dir", required=True)
    cascades(p)
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("train", help="train a model from the enrollment store")
    p.add_argument("--db-dir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--quantile", type=float, default=0.95)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recognize", help="identify the face in an image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=None)
    cascades(p)
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("watch", help="enroll images dropped into a directory and retrain")
    p.add_argument("--incoming", required=True)
    p.add_argument("--db-dir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--poll-ms", type=int, default=1000)
    p.add_argument("--max-polls", type=int, default=None, help="stop after this many polls")
    cascades(p)
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("stream", help="recognize a directory of frames at a fixed cadence")
    p.add_argument("--model", required=True)
    p.add_argument("--frames-dir", required=True)
    p.add_argument("--interval-ms", type=float, default=100.0)
    cascades(p)
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", help="accuracy experiments, CSV output")
    p.add_argument("experiment", choices=("resolution", "rotation", "trainsize"))
    p.add_argument("--dataset", required=True, help="subject-per-subdirectory or name_k.pgm files")
    p.add_argument("--train-per-subject", type=int, default=8)
    p.add_argument("--resolutions", type=_ints, default=(15, 20, 30, 35, 45))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--frames", type=int, default=200, help="test frames per repeat")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotations", type=_floats, default=(-30.0, 0.0, 30.0))
    p.add_argument("--rotation-resolution", type=int, default=None)
    p.add_argument("--train-sizes", type=_ints, default=(4, 8))
    p.add_argument("--threshold", type=float, default=math.inf)
    p.add_argument("--detect", action="store_true", help="detect faces instead of using the whole image")
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=err)
        return EXIT_ERROR
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=err,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except NoFaceFound as exc:
        print(f"no face found: {exc}", file=err)
        return EXIT_NOFACE
    except (FaceError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
