"""Command line front-end.

Exit codes: 0 success, 1 bad invocation or unreadable input root,
2 partial success (per-file failures are listed).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from xml.sax.saxutils import quoteattr

from . import __version__
from .annot import (
    AnnotationError,
    Instance,
    emit_dota_text,
    format_number,
    obb_to_hbb,
    parse_detection_text,
    parse_dota_text,
    parse_icdar_xml,
    read_dota_file,
    validate,
)
from .augment import GenerationConfig, find_images, generate_dataset
from .metrics import EvalConfig, evaluate
from .raster import DecodeError, image_size

EXIT_OK, EXIT_FAIL, EXIT_PARTIAL = 0, 1, 2
JOBS_ENV = "OBBTABLE_JOBS"

log = logging.getLogger("obbtable")


class UsageError(Exception):
    pass


def _out(args, msg: str = "") -> None:
    if not args.quiet:
        print(msg, flush=True)


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _map_ordered(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _require_dir(path: Path, flag: str) -> None:
    if not path.is_dir():
        raise UsageError(f"{flag}: not a readable directory: {path}")


def cmd_convert(args) -> int:
    xml_dir = Path(args.xml_dir)
    out_dir = Path(args.out_dir)
    _require_dir(xml_dir, "--xml-dir")
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in xml_dir.iterdir() if p.is_file() and p.suffix.lower() == ".xml")

    def convert_one(path: Path):
        try:
            ann = parse_icdar_xml(path.read_text(encoding="utf-8"), path.stem)
        except (AnnotationError, OSError, UnicodeDecodeError) as exc:
            return path, None, str(exc)
        insts = ann.instances
        if args.hbb:
            insts = [Instance(obb_to_hbb(i.quad), i.category, i.difficulty) for i in insts]
        (out_dir / f"{ann.image_id}.txt").write_text(emit_dota_text(insts), encoding="utf-8")
        return path, len(insts), None

    results = _map_ordered(convert_one, files, args.jobs)
    failed = [(p, e) for p, n, e in results if e is not None]
    n_files = sum(1 for _, n, e in results if e is None)
    n_inst = sum(n for _, n, e in results if e is None)
    for p, e in failed:
        _err(f"skipped {p.name}: {e}")
    _out(args, f"{n_files} files, {n_inst} instances")
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_validate(args) -> int:
    ann_dir = Path(args.ann_dir)
    _require_dir(ann_dir, "--ann-dir")
    images = {}
    if args.img_dir:
        _require_dir(Path(args.img_dir), "--img-dir")
        images = find_images(Path(args.img_dir))
    files = sorted(ann_dir.glob("*.txt"))

    def check_one(path: Path):
        try:
            ann = read_dota_file(path)
        except (AnnotationError, OSError, UnicodeDecodeError) as exc:
            return path, None, str(exc)
        if path.stem in images:
            try:
                ann.image_size = image_size(images[path.stem])
            except DecodeError as exc:
                return path, None, str(exc)
        return path, validate(ann, margin=args.margin), None

    bad = 0
    for path, report, error in _map_ordered(check_one, files, args.jobs):
        if error is not None:
            bad += 1
            _out(args, f"{path.name}: parse error: {error}")
        elif not report.clean:
            bad += 1
            for f in report.findings:
                _out(args, f"{path.name}: {f}")
    _out(args, f"{len(files)} files checked, {bad} with findings")
    return EXIT_PARTIAL if bad else EXIT_OK


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--angle-range expects 'lo,hi', got {text!r}") from None
    return lo, hi


def _parse_fill(text):
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--fill expects comma-separated integers, got {text!r}") from None


def cmd_generate(args) -> int:
    src_img, src_ann = Path(args.src_img), Path(args.src_ann)
    _require_dir(src_img, "--src-img")
    _require_dir(src_ann, "--src-ann")
    emit = {e.strip() for e in args.emit.split(",") if e.strip()}
    if not emit or emit - {"hbb", "obb"}:
        raise UsageError(f"--emit expects a subset of 'hbb,obb', got {args.emit!r}")
    try:
        cfg = GenerationConfig(
            src_img=src_img,
            src_ann=src_ann,
            out=Path(args.out),
            split=args.split,
            seed=args.seed,
            angle_range=_parse_range(args.angle_range),
            emit_hbb="hbb" in emit,
            emit_obb="obb" in emit,
            interpolation=args.interp,
            fill=_parse_fill(args.fill),
            jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = generate_dataset(cfg)
    for r in manifest.skipped:
        _err(f"skipped {r.image_id}: {r.skipped}")
    _out(args, f"{manifest.images} images, {manifest.instances} instances, {len(manifest.skipped)} skipped")
    _out(args, f"manifest: {cfg.out / f'manifest_{cfg.split}.txt'}")
    _out(args, f"digest: sha256:{manifest.digest}")
    return EXIT_PARTIAL if manifest.skipped else EXIT_OK


def cmd_evaluate(args) -> int:
    det_dir, gt_dir = Path(args.det_dir), Path(args.gt_dir)
    _require_dir(det_dir, "--det-dir")
    _require_dir(gt_dir, "--gt-dir")
    extra = {}
    if args.t_iou is not None or args.t_theta is not None:
        try:
            extra["custom"] = EvalConfig(
                0.5 if args.t_iou is None else args.t_iou,
                90.0 if args.t_theta is None else args.t_theta,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    det_files = {p.stem: p for p in sorted(det_dir.glob("*.txt"))}
    gt_files = {p.stem: p for p in sorted(gt_dir.glob("*.txt"))}
    problems = []
    gts, dets = {}, {}
    for stem, path in gt_files.items():
        try:
            gts[stem] = parse_dota_text(path.read_text(encoding="utf-8"))
        except (AnnotationError, OSError, UnicodeDecodeError) as exc:
            problems.append(f"{path}: {exc}")
            gts[stem] = []
    for stem, path in det_files.items():
        try:
            dets[stem] = parse_detection_text(path.read_text(encoding="utf-8"))
        except (AnnotationError, OSError, UnicodeDecodeError) as exc:
            problems.append(f"{path}: {exc}")
    for stem in sorted(gt_files.keys() - det_files.keys()):
        problems.append(f"missing detections for {stem}")
    for stem in sorted(det_files.keys() - gt_files.keys()):
        problems.append(f"missing ground truth for {stem}")

    report = evaluate(dets, gts, extra, method="allpoints" if args.all_points else "11point")
    for p in problems:
        _err(p)
    for name, r in report.results.items():
        _out(args, f"{name}={r.ap:.4f}  tp={r.tp} fp={r.fp} fn={r.fn} "
                   f"precision={r.precision:.4f} recall={r.recall:.4f}")
    report_path = Path(args.report) if args.report else det_dir.parent / f"{det_dir.name}.eval.txt"
    report_path.write_text(report.to_keyvalue(), encoding="utf-8")
    _out(args, f"report: {report_path}")
    return EXIT_PARTIAL if problems else EXIT_OK


def render_svg(image_href: str, size: tuple[int, int], instances) -> str:
    """SVG overlay: one closed polygon per box, vertex A dotted, edge A->B highlighted."""
    w, h = size
    stroke = max(1.0, min(w, h) / 300)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'  <image x="0" y="0" width="{w}" height="{h}" href={quoteattr(image_href)} '
        f'xlink:href={quoteattr(image_href)}/>',
    ]
    sw = format_number(stroke)
    for i, inst in enumerate(instances):
        pts = " ".join(f"{format_number(p.x)},{format_number(p.y)}" for p in inst.quad.points)
        a, b = inst.quad.a, inst.quad.b
        lines += [
            f'  <g class="instance" id="instance-{i}">',
            f'    <polygon points="{pts}" fill="none" stroke="#00a000" stroke-width="{sw}"/>',
            f'    <line class="edge-ab" x1="{format_number(a.x)}" y1="{format_number(a.y)}" '
            f'x2="{format_number(b.x)}" y2="{format_number(b.y)}" stroke="#e00000" '
            f'stroke-width="{format_number(stroke * 2)}"/>',
            f'    <circle class="vertex-a" cx="{format_number(a.x)}" cy="{format_number(a.y)}" '
            f'r="{format_number(stroke * 4)}" fill="#e00000"/>',
            f'    <text x="{format_number(a.x)}" y="{format_number(a.y)}" fill="#e00000" '
            f'font-size="{format_number(stroke * 12)}">{inst.category}</text>',
            "  </g>",
        ]
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_render(args) -> int:
    img, ann_path, out = Path(args.img), Path(args.ann), Path(args.out)
    if not img.is_file() or not ann_path.is_file():
        raise UsageError(f"missing input: {img if not img.is_file() else ann_path}")
    try:
        size = image_size(img)
        instances = parse_dota_text(ann_path.read_text(encoding="utf-8"))
    except (DecodeError, AnnotationError) as exc:
        raise UsageError(str(exc)) from None
    href = os.path.relpath(img.resolve(), out.resolve().parent)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_svg(Path(href).as_posix(), size, instances), encoding="utf-8")
    _out(args, f"{len(instances)} instances -> {out}")
    return EXIT_OK


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # shared so global flags work before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)

    def default(v):
        return argparse.SUPPRESS if suppress else v

    p.add_argument("--seed", type=int, default=default(0), help="seed for angle draws (default 0)")
    p.add_argument("--quiet", action="store_true", default=default(False), help="suppress normal output")
    p.add_argument("--jobs", type=int, default=default(None),
                   help=f"parallel workers (default ${JOBS_ENV}, else 1)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obbtable",
        description="Rotated table-detection datasets: convert, validate, generate, evaluate, render.",
        parents=[_global_options(False)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_options(True)]

    p = sub.add_parser("convert", parents=common, help="ICDAR XML -> DOTA-style txt")
    p.add_argument("--xml-dir", required=True)
    p.add_argument("--out-dir", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--hbb", action="store_true", help="emit axis-aligned envelopes")
    g.add_argument("--obb", action="store_true", help="emit points as written (default)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("validate", parents=common, help="check clockwise/start-point constraints")
    p.add_argument("--ann-dir", required=True)
    p.add_argument("--img-dir", help="enables the out-of-bounds check")
    p.add_argument("--margin", type=float, default=1e-6, help="out-of-bounds tolerance in pixels")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("generate", parents=common, help="build a rotated dataset split")
    p.add_argument("--src-img", required=True)
    p.add_argument("--src-ann", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", help="split name used in folder names (train/test)")
    p.add_argument("--angle-range", default="0,360", help="lo,hi in degrees (default 0,360)")
    p.add_argument("--emit", default="hbb,obb", help="comma list from {hbb,obb}")
    p.add_argument("--interp", choices=("nearest", "bilinear"), default="bilinear")
    p.add_argument("--fill", help="border value(s), e.g. 255 or 255,255,255 (default 0)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=common, help="AP50(T<90) and AP75(T<40)")
    p.add_argument("--det-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--t-iou", type=float)
    p.add_argument("--t-theta", type=float)
    p.add_argument("--all-points", action="store_true", help="all-points AP instead of 11-point")
    p.add_argument("--report", help="key=value report path (default: beside --det-dir)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=common, help="SVG overlay of boxes on an image")
    p.add_argument("--img", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def _resolve_jobs(value) -> int:
    if value is None:
        env = os.environ.get(JOBS_ENV)
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"${JOBS_ENV} must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"--jobs must be >= 1, got {value}")
    return value


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_FAIL if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.jobs = _resolve_jobs(args.jobs)
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        return args.func(args)
    except UsageError as exc:
        _err(f"error: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
