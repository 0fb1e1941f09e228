"""Annotation formats: DOTA-style text lines, ICDAR-style XML, and the
start-point / clockwise checks applied to table boxes.

A DOTA-style line is::

    xA yA xB yB xC yC xD yD <category> <difficulty>

with A the table's top-left corner and A, B, C, D clockwise on screen.
Detection files use the same grammar with a confidence score in place of
the difficulty flag.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (
    AREA_TOL,
    GeometryError,
    Point,
    Quad,
    angle_diff,
    quad_angle,
    signed_area,
)

DEFAULT_CATEGORY = "table"
# start-point heuristic only applies within this many degrees of horizontal
AXIS_ALIGNED_TOL_DEG = 5.0


class AnnotationError(ValueError):
    pass


class AnnotationParseError(AnnotationError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class IngestError(AnnotationError):
    pass


@dataclass(frozen=True)
class Instance:
    quad: Quad
    category: str = DEFAULT_CATEGORY
    difficulty: int = 0

    def __post_init__(self):
        if not self.category or any(ch.isspace() for ch in self.category):
            raise AnnotationError(f"invalid category {self.category!r}")
        if self.difficulty not in (0, 1):
            raise AnnotationError(f"difficulty must be 0 or 1, got {self.difficulty!r}")


@dataclass
class ImageAnnotation:
    image_id: str
    instances: list[Instance] = field(default_factory=list)
    image_size: Optional[tuple[int, int]] = None  # (width, height)

    def __post_init__(self):
        if not self.image_id:
            raise AnnotationError("image_id must be non-empty")


FINDING_KINDS = ("counterclockwise", "start-point-suspect", "degenerate", "out-of-bounds")


@dataclass(frozen=True)
class Finding:
    index: int
    kind: str
    detail: str

    def __str__(self):
        return f"#{self.index} {self.kind}: {self.detail}"


@dataclass
class ValidationReport:
    image_id: str
    findings: list[Finding] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.findings

    def kinds(self) -> list[str]:
        return [f.kind for f in self.findings]


def format_number(v: float) -> str:
    """Shortest decimal that round-trips; integral values print without a point."""
    v = float(v)
    if v == 0:
        return "0"
    if v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return np.format_float_positional(v, unique=True, trim="-")


def _parse_coords(tokens: list[str], line_no: Optional[int]) -> Quad:
    try:
        coords = [float(t) for t in tokens]
    except ValueError:
        raise AnnotationParseError(f"non-numeric coordinate in {tokens!r}", line_no) from None
    return Quad.from_flat(coords)


def parse_dota_line(line: str, line_no: Optional[int] = None) -> Instance:
    tokens = line.split()
    if len(tokens) != 10:
        raise AnnotationParseError(f"expected 10 tokens, got {len(tokens)}", line_no)
    quad = _parse_coords(tokens[:8], line_no)
    if not quad.is_finite():
        raise AnnotationParseError("non-finite coordinate", line_no)
    try:
        difficulty = int(tokens[9])
    except ValueError:
        raise AnnotationParseError(f"difficulty {tokens[9]!r} is not an integer", line_no) from None
    try:
        return Instance(quad, tokens[8], difficulty)
    except AnnotationError as exc:
        raise AnnotationParseError(str(exc), line_no) from None


def emit_dota_line(inst: Instance) -> str:
    coords = " ".join(format_number(v) for v in inst.quad.flat())
    return f"{coords} {inst.category} {inst.difficulty}"


def parse_dota_text(text: str) -> list[Instance]:
    """Parse a whole annotation file; blank lines are skipped."""
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_dota_line(line, i))
    return out


def emit_dota_text(instances) -> str:
    return "".join(emit_dota_line(inst) + "\n" for inst in instances)


def read_dota_file(path) -> ImageAnnotation:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return ImageAnnotation(path.stem, parse_dota_text(text))


def write_dota_file(path, instances) -> None:
    Path(path).write_text(emit_dota_text(instances), encoding="utf-8", newline="\n")


@dataclass(frozen=True)
class Detection:
    """A predicted box with its confidence score."""

    quad: Quad
    category: str = DEFAULT_CATEGORY
    score: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise AnnotationError(f"score must be in [0, 1], got {self.score!r}")


def parse_detection_line(line: str, line_no: Optional[int] = None) -> Detection:
    tokens = line.split()
    if len(tokens) != 10:
        raise AnnotationParseError(f"expected 10 tokens, got {len(tokens)}", line_no)
    # non-finite coordinates are kept: the evaluator counts them as false positives
    quad = _parse_coords(tokens[:8], line_no)
    category = tokens[8]
    try:
        score = float(tokens[9])
    except ValueError:
        raise AnnotationParseError(f"score {tokens[9]!r} is not a number", line_no) from None
    try:
        return Detection(quad, category, score)
    except AnnotationError as exc:
        raise AnnotationParseError(str(exc), line_no) from None


def emit_detection_line(det) -> str:
    coords = " ".join(format_number(v) for v in det.quad.flat())
    return f"{coords} {det.category} {format_number(det.score)}"


def parse_detection_text(text: str) -> list[Detection]:
    out = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_detection_line(line, i))
    return out


def _xml_points(elem: ET.Element) -> Optional[str]:
    # competition files hold the corners in <Coords points="x,y x,y ..."/>
    coords = elem.find("Coords")
    if coords is not None and coords.get("points") is not None:
        return coords.get("points")
    return elem.get("points")


def parse_icdar_xml(doc: str, image_id: str = "image") -> ImageAnnotation:
    """Read ICDAR-2019 table-detection XML.

    Each ``<table>`` must carry four ``x,y`` pairs, either on a ``Coords``
    child or directly as a ``points`` attribute. Points are kept in
    document order.
    """
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise IngestError(f"malformed XML: {exc}") from None
    instances = []
    for n, table in enumerate(root.iter("table")):
        raw = _xml_points(table)
        if raw is None:
            raise IngestError(f"table #{n}: missing points attribute")
        pairs = raw.split()
        if len(pairs) != 4:
            raise IngestError(f"table #{n}: expected 4 points, got {len(pairs)}")
        coords = []
        for pair in pairs:
            xy = pair.split(",")
            if len(xy) != 2:
                raise IngestError(f"table #{n}: bad point {pair!r}")
            try:
                coords.extend(float(v) for v in xy)
            except ValueError:
                raise IngestError(f"table #{n}: bad point {pair!r}") from None
        quad = Quad.from_flat(coords)
        if not quad.is_finite():
            raise IngestError(f"table #{n}: non-finite coordinate")
        instances.append(Instance(quad))
    return ImageAnnotation(image_id, instances)


def validate(ann: ImageAnnotation, margin: float = 1e-6) -> ValidationReport:
    """Automated constraint checks for every instance of one image.

    Orientation must be clockwise on screen. For boxes within a few degrees
    of horizontal, A should also be the corner nearest the page origin;
    rotated boxes are not judged since their logical top-left is semantic.
    """
    report = ValidationReport(ann.image_id)
    for i, inst in enumerate(ann.instances):
        q = inst.quad
        area = signed_area(q.points)
        if abs(area) <= AREA_TOL:
            report.findings.append(Finding(i, "degenerate", f"area {area!r}"))
        else:
            if area < 0:
                report.findings.append(
                    Finding(i, "counterclockwise", f"signed area {format_number(area)} <= 0")
                )
            try:
                theta = quad_angle(q)
            except GeometryError:
                theta = None
            if theta is not None and angle_diff(theta, 0.0) <= AXIS_ALIGNED_TOL_DEG:
                sums = [p.x + p.y for p in q.points]
                best = min(range(4), key=lambda k: (sums[k], k))
                if sums[0] > sums[best]:
                    report.findings.append(
                        Finding(i, "start-point-suspect", f"vertex {'ABCD'[best]} is nearer the top-left than A")
                    )
        if ann.image_size is not None:
            w, h = ann.image_size
            bad = [
                p for p in q.points
                if p.x < -margin or p.y < -margin or p.x > w + margin or p.y > h + margin
            ]
            if bad:
                report.findings.append(
                    Finding(i, "out-of-bounds", f"{len(bad)} vertex(es) outside {w}x{h}")
                )
    return report


def reorder_start(q: Quad, k: int) -> Quad:
    """Cyclically shift the vertex list so that vertex ``k`` becomes A."""
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= 3:
        raise AnnotationError(f"start index must be 0..3, got {k!r}")
    pts = q.points
    return Quad(*(pts[k:] + pts[:k]))


def obb_to_hbb(q: Quad) -> Quad:
    """Axis-aligned envelope as TL, TR, BR, BL."""
    xs = [p.x for p in q.points]
    ys = [p.y for p in q.points]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    return Quad(Point(x0, y0), Point(x1, y0), Point(x1, y1), Point(x0, y1))
