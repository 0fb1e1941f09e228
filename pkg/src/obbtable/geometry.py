"""2-D primitives for oriented boxes in screen coordinates (y grows downward).

Orientation convention: with y pointing down, a polygon listed clockwise on
screen has a *positive* shoelace area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

# points closer than this to a clip edge count as inside
CLIP_TOL = 1e-9
# quads with |area| at or below this are degenerate
AREA_TOL = 1e-12


class GeometryError(ValueError):
    pass


class InvalidPolygonError(GeometryError):
    pass


class UnsupportedPolygonError(GeometryError):
    pass


class DegenerateEdgeError(GeometryError):
    pass


class Point(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class Quad:
    """Four ordered vertices A, B, C, D.

    Finiteness, area and convexity are checked by the operations that need
    them (see :func:`check_quad`), so that malformed boxes can still be
    represented and reported.
    """

    a: Point
    b: Point
    c: Point
    d: Point

    def __post_init__(self):
        for name in "abcd":
            p = getattr(self, name)
            if not isinstance(p, Point):
                object.__setattr__(self, name, Point(float(p[0]), float(p[1])))

    @classmethod
    def from_flat(cls, coords: Sequence[float]) -> "Quad":
        if len(coords) != 8:
            raise InvalidPolygonError(f"expected 8 coordinates, got {len(coords)}")
        c = [float(v) for v in coords]
        return cls(Point(c[0], c[1]), Point(c[2], c[3]), Point(c[4], c[5]), Point(c[6], c[7]))

    @property
    def points(self) -> list[Point]:
        return [self.a, self.b, self.c, self.d]

    def flat(self) -> list[float]:
        return [v for p in self.points for v in p]

    def __iter__(self) -> Iterator[Point]:
        return iter(self.points)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.flat())


@dataclass(frozen=True)
class AffineMap:
    """Row-major 2x3 matrix: (x, y) -> (m00*x + m01*y + m02, m10*x + m11*y + m12)."""

    m00: float
    m01: float
    m02: float
    m10: float
    m11: float
    m12: float

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @classmethod
    def from_array(cls, arr) -> "AffineMap":
        a = np.asarray(arr, dtype=np.float64).reshape(2, 3)
        return cls(*(float(v) for v in a.ravel()))

    def as_array(self) -> np.ndarray:
        return np.array([[self.m00, self.m01, self.m02], [self.m10, self.m11, self.m12]])

    @property
    def det(self) -> float:
        return self.m00 * self.m11 - self.m01 * self.m10

    def inverse(self) -> "AffineMap":
        det = self.det
        if abs(det) <= 1e-12:
            raise GeometryError(f"affine map is singular (det={det!r})")
        i00 = self.m11 / det
        i01 = -self.m01 / det
        i10 = -self.m10 / det
        i11 = self.m00 / det
        return AffineMap(
            i00, i01, -(i00 * self.m02 + i01 * self.m12),
            i10, i11, -(i10 * self.m02 + i11 * self.m12),
        )

    def then(self, other: "AffineMap") -> "AffineMap":
        """Map that applies ``self`` first and ``other`` second."""
        a = np.vstack([self.as_array(), [0.0, 0.0, 1.0]])
        b = np.vstack([other.as_array(), [0.0, 0.0, 1.0]])
        return AffineMap.from_array((b @ a)[:2])


def _as_points(points: Iterable) -> list[Point]:
    return [p if isinstance(p, Point) else Point(float(p[0]), float(p[1])) for p in points]


def signed_area(points: Sequence) -> float:
    """Shoelace area; positive when the points run clockwise on screen."""
    pts = _as_points(points)
    if len(pts) < 3:
        raise InvalidPolygonError(f"polygon needs at least 3 points, got {len(pts)}")
    if not all(math.isfinite(v) for p in pts for v in p):
        raise InvalidPolygonError("polygon has non-finite coordinates")
    n = len(pts)
    # fsum is exactly rounded, so reversing the vertex order negates the result exactly
    return 0.5 * math.fsum(
        pts[i].x * pts[(i + 1) % n].y - pts[(i + 1) % n].x * pts[i].y for i in range(n)
    )


def polygon_area(points: Sequence) -> float:
    if len(points) < 3:
        return 0.0
    return abs(signed_area(points))


def is_convex(points: Sequence, tol: float = 1e-12) -> bool:
    """True when all turns share one sign (collinear turns are ignored)."""
    pts = _as_points(points)
    n = len(pts)
    if n < 3:
        return False
    sign = 0
    for i in range(n):
        p0, p1, p2 = pts[i], pts[(i + 1) % n], pts[(i + 2) % n]
        cross = (p1.x - p0.x) * (p2.y - p1.y) - (p1.y - p0.y) * (p2.x - p1.x)
        if abs(cross) <= tol:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return sign != 0


def check_quad(q: Quad) -> None:
    """Raise unless ``q`` is finite, non-degenerate and convex."""
    if not q.is_finite():
        raise InvalidPolygonError("quad has non-finite coordinates")
    if abs(signed_area(q.points)) <= AREA_TOL:
        raise InvalidPolygonError("quad is degenerate (zero area)")
    if not is_convex(q.points):
        raise UnsupportedPolygonError("quad is not convex")


def normalize_angle(deg: float) -> float:
    """Map any angle onto [0, 360)."""
    v = math.fmod(deg, 360.0)
    if v < 0:
        v += 360.0
    # fmod of a tiny negative number can round up to exactly 360
    if v >= 360.0:
        v = 0.0
    return v


def quad_angle(q: Quad) -> float:
    """Direction of edge A->B in degrees on [0, 360); 0 is +x, 90 is straight down."""
    dx = q.b.x - q.a.x
    dy = q.b.y - q.a.y
    if dx == 0 and dy == 0:
        raise DegenerateEdgeError("edge A->B has zero length")
    return normalize_angle(math.degrees(math.atan2(dy, dx)))


def angle_diff(p: float, g: float) -> float:
    """Circular distance between two angles, in [0, 180]."""
    d = abs(normalize_angle(p) - normalize_angle(g))
    return min(d, 360.0 - d)


def clip_convex(subject: Sequence, clipper: Sequence) -> list[Point]:
    """Intersection of two convex polygons by Sutherland-Hodgman clipping.

    Either orientation is accepted for both inputs. Returns an empty list
    when the polygons do not overlap.
    """
    subj = _as_points(subject)
    clip = _as_points(clipper)
    for poly in (subj, clip):
        if not is_convex(poly):
            raise UnsupportedPolygonError("clip_convex requires convex polygons")
    if signed_area(clip) < 0:
        clip = clip[::-1]

    output = subj
    n = len(clip)
    for i in range(n):
        if not output:
            break
        e0, e1 = clip[i], clip[(i + 1) % n]
        ex, ey = e1.x - e0.x, e1.y - e0.y
        tol = CLIP_TOL * math.hypot(ex, ey)

        def side(p: Point) -> float:
            return ex * (p.y - e0.y) - ey * (p.x - e0.x)

        inp = output
        output = []
        prev = inp[-1]
        prev_side = side(prev)
        for cur in inp:
            cur_side = side(cur)
            cur_in = cur_side >= -tol
            prev_in = prev_side >= -tol
            if cur_in != prev_in:
                t = prev_side / (prev_side - cur_side)
                output.append(Point(prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)))
            if cur_in:
                output.append(cur)
            prev, prev_side = cur, cur_side
    if len(output) < 3:
        return []
    return output


def rotated_iou_diag(p: Quad, g: Quad) -> tuple[float, bool]:
    """IoU of two quads plus a flag set when either quad was unusable.

    Unusable quads (non-finite, zero area, non-convex) score 0 instead of
    raising, so a malformed detection only costs the detector.
    """
    try:
        check_quad(p)
        check_quad(g)
    except GeometryError:
        return 0.0, True
    inter_poly = clip_convex(p.points, g.points)
    if not inter_poly:
        return 0.0, False
    inter = polygon_area(inter_poly)
    union = polygon_area(p.points) + polygon_area(g.points) - inter
    if union <= 0:
        return 0.0, True
    return min(max(inter / union, 0.0), 1.0), False


def rotated_iou(p: Quad, g: Quad) -> float:
    return rotated_iou_diag(p, g)[0]


def apply_affine(m: AffineMap, points: Iterable) -> list[Point]:
    return [
        Point(m.m00 * x + m.m01 * y + m.m02, m.m10 * x + m.m11 * y + m.m12)
        for x, y in points
    ]


def map_quad(m: AffineMap, q: Quad) -> Quad:
    return Quad(*apply_affine(m, q.points))
