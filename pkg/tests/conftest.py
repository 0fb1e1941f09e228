import math
from pathlib import Path

import numpy as np
import pytest

from obbtable.annot import Instance, write_dota_file
from obbtable.geometry import Point, Quad
from obbtable.raster import Raster, write_image

EQ5 = Quad.from_flat([63, 119, 666, 119, 666, 1006, 63, 1006])
EQ6 = Quad.from_flat([63, 1006, 63, 119, 666, 119, 666, 1006])
UNIT = Quad.from_flat([0, 0, 1, 0, 1, 1, 0, 1])


def random_convex_quad(rng, lo=0.0, hi=100.0, min_radius=3.0):
    """Four points on a random rotated ellipse, in increasing angle: always convex."""
    while True:
        cx, cy = rng.uniform(lo + 10, hi - 10, size=2)
        rx, ry = rng.uniform(min_radius, 40, size=2)
        rot = rng.uniform(0, 2 * math.pi)
        ts = np.sort(rng.uniform(0, 2 * math.pi, size=4))
        pts = []
        for t in ts:
            x, y = rx * math.cos(t), ry * math.sin(t)
            pts.append(Point(cx + x * math.cos(rot) - y * math.sin(rot),
                             cy + x * math.sin(rot) + y * math.cos(rot)))
        xs = [p.x for p in pts]
        ys = [p.y for p in pts]
        if min(xs) < lo or min(ys) < lo or max(xs) > hi or max(ys) > hi:
            continue
        q = Quad(*pts)
        area = 0.5 * sum(a.x * b.y - b.x * a.y for a, b in zip(pts, pts[1:] + pts[:1]))
        if abs(area) > 20:
            return q


def rotated_rect(cx, cy, w, h, deg):
    """Clockwise-on-screen rectangle rotated by ``deg``, starting at its top-left."""
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    corners = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]
    return Quad(*(Point(cx + x * c - y * s, cy + x * s + y * c) for x, y in corners))


def synthetic_page(width, height, seed=0, channels=3):
    rng = np.random.default_rng(seed)
    return Raster(rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))


def write_split(root: Path, pages, ext=".png"):
    """pages: {image_id: (raster, [Instance, ...])} -> (img_dir, ann_dir)."""
    img_dir = root / "images"
    ann_dir = root / "ann"
    img_dir.mkdir(parents=True, exist_ok=True)
    ann_dir.mkdir(parents=True, exist_ok=True)
    for image_id, (raster, insts) in pages.items():
        write_image(img_dir / f"{image_id}{ext}", raster)
        write_dota_file(ann_dir / f"{image_id}.txt", insts)
    return img_dir, ann_dir


def small_pages(n=4, seed=0):
    rng = np.random.default_rng(seed)
    pages = {}
    for k in range(n):
        w, h = int(rng.integers(40, 90)), int(rng.integers(40, 90))
        insts = []
        for _ in range(int(rng.integers(1, 4))):
            x0, y0 = rng.uniform(1, w / 2), rng.uniform(1, h / 2)
            x1, y1 = rng.uniform(x0 + 5, w - 1), rng.uniform(y0 + 5, h - 1)
            x0, y0, x1, y1 = (float(round(v)) for v in (x0, y0, x1, y1))
            insts.append(Instance(Quad.from_flat([x0, y0, x1, y0, x1, y1, x0, y1])))
        pages[f"{10000 + k}"] = (synthetic_page(w, h, seed=k), insts)
    return pages


@pytest.fixture
def split_dir(tmp_path):
    pages = small_pages()
    img_dir, ann_dir = write_split(tmp_path / "src", pages)
    return img_dir, ann_dir, pages


_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    label = getattr(report, "acceptance_label", None)
    if label is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((label, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance_label = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _ACCEPTANCE:
        tag = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{tag}] {label}")
