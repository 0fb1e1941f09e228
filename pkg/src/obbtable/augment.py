"""Rotation of page images together with their box annotations, and
deterministic generation of rotated datasets.

Positive angles turn image content clockwise on screen about ``center``.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .annot import Instance, emit_dota_text, format_number, obb_to_hbb, read_dota_file
from .geometry import AffineMap, Point, map_quad, normalize_angle
from .raster import Raster, WarpOptions, encode, read_image, warp_affine

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
MASK64 = (1 << 64) - 1
# canvas sizes within this of an integer are not bumped up by the ceiling
SIZE_SLACK = 1e-6


@dataclass(frozen=True)
class RotationSpec:
    angle_deg: float
    center: Optional[Point] = None  # defaults to (w/2, h/2)

    def __post_init__(self):
        if not math.isfinite(self.angle_deg):
            raise ValueError("rotation angle must be finite")
        if self.center is not None and not all(math.isfinite(v) for v in self.center):
            raise ValueError("rotation center must be finite")

    def bind(self, width: int, height: int) -> "RotationSpec":
        if self.center is None:
            return RotationSpec(self.angle_deg, Point(width / 2.0, height / 2.0))
        cx, cy = self.center
        if not (0 <= cx <= width and 0 <= cy <= height):
            raise ValueError(f"center {self.center} lies outside a {width}x{height} image")
        return self


def _cos_sin(angle_deg: float) -> tuple[float, float]:
    a = normalize_angle(angle_deg)
    # exact values for quarter turns keep 90/180/270 maps integral
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if a in exact:
        return exact[a]
    r = math.radians(a)
    return math.cos(r), math.sin(r)


def rotation_matrix(spec: RotationSpec) -> AffineMap:
    """Clockwise-on-screen rotation by ``spec.angle_deg`` about ``spec.center``.

    Same matrix as OpenCV's ``getRotationMatrix2D(center, -angle, 1)``.
    """
    if spec.center is None:
        raise ValueError("rotation center is unset; call spec.bind(w, h) first")
    c, s = _cos_sin(spec.angle_deg)
    cx, cy = spec.center
    return AffineMap(c, -s, (1 - c) * cx + s * cy, s, c, -s * cx + (1 - c) * cy)


def _ceil_size(v: float) -> int:
    return max(1, int(math.ceil(v - SIZE_SLACK)))


def adapt_bounds(m: AffineMap, w: int, h: int) -> tuple[AffineMap, int, int]:
    """Grow the canvas so the whole rotated page fits, and re-centre the map.

    The canvas is rounded *up* so that every rotated source corner stays on
    the canvas.
    """
    cos = abs(m.m00)
    sin = abs(m.m01)
    new_w = _ceil_size(h * sin + w * cos)
    new_h = _ceil_size(h * cos + w * sin)
    shifted = AffineMap(
        m.m00, m.m01, m.m02 + (new_w - w) * 0.5,
        m.m10, m.m11, m.m12 + (new_h - h) * 0.5,
    )
    return shifted, new_w, new_h


def bounded_map(spec: RotationSpec, w: int, h: int) -> tuple[AffineMap, int, int]:
    return adapt_bounds(rotation_matrix(spec.bind(w, h)), w, h)


def _map_instances(m: AffineMap, instances: Sequence[Instance]) -> list[Instance]:
    return [Instance(map_quad(m, inst.quad), inst.category, inst.difficulty) for inst in instances]


def rotate_original(img: Raster, spec: RotationSpec, instances: Sequence[Instance],
                    opts: WarpOptions = WarpOptions()):
    """Rotate on the original canvas. Corners of the page (and boxes) may be cut off."""
    m = rotation_matrix(spec.bind(img.width, img.height))
    out = warp_affine(img, m, (img.width, img.height), opts)
    return out, _map_instances(m, instances)


def rotate_bounded(img: Raster, spec: RotationSpec, instances: Sequence[Instance],
                   opts: WarpOptions = WarpOptions()):
    """Rotate onto an enlarged canvas so no page content is lost."""
    m, new_w, new_h = bounded_map(spec, img.width, img.height)
    out = warp_affine(img, m, (new_w, new_h), opts)
    return out, _map_instances(m, instances)


def fnv1a_64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


def splitmix64(state: int) -> int:
    """Output of one SplitMix64 step from ``state``."""
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def draw_angle(seed: int, image_id: str, angle_range: tuple[float, float] = (0.0, 360.0)) -> float:
    """Uniform angle in [lo, hi) keyed only by (seed, image_id)."""
    lo, hi = angle_range
    state = (int(seed) & MASK64) ^ fnv1a_64(image_id.encode("utf-8"))
    u = (splitmix64(state) >> 11) * (1.0 / (1 << 53))
    return lo + (hi - lo) * u


def hbb_folder(split: str) -> str:
    # the published dataset spells the train folder "hbb" and the test one "hbbox"
    return "ann_train_hbb" if split == "train" else f"ann_{split}_hbbox"


def obb_folder(split: str) -> str:
    return f"ann_{split}_obbox"


def image_folder(split: str) -> str:
    return f"img_{split}"


@dataclass
class GenerationConfig:
    src_img: Path
    src_ann: Path
    out: Path
    split: str = "train"
    seed: int = 0
    angle_range: tuple[float, float] = (0.0, 360.0)
    emit_hbb: bool = True
    emit_obb: bool = True
    interpolation: str = "bilinear"
    fill: Optional[tuple[int, ...]] = None
    jobs: int = 1

    def __post_init__(self):
        self.src_img = Path(self.src_img)
        self.src_ann = Path(self.src_ann)
        self.out = Path(self.out)
        lo, hi = self.angle_range
        # lo == hi is allowed as a fixed angle
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi or hi - lo > 360:
            raise ValueError(f"invalid angle range {self.angle_range}")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (self.emit_hbb or self.emit_obb):
            raise ValueError("nothing to emit: enable hbb and/or obb")
        if not self.split or os.sep in self.split:
            raise ValueError(f"invalid split name {self.split!r}")
        WarpOptions(self.interpolation, self.fill)


@dataclass
class ImageRecord:
    image_id: str
    angle: float = 0.0
    source_size: tuple[int, int] = (0, 0)
    output_size: tuple[int, int] = (0, 0)
    instances: int = 0
    skipped: Optional[str] = None
    files: dict[str, str] = field(default_factory=dict)  # relative path -> sha256


@dataclass
class Manifest:
    config: dict
    records: list[ImageRecord] = field(default_factory=list)

    @property
    def images(self) -> int:
        return sum(1 for r in self.records if r.skipped is None)

    @property
    def instances(self) -> int:
        return sum(r.instances for r in self.records if r.skipped is None)

    @property
    def skipped(self) -> list[ImageRecord]:
        return [r for r in self.records if r.skipped is not None]

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        for r in sorted(self.records, key=lambda r: r.image_id):
            for rel, sha in sorted(r.files.items()):
                h.update(f"{rel}\t{sha}\n".encode("utf-8"))
        return h.hexdigest()

    def to_text(self) -> str:
        lines = ["# rotated dataset generation manifest", "[config]"]
        for k, v in self.config.items():
            lines.append(f"{k}: {v}")
        for r in self.records:
            lines.append("")
            lines.append(f"[image {r.image_id}]")
            if r.skipped is not None:
                lines.append(f"skipped: {r.skipped}")
                continue
            lines.append(f"angle: {format_number(r.angle)}")
            lines.append(f"source_size: {r.source_size[0]}x{r.source_size[1]}")
            lines.append(f"output_size: {r.output_size[0]}x{r.output_size[1]}")
            lines.append(f"instances: {r.instances}")
            for rel, sha in sorted(r.files.items()):
                lines.append(f"file: {rel} sha256:{sha}")
        lines += [
            "",
            "[totals]",
            f"images: {self.images}",
            f"instances: {self.instances}",
            f"skipped: {len(self.skipped)}",
            f"digest: sha256:{self.digest}",
        ]
        return "\n".join(lines) + "\n"


def find_images(directory: Path) -> dict[str, Path]:
    """Map image stem -> path for every supported image in ``directory``."""
    found = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS:
            if p.stem in found:
                logger.warning("duplicate image id %s, keeping %s", p.stem, found[p.stem].name)
                continue
            found[p.stem] = p
    return found


def _write_tracked(path: Path, data: bytes, out_root: Path, files: dict[str, str]) -> None:
    path.write_bytes(data)
    files[path.relative_to(out_root).as_posix()] = hashlib.sha256(data).hexdigest()


def _process_image(cfg: GenerationConfig, image_id: str, img_path: Path) -> ImageRecord:
    rec = ImageRecord(image_id)
    ann_path = cfg.src_ann / f"{image_id}.txt"
    if not ann_path.is_file():
        rec.skipped = "missing annotation"
        return rec
    try:
        ann = read_dota_file(ann_path)
    except (ValueError, OSError) as exc:
        rec.skipped = f"bad annotation: {exc}"
        return rec
    try:
        img = read_image(img_path)
    except (ValueError, OSError) as exc:
        rec.skipped = f"unreadable image: {exc}"
        return rec

    angle = draw_angle(cfg.seed, image_id, cfg.angle_range)
    opts = WarpOptions(cfg.interpolation, cfg.fill)
    out_img, out_insts = rotate_bounded(img, RotationSpec(angle), ann.instances, opts)

    rec.angle = angle
    rec.source_size = img.size
    rec.output_size = out_img.size
    rec.instances = len(out_insts)

    ext = img_path.suffix.lower()
    _write_tracked(cfg.out / image_folder(cfg.split) / f"{image_id}{ext}",
                   encode(out_img, ext), cfg.out, rec.files)
    if cfg.emit_obb:
        _write_tracked(cfg.out / obb_folder(cfg.split) / f"{image_id}.txt",
                       emit_dota_text(out_insts).encode("utf-8"), cfg.out, rec.files)
    if cfg.emit_hbb:
        hbbs = [Instance(obb_to_hbb(i.quad), i.category, i.difficulty) for i in out_insts]
        _write_tracked(cfg.out / hbb_folder(cfg.split) / f"{image_id}.txt",
                       emit_dota_text(hbbs).encode("utf-8"), cfg.out, rec.files)
    return rec


def _process_star(args):
    return _process_image(*args)


def generate_dataset(cfg: GenerationConfig) -> Manifest:
    """Rotate every source image by its seeded angle and write images, boxes and a manifest.

    Records are ordered by image id, so ``cfg.jobs`` never changes the output.
    """
    images = find_images(cfg.src_img)
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / image_folder(cfg.split)).mkdir(exist_ok=True)
    if cfg.emit_obb:
        (cfg.out / obb_folder(cfg.split)).mkdir(exist_ok=True)
    if cfg.emit_hbb:
        (cfg.out / hbb_folder(cfg.split)).mkdir(exist_ok=True)

    work = [(cfg, image_id, path) for image_id, path in sorted(images.items())]
    if cfg.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_process_star, work, chunksize=max(1, len(work) // (cfg.jobs * 4))))
    else:
        records = [_process_star(w) for w in work]

    # annotations without an image are reported too
    if cfg.src_ann.is_dir():
        for p in sorted(cfg.src_ann.glob("*.txt")):
            if p.stem not in images:
                records.append(ImageRecord(p.stem, skipped="missing image"))
    records.sort(key=lambda r: r.image_id)

    emit = ",".join(k for k, on in (("hbb", cfg.emit_hbb), ("obb", cfg.emit_obb)) if on)
    config = {
        "split": cfg.split,
        "seed": cfg.seed,
        "angle_range": f"{format_number(cfg.angle_range[0])},{format_number(cfg.angle_range[1])}",
        "emit": emit,
        "interpolation": cfg.interpolation,
        "fill": "0" if cfg.fill is None else ",".join(str(v) for v in cfg.fill),
    }
    manifest = Manifest(config, records)
    (cfg.out / f"manifest_{cfg.split}.txt").write_text(manifest.to_text(), encoding="utf-8")
    for r in manifest.skipped:
        logger.warning("skipped %s: %s", r.image_id, r.skipped)
    return manifest
