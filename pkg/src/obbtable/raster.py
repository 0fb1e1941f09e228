"""Image container, PNG/JPEG codecs and inverse-mapped affine warping.

Sampling convention: output pixel (u, v) reads the source at the continuous
position ``M^-1 (u, v)``, i.e. pixel centres sit on integer coordinates.
This is the same convention used for annotation points, so a warped image
and its warped quads stay aligned.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .geometry import AffineMap

JPEG_QUALITY = 90


class RasterError(ValueError):
    pass


class DecodeError(RasterError):
    pass


@dataclass
class Raster:
    """8-bit pixel grid stored as a (height, width, channels) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise RasterError(f"pixels must be HxWx1 or HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise RasterError("raster must be at least 1x1")
        self.pixels = np.ascontiguousarray(px, dtype=np.uint8)

    @classmethod
    def blank(cls, width: int, height: int, channels: int = 3, value: int = 0) -> "Raster":
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class WarpOptions:
    interpolation: str = "bilinear"
    fill: Optional[Sequence[int]] = None  # per channel; None means all zeros

    def __post_init__(self):
        if self.interpolation not in ("nearest", "bilinear"):
            raise RasterError(f"unknown interpolation {self.interpolation!r}")

    def fill_for(self, channels: int) -> np.ndarray:
        if self.fill is None:
            return np.zeros(channels, dtype=np.float64)
        fill = np.asarray(self.fill, dtype=np.float64).ravel()
        if fill.size == 1:
            fill = np.repeat(fill, channels)
        if fill.size != channels:
            raise RasterError(f"fill has {fill.size} values for {channels} channels")
        if np.any(fill < 0) or np.any(fill > 255):
            raise RasterError("fill values must be 0..255")
        return fill


def _format_name(fmt: str) -> str:
    f = fmt.lower().lstrip(".")
    if f == "png":
        return "PNG"
    if f in ("jpg", "jpeg"):
        return "JPEG"
    raise RasterError(f"unsupported image format {fmt!r}")


def decode(data: bytes, fmt: Optional[str] = None) -> Raster:
    """Decode PNG/JPEG bytes. Grayscale stays single-channel, anything else becomes RGB."""
    if fmt is not None:
        _format_name(fmt)
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"unsupported container {im.format!r}")
            im.load()
            if im.mode in ("L", "1", "I;16", "I"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            return Raster(np.asarray(im))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from None


def encode(r: Raster, fmt: str = "png") -> bytes:
    name = _format_name(fmt)
    px = r.pixels[:, :, 0] if r.channels == 1 else r.pixels
    buf = io.BytesIO()
    im = Image.fromarray(px, mode="L" if r.channels == 1 else "RGB")
    if name == "JPEG":
        im.save(buf, format="JPEG", quality=JPEG_QUALITY)
    else:
        im.save(buf, format="PNG")
    return buf.getvalue()


def read_image(path) -> Raster:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write_image(path, r: Raster, fmt: Optional[str] = None) -> None:
    fmt = fmt or str(path).rsplit(".", 1)[-1]
    with open(path, "wb") as fh:
        fh.write(encode(r, fmt))


def image_size(path) -> tuple[int, int]:
    """(width, height) from the file header, without decoding pixels."""
    try:
        with Image.open(path) as im:
            return im.size
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from None


def warp_affine(r: Raster, m: AffineMap, out_size: tuple[int, int], opts: WarpOptions = WarpOptions()) -> Raster:
    """Warp ``r`` by ``m`` onto a canvas of ``out_size`` = (width, height).

    Samples that fall outside the source take the fill value; with bilinear
    interpolation each of the four neighbours is filled independently.
    """
    out_w, out_h = int(out_size[0]), int(out_size[1])
    if out_w < 1 or out_h < 1:
        raise RasterError(f"output size must be positive, got {out_size}")
    if abs(m.det) <= 1e-12:
        raise RasterError("warp matrix is singular")
    inv = m.inverse()
    fill = opts.fill_for(r.channels)

    u = np.arange(out_w, dtype=np.float64)[None, :]
    v = np.arange(out_h, dtype=np.float64)[:, None]
    sx = inv.m00 * u + inv.m01 * v + inv.m02
    sy = inv.m10 * u + inv.m11 * v + inv.m12

    src = r.pixels
    h, w = r.height, r.width

    if opts.interpolation == "nearest":
        ix = np.floor(sx + 0.5).astype(np.int64)
        iy = np.floor(sy + 0.5).astype(np.int64)
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.empty((out_h, out_w, r.channels), dtype=np.uint8)
        out[...] = fill.astype(np.uint8)
        out[ok] = src[iy[ok], ix[ok]]
        return Raster(out)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    srcf = src.astype(np.float64)

    def tap(ix, iy):
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        vals = np.empty((out_h, out_w, r.channels), dtype=np.float64)
        vals[...] = fill
        vals[ok] = srcf[iy[ok], ix[ok]]
        return vals

    acc = (
        tap(x0, y0) * (1 - fx) * (1 - fy)
        + tap(x0 + 1, y0) * fx * (1 - fy)
        + tap(x0, y0 + 1) * (1 - fx) * fy
        + tap(x0 + 1, y0 + 1) * fx * fy
    )
    out = np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)
    return Raster(out)
