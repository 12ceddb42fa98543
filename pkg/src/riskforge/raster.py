"""Deterministic 8-bit RGB rasterization.

No anti-aliasing anywhere: polygon fill is a half-open scanline over the
integer pixel lattice, thick segments light exactly the pixels whose axial
projection falls inside [0, L] and whose signed perpendicular offset falls
inside [-t/2, t/2).  Identical inputs always produce byte-identical buffers,
which keeps golden-image tests exact.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import RiskforgeError


class DimensionMismatch(RiskforgeError):
    """Image buffer does not match the expected width/height."""


@dataclass
class RasterImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8, row-major

    @classmethod
    def filled(cls, width: int, height: int, color=(0, 0, 0)) -> "RasterImage":
        buf = np.empty((height, width, 3), dtype=np.uint8)
        buf[:, :] = color
        return cls(width, height, buf)

    def copy(self) -> "RasterImage":
        return RasterImage(self.width, self.height, self.pixels.copy())

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def fill_polygon(img: RasterImage, points, color) -> None:
    """Scanline fill, half-open in both axes.

    A pixel (ix, iy) is covered when the scanline y=iy crosses the polygon
    ([ymin, ymax) per edge) and ix lies in [x_enter, x_exit) of a crossing
    pair.  The same rule in both axes makes 90-degree rotations exact
    transposes of each other.
    """
    if len(points) < 3:
        return
    ys = [p[1] for p in points]
    y_lo = max(int(math.ceil(min(ys))), 0)
    y_hi = min(int(math.ceil(max(ys))), img.height)
    n = len(points)
    color = np.asarray(color, dtype=np.uint8)
    for iy in range(y_lo, y_hi):
        xs = []
        for i in range(n):
            x1, y1 = points[i]
            x2, y2 = points[(i + 1) % n]
            if y1 == y2:
                continue
            y_min, y_max = (y1, y2) if y1 < y2 else (y2, y1)
            if y_min <= iy < y_max:
                xs.append(x1 + (iy - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for xa, xb in zip(xs[0::2], xs[1::2]):
            ix_lo = max(int(math.ceil(xa)), 0)
            ix_hi = min(int(math.ceil(xb)), img.width)
            if ix_hi > ix_lo:
                img.pixels[iy, ix_lo:ix_hi] = color


def draw_segment(img: RasterImage, p0, p1, thickness: int, color) -> None:
    """Thick line segment between float pixel coordinates.

    Pixels are lit when their axial projection s satisfies 0 <= s <= L
    (endpoints inclusive) and the signed perpendicular offset o satisfies
    -t/2 <= o < t/2; a horizontal run of length du therefore lights exactly
    t * (du + 1) pixels.
    """
    u0, v0 = p0
    u1, v1 = p1
    du, dv = u1 - u0, v1 - v0
    length = math.hypot(du, dv)
    half = thickness / 2.0
    pad = half + 1.0
    x_lo = max(int(math.floor(min(u0, u1) - pad)), 0)
    x_hi = min(int(math.ceil(max(u0, u1) + pad)) + 1, img.width)
    y_lo = max(int(math.floor(min(v0, v1) - pad)), 0)
    y_hi = min(int(math.ceil(max(v0, v1) + pad)) + 1, img.height)
    if x_hi <= x_lo or y_hi <= y_lo:
        return
    ix = np.arange(x_lo, x_hi, dtype=np.float64)
    iy = np.arange(y_lo, y_hi, dtype=np.float64)
    gx, gy = np.meshgrid(ix - u0, iy - v0)
    if length < 1e-12:
        mask = (gx >= -half) & (gx < half) & (gy >= -half) & (gy < half)
    else:
        dx, dy = du / length, dv / length
        s = gx * dx + gy * dy
        o = gy * dx - gx * dy
        mask = (s >= 0.0) & (s <= length) & (o >= -half) & (o < half)
    img.pixels[y_lo:y_hi, x_lo:x_hi][mask] = np.asarray(color, dtype=np.uint8)


def draw_disc(img: RasterImage, center, radius: float, color) -> None:
    """Filled circle: pixels within radius of the (float) center."""
    if radius <= 0:
        return
    cu, cv = center
    x_lo = max(int(math.floor(cu - radius)), 0)
    x_hi = min(int(math.ceil(cu + radius)) + 1, img.width)
    y_lo = max(int(math.floor(cv - radius)), 0)
    y_hi = min(int(math.ceil(cv + radius)) + 1, img.height)
    if x_hi <= x_lo or y_hi <= y_lo:
        return
    ix = np.arange(x_lo, x_hi, dtype=np.float64)
    iy = np.arange(y_lo, y_hi, dtype=np.float64)
    gx, gy = np.meshgrid(ix - cu, iy - cv)
    mask = gx * gx + gy * gy <= radius * radius
    img.pixels[y_lo:y_hi, x_lo:x_hi][mask] = np.asarray(color, dtype=np.uint8)


def draw_polyline(img: RasterImage, points, thickness: int, color) -> None:
    for a, b in zip(points, points[1:]):
        draw_segment(img, a, b, thickness, color)


def to_png_bytes(img: RasterImage) -> bytes:
    out = io.BytesIO()
    Image.fromarray(img.pixels, mode="RGB").save(out, format="PNG")
    return out.getvalue()


def from_png_bytes(data: bytes) -> RasterImage:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return RasterImage(arr.shape[1], arr.shape[0], arr.copy())


def write_png(img: RasterImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_png_bytes(img))


def read_png(path) -> RasterImage:
    with open(path, "rb") as fh:
        return from_png_bytes(fh.read())
