"""Mask geometry: polygon rasterization, pixel-set IoU, boundary extraction,
and affine polygon transforms.

Rasterization rule: a pixel (x, y) is set iff its center (x+0.5, y+0.5) lies
inside the polygon under the even-odd rule. This makes masks reproducible
bit-for-bit and is the substrate for all IoU-based metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import Bitmask, Polygon


def rasterize(shape: Polygon, width: int, height: int) -> Bitmask:
    """Even-odd scanline fill of ``shape`` onto a ``width`` x ``height`` grid."""
    if width <= 0 or height <= 0:
        raise ValueError("raster dimensions must be positive")
    grid = np.zeros((height, width), dtype=bool)

    edges = []  # non-horizontal edges over all rings
    ymin, ymax = float("inf"), float("-inf")
    for ring in shape.rings:
        for (x1, y1), (x2, y2) in zip(ring, ring[1:] + ring[:1]):
            if y1 != y2:
                edges.append((x1, y1, x2, y2))
                ymin = min(ymin, y1, y2)
                ymax = max(ymax, y1, y2)
    if not edges:
        return Bitmask(grid)

    row_lo = max(0, int(math.floor(ymin - 0.5)))
    row_hi = min(height, int(math.ceil(ymax)))
    for row in range(row_lo, row_hi):
        cy = row + 0.5
        xs = []
        for x1, y1, x2, y2 in edges:
            # half-open span [min(y), max(y)) so shared vertices count once
            if (y1 <= cy < y2) or (y2 <= cy < y1):
                xs.append(x1 + (cy - y1) * (x2 - x1) / (y2 - y1))
        if len(xs) < 2:
            continue
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            # pixel centers x+0.5 in [xs[k], xs[k+1])
            start = max(0, math.ceil(xs[k] - 0.5))
            stop = min(width, math.ceil(xs[k + 1] - 0.5))
            if start < stop:
                grid[row, start:stop] = True
    return Bitmask(grid)


def mask_iou(a: Bitmask, b: Bitmask) -> float:
    """|a n b| / |a u b|; 0.0 when both masks are empty."""
    if a.arr.shape != b.arr.shape:
        raise ValueError(f"mask dimensions differ: {a.arr.shape} vs {b.arr.shape}")
    inter = int(np.logical_and(a.arr, b.arr).sum())
    union = int(np.logical_or(a.arr, b.arr).sum())
    if union == 0:
        return 0.0
    return inter / union


def boundary(mask: Bitmask, thickness: int = 1) -> Bitmask:
    """Inner boundary of ``mask``: set pixels with an unset 4-neighbor
    (the frame edge counts as unset), dilated (thickness - 1) times by
    4-connectivity and intersected with the mask."""
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    m = mask.arr
    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:] & m
    )
    edge = m & ~interior
    for _ in range(thickness - 1):
        grown = np.zeros_like(padded)
        grown[1:-1, 1:-1] = edge
        edge = (
            grown[1:-1, 1:-1]
            | grown[:-2, 1:-1]
            | grown[2:, 1:-1]
            | grown[1:-1, :-2]
            | grown[1:-1, 2:]
        ) & m
    return Bitmask(edge)


@dataclass(frozen=True)
class Affine:
    """2x3 affine transform: (x, y) -> (a*x + b*y + c, d*x + e*y + f)."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def apply(self, x: float, y: float) -> tuple[float, float]:
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f

    def det(self) -> float:
        return self.a * self.e - self.b * self.d

    def invert(self) -> "Affine":
        det = self.det()
        if det == 0:
            raise ValueError("affine transform is singular")
        ia, ib = self.e / det, -self.b / det
        id_, ie = -self.d / det, self.a / det
        return Affine(ia, ib, -(ia * self.c + ib * self.f), id_, ie, -(id_ * self.c + ie * self.f))

    def compose(self, other: "Affine") -> "Affine":
        """self o other: apply ``other`` first, then ``self``."""
        o = other
        return Affine(
            self.a * o.a + self.b * o.d,
            self.a * o.b + self.b * o.e,
            self.a * o.c + self.b * o.f + self.c,
            self.d * o.a + self.e * o.d,
            self.d * o.b + self.e * o.e,
            self.d * o.c + self.e * o.f + self.f,
        )

    @staticmethod
    def identity() -> "Affine":
        return Affine(1, 0, 0, 0, 1, 0)

    @staticmethod
    def translation(dx: float, dy: float) -> "Affine":
        return Affine(1, 0, dx, 0, 1, dy)

    @staticmethod
    def scaling(sx: float, sy: float) -> "Affine":
        return Affine(sx, 0, 0, 0, sy, 0)

    @staticmethod
    def rotation_about(deg: float, cx: float, cy: float) -> "Affine":
        """Rotation by ``deg`` degrees about (cx, cy); +deg rotates +x toward +y."""
        rad = math.radians(deg)
        cos, sin = math.cos(rad), math.sin(rad)
        return Affine(
            cos, -sin, cx - cos * cx + sin * cy,
            sin, cos, cy - sin * cx - cos * cy,
        )


def _clip_ring(ring: list[tuple[float, float]], width: float, height: float):
    """Sutherland-Hodgman clip of one ring against [0, width] x [0, height]."""

    def clip_edge(points, inside, intersect):
        out = []
        n = len(points)
        for i in range(n):
            cur, nxt = points[i], points[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def cross_x(bound):
        def f(p, q):
            t = (bound - p[0]) / (q[0] - p[0])
            return (bound, p[1] + t * (q[1] - p[1]))

        return f

    def cross_y(bound):
        def f(p, q):
            t = (bound - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), bound)

        return f

    pts = ring
    for inside, intersect in (
        (lambda p: p[0] >= 0, cross_x(0.0)),
        (lambda p: p[0] <= width, cross_x(width)),
        (lambda p: p[1] >= 0, cross_y(0.0)),
        (lambda p: p[1] <= height, cross_y(height)),
    ):
        pts = clip_edge(pts, inside, intersect)
        if not pts:
            return []
    # drop consecutive duplicates introduced by clipping
    dedup = [pts[0]]
    for p in pts[1:]:
        if p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    return dedup


def transform_polygon(
    shape: Polygon, transform: Affine, clip: tuple[int, int]
) -> Optional[Polygon]:
    """Map every vertex through ``transform`` and clip rings to the frame
    rectangle [0, w] x [0, h]. Rings that degenerate to fewer than three
    vertices are dropped; returns None when every ring is dropped."""
    if transform.det() == 0:
        raise ValueError("affine transform is singular")
    width, height = clip
    kept = []
    for ring in shape.rings:
        mapped = [transform.apply(x, y) for x, y in ring]
        clipped = _clip_ring(mapped, float(width), float(height))
        if len(clipped) >= 3:
            kept.append(tuple(clipped))
    if not kept:
        return None
    return Polygon(tuple(kept))


def warp_mask_nearest(mask: np.ndarray, transform: Affine, out_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor forward warp of a boolean mask: each output pixel
    center is pulled back through ``transform``'s inverse and sampled."""
    inv = transform.invert()
    oh, ow = out_shape
    ys, xs = np.mgrid[0:oh, 0:ow]
    cx = xs + 0.5
    cy = ys + 0.5
    sx = inv.a * cx + inv.b * cy + inv.c
    sy = inv.d * cx + inv.e * cy + inv.f
    ix = np.floor(sx).astype(int)
    iy = np.floor(sy).astype(int)
    valid = (ix >= 0) & (ix < mask.shape[1]) & (iy >= 0) & (iy < mask.shape[0])
    out = np.zeros(out_shape, dtype=bool)
    out[valid] = mask[iy[valid], ix[valid]]
    return out


def round_half_up(x: float) -> int:
    """Deterministic nearest-integer rounding with halves going up."""
    return int(math.floor(x + 0.5))
