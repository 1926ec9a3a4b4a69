"""Mask-to-polygon conversion for model plug-ins that emit pixel masks.

Contours follow the cracks between set and unset pixels, so every vertex is
an integer pixel corner (what the wire needs) and rasterizing the rings back
with the pixel-center even-odd rule reproduces the mask exactly. Exterior
contours come first; holes are preserved as additional rings. Deviation from
the mask boundary is at most one pixel (vertices sit on pixel corners).
"""

from __future__ import annotations

import numpy as np

Corner = tuple[int, int]
Ring = tuple[Corner, ...]

# directions on the corner grid, y down
_TURN_PREFERENCE = lambda dx, dy: ((dy, -dx), (dx, dy), (-dy, dx))


def _boundary_edges(mask: np.ndarray) -> dict[tuple[Corner, tuple[int, int]], Corner]:
    """Directed crack edges keeping the set pixel on the travel's left."""
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    edges: dict[tuple[Corner, tuple[int, int]], Corner] = {}
    ys, xs = np.nonzero(mask)
    for y, x in zip(ys.tolist(), xs.tolist()):
        if not padded[y, x + 1]:  # above unset: walk left along the top
            edges[((x + 1, y), (-1, 0))] = (x, y)
        if not padded[y + 2, x + 1]:  # below unset: walk right along the bottom
            edges[((x, y + 1), (1, 0))] = (x + 1, y + 1)
        if not padded[y + 1, x]:  # left unset: walk down the left side
            edges[((x, y), (0, 1))] = (x, y + 1)
        if not padded[y + 1, x + 2]:  # right unset: walk up the right side
            edges[((x + 1, y + 1), (0, -1))] = (x + 1, y)
    return edges


def _successor(edges, corner: Corner, direction) -> tuple[Corner, tuple[int, int]]:
    for cand in _TURN_PREFERENCE(*direction):
        if (corner, cand) in edges:
            return corner, cand
    raise RuntimeError(f"open contour at corner {corner}")  # cannot happen on valid masks


def trace_contours(mask: np.ndarray) -> list[Ring]:
    """All closed crack loops of ``mask`` with collinear runs collapsed."""
    mask = np.asarray(mask, dtype=bool)
    edges = _boundary_edges(mask)
    seen: set = set()
    rings: list[Ring] = []
    for start_key in edges:
        if start_key in seen:
            continue
        corners: list[Corner] = []
        key = start_key
        while True:
            seen.add(key)
            (corner, direction) = key
            corners.append(corner)
            nxt = edges[key]
            key = _successor(edges, nxt, direction)
            if key == start_key:
                break
        rings.append(_collapse_collinear(corners))
    return rings


def _collapse_collinear(corners: list[Corner]) -> Ring:
    n = len(corners)
    kept = []
    for i in range(n):
        prev_c, cur, nxt = corners[i - 1], corners[i], corners[(i + 1) % n]
        in_dir = (cur[0] - prev_c[0], cur[1] - prev_c[1])
        out_dir = (nxt[0] - cur[0], nxt[1] - cur[1])
        if in_dir != out_dir:
            kept.append(cur)
    return tuple(kept)


def ring_area(ring: Ring) -> float:
    s = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:] + ring[:1]):
        s += x1 * y2 - x2 * y1
    return s / 2.0


def mask_to_rings(mask: np.ndarray) -> tuple[Ring, ...]:
    """Rings for the wire: largest loop (an exterior) first, holes after."""
    rings = trace_contours(mask)
    rings.sort(key=lambda r: -abs(ring_area(r)))
    return tuple(rings)


def rings_to_mask(rings, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill over pixel centers; the roundtrip check for
    the tracer, and the reference for what a peer will reconstruct."""
    out = np.zeros((height, width), dtype=bool)
    edges = []
    for ring in rings:
        for (x1, y1), (x2, y2) in zip(ring, tuple(ring[1:]) + (ring[0],)):
            if y1 != y2:
                edges.append((float(x1), float(y1), float(x2), float(y2)))
    for row in range(height):
        cy = row + 0.5
        xs = []
        for x1, y1, x2, y2 in edges:
            if (y1 <= cy < y2) or (y2 <= cy < y1):
                xs.append(x1 + (cy - y1) * (x2 - x1) / (y2 - y1))
        xs.sort()
        for k in range(0, len(xs) - 1, 2):
            start = max(0, int(np.ceil(xs[k] - 0.5)))
            stop = min(width, int(np.ceil(xs[k + 1] - 0.5)))
            if start < stop:
                out[row, start:stop] = True
    return out
