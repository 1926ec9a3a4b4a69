"""Definition-level reference implementations used to check the package.

Everything here is deliberately naive: per-pixel point-in-polygon tests,
explicit set arithmetic, nested-loop matching, and AP straight from its
definition. None of it shares code with the implementation under test.
"""

from __future__ import annotations

import math

import numpy as np


def point_in_rings(px: float, py: float, rings) -> bool:
    """Even-odd rule by counting edge crossings of a rightward ray."""
    inside = False
    for ring in rings:
        n = len(ring)
        j = n - 1
        for i in range(n):
            xi, yi = ring[i]
            xj, yj = ring[j]
            if (yi > py) != (yj > py):
                x_cross = xi + (py - yi) * (xj - xi) / (yj - yi)
                if px < x_cross:
                    inside = not inside
            j = i
    return inside


def brute_rasterize(rings, width: int, height: int) -> np.ndarray:
    """Test every pixel center independently."""
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        for x in range(width):
            out[y, x] = point_in_rings(x + 0.5, y + 0.5, rings)
    return out


def brute_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = 0
    union = 0
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            if a[y, x] and b[y, x]:
                inter += 1
            if a[y, x] or b[y, x]:
                union += 1
    return inter / union if union else 0.0


def brute_boundary(mask: np.ndarray, thickness: int) -> np.ndarray:
    """Thickness-1 boundary from the definition, then (t-1) 4-neighbor
    dilations intersected with the mask."""
    h, w = mask.shape

    def unset(y, x):
        return y < 0 or y >= h or x < 0 or x >= w or not mask[y, x]

    edge = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            if mask[y, x] and (
                unset(y - 1, x) or unset(y + 1, x) or unset(y, x - 1) or unset(y, x + 1)
            ):
                edge[y, x] = True
    for _ in range(thickness - 1):
        grown = edge.copy()
        for y in range(h):
            for x in range(w):
                if edge[y, x]:
                    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w:
                            grown[ny, nx] = True
        edge = grown & mask
    return edge


def nn_warp(mask: np.ndarray, matrix: tuple[float, float, float, float, float, float],
            out_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor image warp for (a, b, c, d, e, f) applied forward;
    output sampled through the explicit inverse."""
    a, b, c, d, e, f = matrix
    det = a * e - b * d
    ia, ib = e / det, -b / det
    id_, ie = -d / det, a / det
    ic = -(ia * c + ib * f)
    if_ = -(id_ * c + ie * f)
    oh, ow = out_shape
    out = np.zeros(out_shape, dtype=bool)
    for y in range(oh):
        for x in range(ow):
            cx, cy = x + 0.5, y + 0.5
            sx = ia * cx + ib * cy + ic
            sy = id_ * cx + ie * cy + if_
            px, py = math.floor(sx), math.floor(sy)
            if 0 <= px < mask.shape[1] and 0 <= py < mask.shape[0]:
                out[y, x] = mask[py, px]
    return out


def greedy_match(preds, gts, iou_of, threshold: float, max_dets: int = 100):
    """preds: list of (pred_id, class_id, confidence); gts: list of
    (gt_id, class_id); iou_of(pred_id, gt_id) -> float. Returns
    [(pred_id, class_id, confidence, matched_gt_or_None)] in greedy order."""
    order = sorted(preds, key=lambda p: (-p[2], p[0]))[:max_dets]
    taken = set()
    out = []
    for pred_id, class_id, conf in order:
        best = None
        best_iou = -1.0
        for gt_id, gt_class in gts:
            if gt_class != class_id or gt_id in taken:
                continue
            iou = iou_of(pred_id, gt_id)
            if iou < threshold:
                continue
            if iou > best_iou or (iou == best_iou and best is not None and gt_id < best):
                best, best_iou = gt_id, iou
        if best is not None:
            taken.add(best)
        out.append((pred_id, class_id, conf, best))
    return out


def ap_from_definition(records, gt_count: int) -> float:
    """records: list of (confidence, pred_id, is_tp). AP = mean over the 101
    recall levels of the best precision among PR points at recall >= level."""
    if gt_count < 1:
        raise ValueError("need ground truth")
    ordered = sorted(records, key=lambda r: (-r[0], r[1]))
    points = []
    tp = 0
    for rank, (_, _, is_tp) in enumerate(ordered, start=1):
        if is_tp:
            tp += 1
        points.append((tp / gt_count, tp / rank))
    total = 0.0
    for k in range(101):
        level = k / 100
        best = 0.0
        for recall, precision in points:
            if recall >= level and precision > best:
                best = precision
        total += best
    return total / 101


def quantile_by_sorting(values, q: float) -> float:
    """Nearest-rank quantile: ceil(q * n)-th smallest."""
    ordered = sorted(values)
    if not ordered:
        return 0.0
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[min(rank, len(ordered)) - 1]
