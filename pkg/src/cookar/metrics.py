"""Instance-segmentation metrics over rasterized masks: greedy
confidence-ordered matching, 101-point interpolated average precision, and
mAP / AP@50 / AP@75 aggregation.

Conventions: IoU thresholds 0.50..0.95 in 0.05 steps; classes with zero
ground-truth instances are excluded from class means; at most ``max_dets``
highest-confidence predictions per image; ties broken by annotation id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .annotations import Annotation, AnnotationSet
from .geometry import mask_iou, rasterize
from .types import Bitmask

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS: np.ndarray = np.array([k / 100 for k in range(101)], dtype=np.float64)
DEFAULT_MAX_DETS = 100

ESTIMATOR_NOTE = (
    "AP estimator: 101-point interpolated precision over recall levels "
    "0.00..1.00, greedy confidence-ordered matching, max 100 detections per "
    "image, classes without ground truth excluded from means (COCO-style "
    "defaults; assumption, not a measured property of any model)."
)


class MatchRecord(NamedTuple):
    prediction_id: int
    confidence: float
    matched_gt_id: Optional[int]


@dataclass
class MatchResult:
    """Greedy matching outcome for one image at one IoU threshold."""

    iou_threshold: float
    by_class: dict[int, list[MatchRecord]]
    gt_count: dict[int, int]


def _sorted_predictions(predictions: list[Annotation], max_dets: int) -> list[Annotation]:
    for p in predictions:
        if p.score is None:
            raise ValueError(f"prediction {p.annotation_id} has no score")
    ordered = sorted(predictions, key=lambda p: (-p.score, p.annotation_id))
    return ordered[:max_dets]


def match_instances(
    predictions: list[Annotation],
    ground_truths: list[Annotation],
    iou_threshold: float,
    canvas: tuple[int, int],
    max_dets: int = DEFAULT_MAX_DETS,
    _mask_cache: Optional[dict[tuple[str, int], Bitmask]] = None,
) -> MatchResult:
    """Match one image's predictions to its ground truths at one threshold.

    Predictions are processed in confidence-descending order (ties: lower
    annotation id first); each matches the unmatched same-class ground truth
    of highest IoU when that IoU reaches the threshold. IoU is computed on
    rasterized masks at the image's dimensions.
    """
    width, height = canvas
    cache = _mask_cache if _mask_cache is not None else {}

    def mask_of(ann: Annotation, kind: str) -> Bitmask:
        # prediction and ground-truth ids live in different namespaces
        key = (kind, ann.annotation_id)
        if key not in cache:
            cache[key] = rasterize(ann.shape, width, height)
        return cache[key]

    gt_count: dict[int, int] = {}
    gts_by_class: dict[int, list[Annotation]] = {}
    for gt in ground_truths:
        gt_count[gt.class_id] = gt_count.get(gt.class_id, 0) + 1
        gts_by_class.setdefault(gt.class_id, []).append(gt)

    by_class: dict[int, list[MatchRecord]] = {}
    matched_gt: set[int] = set()
    for pred in _sorted_predictions(predictions, max_dets):
        best_gt = None
        best_iou = 0.0
        for gt in gts_by_class.get(pred.class_id, []):
            if gt.annotation_id in matched_gt:
                continue
            iou = mask_iou(mask_of(pred, "pred"), mask_of(gt, "gt"))
            if iou >= iou_threshold and (
                iou > best_iou or (iou == best_iou and best_gt is not None
                                   and gt.annotation_id < best_gt.annotation_id)
            ):
                best_gt, best_iou = gt, iou
        if best_gt is not None:
            matched_gt.add(best_gt.annotation_id)
        by_class.setdefault(pred.class_id, []).append(
            MatchRecord(
                prediction_id=pred.annotation_id,
                confidence=float(pred.score),
                matched_gt_id=best_gt.annotation_id if best_gt else None,
            )
        )
    return MatchResult(iou_threshold=iou_threshold, by_class=by_class, gt_count=gt_count)


def average_precision(records: list[MatchRecord], gt_count: int) -> float:
    """Interpolated AP for one class at one threshold: mean over the 101
    recall levels of the maximum precision at recall >= level."""
    if gt_count < 1:
        raise ValueError("average precision needs at least one ground truth")
    if not records:
        return 0.0
    ordered = sorted(records, key=lambda r: (-r.confidence, r.prediction_id))
    matched = np.array([r.matched_gt_id is not None for r in ordered], dtype=np.float64)
    tp = np.cumsum(matched)
    precision = tp / np.arange(1, len(ordered) + 1)
    recall = tp / gt_count
    best_right = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    levels = np.where(idx < len(ordered), best_right[np.minimum(idx, len(ordered) - 1)], 0.0)
    return float(levels.mean())


@dataclass
class MetricsReport:
    model: str
    map_: float
    ap50: float
    ap75: float
    per_class: dict[str, dict[str, float]]
    prediction_count: int
    gt_count: int
    thresholds: tuple[float, ...] = IOU_THRESHOLDS
    notes: str = ESTIMATOR_NOTE

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "mAP": self.map_,
            "AP@50": self.ap50,
            "AP@75": self.ap75,
            "per_class": self.per_class,
            "prediction_count": self.prediction_count,
            "gt_count": self.gt_count,
            "thresholds": list(self.thresholds),
            "notes": self.notes,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            model=data.get("model", "predictions"),
            map_=float(data["mAP"]),
            ap50=float(data["AP@50"]),
            ap75=float(data["AP@75"]),
            per_class=data.get("per_class", {}),
            prediction_count=int(data.get("prediction_count", 0)),
            gt_count=int(data.get("gt_count", 0)),
            thresholds=tuple(data.get("thresholds", IOU_THRESHOLDS)),
            notes=data.get("notes", ESTIMATOR_NOTE),
        )

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def render_table(rows: list[tuple[str, float, float, float]]) -> str:
    """Aligned plain-text table with columns Model | mAP | AP@50 | AP@75."""
    header = ("Model", "mAP", "AP@50", "AP@75")
    cells = [header] + [
        (name, f"{m:.3f}", f"{a50:.3f}", f"{a75:.3f}") for name, m, a50, a75 in rows
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(4)]
    return "\n".join(
        " | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip()
        for row in cells
    )


def evaluate_sets(
    predictions: AnnotationSet,
    ground_truth: AnnotationSet,
    max_dets: int = DEFAULT_MAX_DETS,
    model: str = "predictions",
) -> MetricsReport:
    if not ground_truth.annotations:
        raise ValueError("ground-truth set has no annotations")
    for p in predictions.annotations:
        if p.score is None:
            raise ValueError(f"prediction {p.annotation_id} has no score")

    # pooled match records per (threshold, class) across images
    pooled: dict[tuple[float, int], list[MatchRecord]] = {}
    gt_totals: dict[int, int] = {}
    for gt in ground_truth.annotations:
        gt_totals[gt.class_id] = gt_totals.get(gt.class_id, 0) + 1

    for image in ground_truth.images:
        gts = ground_truth.by_image(image.image_id)
        preds = (
            predictions.by_image(image.image_id)
            if predictions.image(image.image_id) is not None
            else []
        )
        if not gts and not preds:
            continue
        canvas = (image.width, image.height)
        cache: dict[tuple[str, int], Bitmask] = {}
        for threshold in IOU_THRESHOLDS:
            result = match_instances(
                preds, gts, threshold, canvas, max_dets=max_dets, _mask_cache=cache
            )
            for class_id, records in result.by_class.items():
                pooled.setdefault((threshold, class_id), []).extend(records)

    classes = sorted(gt_totals)
    ap: dict[tuple[float, int], float] = {}
    for threshold in IOU_THRESHOLDS:
        for class_id in classes:
            ap[(threshold, class_id)] = average_precision(
                pooled.get((threshold, class_id), []), gt_totals[class_id]
            )

    per_class = {}
    for class_id in classes:
        name = ground_truth.taxonomy.name_of(class_id)
        per_class[name] = {
            "AP": float(np.mean([ap[(t, class_id)] for t in IOU_THRESHOLDS])),
            "AP@50": ap[(0.50, class_id)],
            "AP@75": ap[(0.75, class_id)],
            "gt_count": gt_totals[class_id],
        }
    map_ = float(np.mean([per_class[n]["AP"] for n in per_class]))
    ap50 = float(np.mean([ap[(0.50, c)] for c in classes]))
    ap75 = float(np.mean([ap[(0.75, c)] for c in classes]))
    return MetricsReport(
        model=model,
        map_=map_,
        ap50=ap50,
        ap75=ap75,
        per_class=per_class,
        prediction_count=len(predictions.annotations),
        gt_count=len(ground_truth.annotations),
    )


def evaluate(
    predictions_path: str | Path,
    ground_truth_path: str | Path,
    max_dets: int = DEFAULT_MAX_DETS,
    model: Optional[str] = None,
) -> MetricsReport:
    """Evaluate a predictions file against a ground-truth file (both in the
    annotation JSON format; predictions carry ``score``)."""
    preds = AnnotationSet.load(predictions_path)
    gts = AnnotationSet.load(ground_truth_path)
    return evaluate_sets(
        preds, gts, max_dets=max_dets, model=model or Path(predictions_path).stem
    )
