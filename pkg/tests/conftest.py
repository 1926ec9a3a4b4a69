import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import pytest

from cookar.annotations import Annotation, AnnotationSet, ImageInfo
from cookar.types import Polygon


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" in getattr(report, "nodeid", ""):
                name = report.nodeid.split("::")[-1].replace("test_", "", 1)
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"[{outcome}] {name}")


def square(x: float, y: float, side: float) -> Polygon:
    return Polygon((((x, y), (x + side, y), (x + side, y + side), (x, y + side)),))


@pytest.fixture
def simple_gt() -> AnnotationSet:
    """Two images, three ground-truth boxes across two classes."""
    return AnnotationSet(
        images=[
            ImageInfo(1, "img1.png", 200, 150),
            ImageInfo(2, "img2.png", 200, 150),
        ],
        annotations=[
            Annotation(1, 1, 0, square(10, 10, 100)),
            Annotation(2, 1, 1, square(120, 20, 60)),
            Annotation(3, 2, 0, square(40, 30, 80)),
        ],
    )


def predictions_like(gt: AnnotationSet, shift: float = 0.0, score: float = 1.0) -> AnnotationSet:
    """Predictions equal to ground truth, optionally shifted along +x."""
    return AnnotationSet(
        images=list(gt.images),
        annotations=[
            Annotation(
                1000 + a.annotation_id,
                a.image_id,
                a.class_id,
                a.shape.translated(shift, 0.0),
                score=score,
            )
            for a in gt.annotations
        ],
        taxonomy=gt.taxonomy,
    )
