#!/usr/bin/env python3
"""Regenerate the checked-in fixtures: the golden wire bytes (one message of
each kind), the echo fixture consumed by sidecar plug-ins, and the reference
score table. Run from the repo root: python scripts/make_golden.py
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from cookar import wire
from cookar.types import AffordanceInstance, Eye, FrameEnvelope, Polygon, Role

FIXTURES = ROOT / "fixtures"

GOLDEN_FRAME_ID = 7
GOLDEN_INFERENCE_US = 15_950

GOLDEN_INSTANCES = (
    AffordanceInstance(
        class_id=1,  # Knife Handle
        role=Role.GRABBABLE,
        confidence=0.9,
        shape=Polygon((((10, 10), (20, 10), (20, 20), (10, 20)),)),
    ),
    AffordanceInstance(
        class_id=0,  # Knife Blade, with a hole ring
        role=Role.HAZARDOUS,
        confidence=0.4,
        shape=Polygon(
            (
                ((30, 5), (50, 5), (50, 25), (30, 25)),
                ((38, 12), (44, 12), (44, 18), (38, 18)),
            )
        ),
    ),
)


def golden_messages() -> bytes:
    frame = FrameEnvelope(
        frame_id=GOLDEN_FRAME_ID,
        timestamp_us=123_456,
        eye=Eye.LEFT,
        width=2,
        height=2,
        pixels=np.arange(12, dtype=np.uint8).reshape(2, 2, 3),
    )
    result = wire.ResultPayload(
        frame_id=GOLDEN_FRAME_ID,
        inference_us=GOLDEN_INFERENCE_US,
        instances=GOLDEN_INSTANCES,
    )
    return (
        wire.encode_hello()
        + wire.encode_frame(frame)
        + wire.encode_result(result)
        + wire.encode_error(wire.ERR_PROVIDER, GOLDEN_FRAME_ID, "provider failure")
    )


def echo_fixture() -> dict:
    return {
        "inference_us": GOLDEN_INFERENCE_US,
        "frames": {
            str(GOLDEN_FRAME_ID): [
                {
                    "class_id": inst.class_id,
                    "role": inst.role.name.lower(),
                    "confidence": inst.confidence,
                    "segmentation": inst.shape.to_flat(),
                }
                for inst in GOLDEN_INSTANCES
            ]
        },
    }


def reference_scores() -> dict:
    return {
        "rows": [
            {"model": "RTMDet-Ins-l (on COCO)", "mAP": 0.437, "AP@50": 0.660, "AP@75": 0.470},
            {"model": "RTMDet-Ins-l (on our dataset)", "mAP": 0.123, "AP@50": 0.199, "AP@75": 0.310},
            {"model": "RTMDet-Ins-l-Cook (on our dataset)", "mAP": 0.463, "AP@50": 0.749, "AP@75": 0.486},
        ],
        "headline": {"model": "RTMDet-Ins-l-Cook", "mAP": 0.463, "AP@50": 0.749, "AP@75": 0.486},
        "note": (
            "Values follow the models' published comparison table. The base "
            "model's AP@75 is reported elsewhere as 13.2%, which disagrees "
            "with the table cell 0.310; the table value is kept here and the "
            "discrepancy is left unresolved."
        ),
    }


def main() -> None:
    FIXTURES.mkdir(exist_ok=True)
    (FIXTURES / "wire_golden.bin").write_bytes(golden_messages())
    (FIXTURES / "echo_instances.json").write_text(json.dumps(echo_fixture(), indent=1) + "\n")
    (FIXTURES / "reference_scores.json").write_text(
        json.dumps(reference_scores(), indent=1) + "\n"
    )
    print(f"wrote fixtures to {FIXTURES}")


if __name__ == "__main__":
    main()
