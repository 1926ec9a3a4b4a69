"""Model plug-ins. A plug-in turns one decoded frame into raw detections;
the adapter owns label mapping, mask-to-polygon conversion, thresholding,
and the wire.

Two model-free built-ins ship by default so the adapter is fully testable
without any ML dependency:

* ``null`` — returns no detections.
* ``echo-fixture`` — returns detections from a JSON fixture keyed by
  frame_id (the cross-implementation interop fixture).

A real model integrates by subclassing ModelPlugin and registering it in
PLUGINS; see README.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .wire import DecodedFrame

#: Wire value for detections outside the 18-class taxonomy.
UNKNOWN_CLASS = 0xFF

#: The taxonomy the wire speaks: class id -> part name.
CLASS_NAMES = (
    "Knife Blade", "Knife Handle", "Spoon Bowl", "Spoon Handle",
    "Fork Tines", "Fork Handle", "Scissor Blade", "Scissor Handle",
    "Ladle Bowl", "Ladle Handle", "Spatula Head", "Spatula Handle",
    "Pan Base", "Pan Handle", "Cup Base", "Cup Handle",
    "Carafe Base", "Carafe Handle",
)

ROLE_GRABBABLE = 0
ROLE_HAZARDOUS = 1
_ROLE_NAMES = {
    "grabbable": 0, "hazardous": 1, "entry": 2, "exit": 3,
    "containment": 4, "intersection": 5, "activation": 6,
}


def default_role(class_id: int) -> int:
    if class_id == UNKNOWN_CLASS:
        return ROLE_HAZARDOUS  # treat unknown parts as risky
    return ROLE_GRABBABLE if CLASS_NAMES[class_id].endswith("Handle") else ROLE_HAZARDOUS


@dataclass(frozen=True)
class Detection:
    """Raw plug-in output: a model label plus either polygon rings (floats
    allowed) or a boolean mask, and optionally an explicit role."""

    label: int
    score: float
    rings: Optional[Sequence[Sequence[tuple[float, float]]]] = None
    mask: Optional[np.ndarray] = None
    role: Optional[int] = None

    def __post_init__(self):
        if (self.rings is None) == (self.mask is None):
            raise ValueError("a detection carries exactly one of rings or mask")


class ModelPlugin:
    """Base plug-in. ``concurrent_safe`` declares whether segment() may be
    invoked from several sessions at once; the default is serialized."""

    name = "base"
    concurrent_safe = False

    def segment(self, frame: DecodedFrame) -> list[Detection]:
        raise NotImplementedError


class NullModel(ModelPlugin):
    name = "null"
    concurrent_safe = True

    def segment(self, frame: DecodedFrame) -> list[Detection]:
        return []


class EchoFixtureModel(ModelPlugin):
    """Replays instances from a fixture file keyed by frame_id.

    Fixture schema: {"frames": {"<frame_id>": [{"class_id": n,
    "role": name-or-int, "confidence": x, "segmentation": [[x1,y1,...]]}]}}
    """

    name = "echo-fixture"
    concurrent_safe = True

    def __init__(self, fixture_path: str | Path):
        data = json.loads(Path(fixture_path).read_text())
        self.frames: dict[int, list[dict]] = {
            int(fid): items for fid, items in data["frames"].items()
        }

    def segment(self, frame: DecodedFrame) -> list[Detection]:
        out = []
        for item in self.frames.get(frame.frame_id, []):
            role = item.get("role")
            if isinstance(role, str):
                role = _ROLE_NAMES[role]
            rings = [
                list(zip(flat[0::2], flat[1::2])) for flat in item["segmentation"]
            ]
            out.append(
                Detection(
                    label=int(item["class_id"]),
                    score=float(item["confidence"]),
                    rings=rings,
                    role=role,
                )
            )
        return out


def load_plugin(identifier: str, fixture_path: Optional[str] = None) -> ModelPlugin:
    if identifier == "null":
        return NullModel()
    if identifier == "echo-fixture":
        if not fixture_path:
            raise ValueError("echo-fixture plug-in needs a fixture path")
        return EchoFixtureModel(fixture_path)
    raise ValueError(f"unknown plug-in {identifier!r}")
