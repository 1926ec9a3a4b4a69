"""Domain types shared by every stage of the pipeline.

All types are immutable after construction and safe to hand between
concurrent pipeline stages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np


class Role(IntEnum):
    """Affordance role of an object part. Values are the wire encoding."""

    GRABBABLE = 0
    HAZARDOUS = 1
    ENTRY = 2
    EXIT = 3
    CONTAINMENT = 4
    INTERSECTION = 5
    ACTIVATION = 6


class Eye(IntEnum):
    LEFT = 0
    RIGHT = 1
    MONO = 2


#: The 18 kitchen-tool part classes, in class-id order.
CLASS_NAMES: tuple[str, ...] = (
    "Knife Blade",
    "Knife Handle",
    "Spoon Bowl",
    "Spoon Handle",
    "Fork Tines",
    "Fork Handle",
    "Scissor Blade",
    "Scissor Handle",
    "Ladle Bowl",
    "Ladle Handle",
    "Spatula Head",
    "Spatula Handle",
    "Pan Base",
    "Pan Handle",
    "Cup Base",
    "Cup Handle",
    "Carafe Base",
    "Carafe Handle",
)

#: Wire sentinel for a detection whose class is not in the taxonomy.
UNKNOWN_CLASS = 0xFF


def default_role(name: str) -> Role:
    """Handles are grabbable; every other part defaults to hazardous."""
    return Role.GRABBABLE if name.endswith("Handle") else Role.HAZARDOUS


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered (class_id, name, default_role) table for the 18 part classes."""

    entries: tuple[tuple[int, str, Role], ...]

    def __post_init__(self):
        if len(self.entries) != 18:
            raise ValueError(f"taxonomy must have 18 entries, got {len(self.entries)}")
        ids = [cid for cid, _, _ in self.entries]
        if ids != list(range(18)):
            raise ValueError("class ids must be unique and contiguous 0..17")
        names = tuple(name for _, name, _ in self.entries)
        if names != CLASS_NAMES:
            raise ValueError("taxonomy names do not match the 18 known classes")

    def name_of(self, class_id: int) -> str:
        self._check(class_id)
        return self.entries[class_id][1]

    def id_of(self, name: str) -> int:
        for cid, n, _ in self.entries:
            if n == name:
                return cid
        raise KeyError(f"unknown class name: {name!r}")

    def role_of(self, class_id: int, override: Optional[dict[str, Role]] = None) -> Role:
        """Role for a class, with optional per-class-name overrides."""
        self._check(class_id)
        cid, name, role = self.entries[class_id]
        if override:
            for key in override:
                if key not in CLASS_NAMES:
                    raise KeyError(f"override names unknown class: {key!r}")
            if name in override:
                return override[name]
        return role

    def _check(self, class_id: int) -> None:
        if not 0 <= class_id < len(self.entries):
            raise KeyError(f"class_id {class_id} not in taxonomy")


def default_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(
        tuple((i, name, default_role(name)) for i, name in enumerate(CLASS_NAMES))
    )


Vertex = tuple[float, float]
Ring = tuple[Vertex, ...]


class InvalidGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    """Polygon as a list of rings; first ring is the exterior.

    Interior rings are holes under the even-odd fill rule. Vertices are
    sub-pixel (x, y) in pixel units, finite and non-negative.
    """

    rings: tuple[Ring, ...]

    def __post_init__(self):
        rings = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.rings)
        object.__setattr__(self, "rings", rings)
        for ring in rings:
            if len(ring) < 3:
                raise InvalidGeometryError(f"ring has {len(ring)} vertices, need >= 3")
            for x, y in ring:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise InvalidGeometryError("vertex coordinates must be finite")
                if x < 0 or y < 0:
                    raise InvalidGeometryError("vertex coordinates must be >= 0")

    @classmethod
    def from_flat(cls, flat_rings: list[list[float]]) -> "Polygon":
        """Build from flat [x1, y1, x2, y2, ...] ring arrays."""
        rings = []
        for flat in flat_rings:
            if len(flat) % 2 != 0:
                raise InvalidGeometryError("flat ring has odd coordinate count")
            rings.append(tuple(zip(flat[0::2], flat[1::2])))
        return cls(tuple(rings))

    def to_flat(self) -> list[list[float]]:
        return [[c for xy in ring for c in xy] for ring in self.rings]

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(
            tuple(tuple((x + dx, y + dy) for x, y in ring) for ring in self.rings)
        )

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [x for ring in self.rings for x, _ in ring]
        ys = [y for ring in self.rings for _, y in ring]
        return min(xs), min(ys), max(xs), max(ys)

    def area(self) -> float:
        """Even-odd area: |shoelace(exterior)| minus |shoelace(holes)|."""
        total = 0.0
        for i, ring in enumerate(self.rings):
            s = 0.0
            for (x1, y1), (x2, y2) in zip(ring, ring[1:] + ring[:1]):
                s += x1 * y2 - x2 * y1
            total += abs(s) / 2.0 if i == 0 else -abs(s) / 2.0
        return max(total, 0.0)


@dataclass(frozen=True)
class AffordanceInstance:
    """One detected or annotated object part."""

    class_id: int
    role: Role
    confidence: float
    shape: Polygon

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if not (0 <= self.class_id < 18 or self.class_id == UNKNOWN_CLASS):
            raise ValueError(f"class_id {self.class_id} not in taxonomy (or unknown sentinel)")


@dataclass(frozen=True, eq=False)
class Bitmask:
    """Rasterized pixel membership, row-major."""

    arr: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        a = np.asarray(self.arr, dtype=bool)
        if a.ndim != 2:
            raise ValueError("bitmask array must be 2-D")
        a.setflags(write=False)
        object.__setattr__(self, "arr", a)

    @property
    def width(self) -> int:
        return self.arr.shape[1]

    @property
    def height(self) -> int:
        return self.arr.shape[0]

    def count(self) -> int:
        return int(self.arr.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, Bitmask) and self.arr.shape == other.arr.shape and bool(
            np.array_equal(self.arr, other.arr)
        )

    def __hash__(self):
        return hash((self.arr.shape, self.arr.tobytes()))


def role_of(
    class_id: int,
    taxonomy: ClassTaxonomy,
    role_map_override: Optional[dict[str, Role]] = None,
) -> Role:
    """Role for ``class_id``: handles grabbable, the rest hazardous, unless overridden."""
    return taxonomy.role_of(class_id, role_map_override)


@dataclass(frozen=True, eq=False)
class FrameEnvelope:
    """One captured frame plus optional per-pixel depth."""

    frame_id: int
    timestamp_us: int
    eye: Eye
    width: int
    height: int
    pixels: np.ndarray  # uint8, shape (height, width, 3), RGB
    depth_mm: Optional[np.ndarray] = None  # uint16, shape (height, width)

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {px.shape} != {(self.height, self.width, 3)}"
            )
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        if self.depth_mm is not None:
            d = np.ascontiguousarray(self.depth_mm, dtype=np.uint16)
            if d.shape != (self.height, self.width):
                raise ValueError(f"depth buffer shape {d.shape} != {(self.height, self.width)}")
            d.setflags(write=False)
            object.__setattr__(self, "depth_mm", d)
        if self.frame_id < 0 or self.timestamp_us < 0:
            raise ValueError("frame_id and timestamp_us must be non-negative")
