"""Annotation-set JSON: the one file format shared by the replay backend,
the metrics evaluator, and the dataset tooling.

Top-level keys are ``images``, ``annotations``, ``categories``; each
annotation's ``segmentation`` is a list of flat ring arrays
[x1, y1, x2, y2, ...].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .types import CLASS_NAMES, ClassTaxonomy, Polygon, Role, default_taxonomy


@dataclass(frozen=True)
class ImageInfo:
    image_id: int
    file_name: str
    width: int
    height: int


@dataclass(frozen=True)
class Annotation:
    annotation_id: int
    image_id: int
    class_id: int
    shape: Polygon
    score: Optional[float] = None


@dataclass
class AnnotationSet:
    images: list[ImageInfo]
    annotations: list[Annotation]
    taxonomy: ClassTaxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self):
        image_ids = {im.image_id for im in self.images}
        if len(image_ids) != len(self.images):
            raise ValueError("duplicate image ids")
        ann_ids = set()
        for ann in self.annotations:
            if ann.image_id not in image_ids:
                raise ValueError(
                    f"annotation {ann.annotation_id} references missing image {ann.image_id}"
                )
            if ann.annotation_id in ann_ids:
                raise ValueError(f"duplicate annotation id {ann.annotation_id}")
            ann_ids.add(ann.annotation_id)
            self.taxonomy.name_of(ann.class_id)  # raises on unknown class

    def by_image(self, image_id: int) -> list[Annotation]:
        anns = [a for a in self.annotations if a.image_id == image_id]
        anns.sort(key=lambda a: a.annotation_id)
        return anns

    def image(self, image_id: int) -> Optional[ImageInfo]:
        for im in self.images:
            if im.image_id == image_id:
                return im
        return None

    def to_dict(self) -> dict:
        return {
            "images": [
                {
                    "id": im.image_id,
                    "file_name": im.file_name,
                    "width": im.width,
                    "height": im.height,
                }
                for im in self.images
            ],
            "annotations": [
                {
                    "id": a.annotation_id,
                    "image_id": a.image_id,
                    "category_id": a.class_id,
                    "segmentation": a.shape.to_flat(),
                    **({"score": a.score} if a.score is not None else {}),
                }
                for a in self.annotations
            ],
            "categories": [
                {"id": cid, "name": name, "role": role.name.lower()}
                for cid, name, role in self.taxonomy.entries
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationSet":
        for key in ("images", "annotations", "categories"):
            if key not in data:
                raise ValueError(f"annotation JSON missing top-level key {key!r}")
        images = [
            ImageInfo(
                image_id=int(im["id"]),
                file_name=str(im["file_name"]),
                width=int(im["width"]),
                height=int(im["height"]),
            )
            for im in data["images"]
        ]
        annotations = [
            Annotation(
                annotation_id=int(a["id"]),
                image_id=int(a["image_id"]),
                class_id=int(a["category_id"]),
                shape=Polygon.from_flat(a["segmentation"]),
                score=float(a["score"]) if "score" in a and a["score"] is not None else None,
            )
            for a in data["annotations"]
        ]
        cats = sorted(data["categories"], key=lambda c: int(c["id"]))
        entries = tuple(
            (
                int(c["id"]),
                str(c["name"]),
                Role[c["role"].upper()] if "role" in c else None,
            )
            for c in cats
        )
        taxonomy = ClassTaxonomy(
            tuple(
                (cid, name, role if role is not None else default_taxonomy().role_of(cid))
                for cid, name, role in entries
            )
        )
        return cls(images=images, annotations=annotations, taxonomy=taxonomy)

    @classmethod
    def load(cls, path: str | Path) -> "AnnotationSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_categories() -> list[dict]:
    return [
        {"id": i, "name": name, "role": default_taxonomy().role_of(i).name.lower()}
        for i, name in enumerate(CLASS_NAMES)
    ]
