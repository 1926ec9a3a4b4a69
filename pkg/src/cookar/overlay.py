"""Overlay compositor: per-role solid/outline styling, depth-ordered
rendering, and per-instance stereo disparity shifts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import boundary, rasterize, round_half_up
from .types import AffordanceInstance, Bitmask, Role

GRABBABLE_GREEN = (0x3B, 0xE8, 0xB0)
HAZARD_RED = (0xFC, 0x62, 0x6A)
CONTRAST_WHITE = (0xFF, 0xFF, 0xFF)

MODES = ("solid", "outline", "off")


@dataclass(frozen=True)
class RoleStyle:
    mode: str
    color: tuple[int, int, int]
    alpha: float = 1.0
    thickness: int = 3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not all(0 <= c <= 255 for c in self.color) or len(self.color) != 3:
            raise ValueError(f"invalid RGB color {self.color}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        if self.mode == "outline" and self.thickness < 1:
            raise ValueError("outline thickness must be >= 1")


@dataclass(frozen=True)
class StyleSpec:
    """Rendering rules per role."""

    roles: tuple[tuple[Role, RoleStyle], ...]

    def style_for(self, role: Role) -> RoleStyle:
        for r, s in self.roles:
            if r == role:
                return s
        return RoleStyle(mode="off", color=(0, 0, 0), alpha=0.0)

    def with_role(self, role: Role, style: RoleStyle) -> "StyleSpec":
        kept = tuple((r, s) for r, s in self.roles if r != role)
        return StyleSpec(kept + ((role, style),))


def _extended_outline() -> tuple[tuple[Role, RoleStyle], ...]:
    # entry/exit/containment/intersection/activation as contrasting outlines
    extra = (Role.ENTRY, Role.EXIT, Role.CONTAINMENT, Role.INTERSECTION, Role.ACTIVATION)
    return tuple(
        (r, RoleStyle(mode="outline", color=CONTRAST_WHITE, alpha=1.0, thickness=3))
        for r in extra
    )


#: As-built two-color system: both roles solid.
PRESET_COOKAR_STUDY = StyleSpec(
    (
        (Role.GRABBABLE, RoleStyle(mode="solid", color=GRABBABLE_GREEN, alpha=1.0)),
        (Role.HAZARDOUS, RoleStyle(mode="solid", color=HAZARD_RED, alpha=1.0)),
    )
    + _extended_outline()
)

#: Majority user preference: solid grabbable, outlined hazardous.
PRESET_PREFERRED = StyleSpec(
    (
        (Role.GRABBABLE, RoleStyle(mode="solid", color=GRABBABLE_GREEN, alpha=1.0)),
        (Role.HAZARDOUS, RoleStyle(mode="outline", color=HAZARD_RED, alpha=1.0, thickness=3)),
    )
    + _extended_outline()
)

PRESETS = {"cookar-study": PRESET_COOKAR_STUDY, "preferred": PRESET_PREFERRED}


def _parse_hex(text: str) -> tuple[int, int, int]:
    t = text.lstrip("#")
    if len(t) != 6:
        raise ValueError(f"color must be #RRGGBB, got {text!r}")
    return tuple(int(t[i : i + 2], 16) for i in (0, 2, 4))  # type: ignore[return-value]


def load_style(path: str | Path) -> StyleSpec:
    """Style file: JSON object, role name -> {mode, color, alpha, thickness}."""
    data = json.loads(Path(path).read_text())
    roles = []
    for role_name, cfg in data.items():
        role = Role[role_name.upper()]
        roles.append(
            (
                role,
                RoleStyle(
                    mode=cfg["mode"],
                    color=_parse_hex(cfg["color"]),
                    alpha=float(cfg.get("alpha", 1.0)),
                    thickness=int(cfg.get("thickness", 3)),
                ),
            )
        )
    return StyleSpec(tuple(roles))


def save_style(style: StyleSpec, path: str | Path) -> None:
    data = {
        role.name.lower(): {
            "mode": s.mode,
            "color": "#{:02X}{:02X}{:02X}".format(*s.color),
            "alpha": s.alpha,
            "thickness": s.thickness,
        }
        for role, s in style.roles
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


def resolve_style(name_or_path: str) -> StyleSpec:
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    return load_style(name_or_path)


def disparity_px(depth_mm: float, focal_px: float, baseline_m: float) -> int:
    """Horizontal stereo shift in whole pixels for a point at ``depth_mm``."""
    if depth_mm <= 0:
        raise ValueError(f"depth must be positive, got {depth_mm}")
    return round_half_up(focal_px * baseline_m * 1000.0 / depth_mm)


def _blend(image: np.ndarray, mask: np.ndarray, color: tuple[int, int, int], alpha: float) -> None:
    if alpha == 0.0 or not mask.any():
        return
    src = image[mask].astype(np.float64)
    col = np.array(color, dtype=np.float64)
    image[mask] = np.floor((1.0 - alpha) * src + alpha * col + 0.5).astype(np.uint8)


def _median_depth(mask: np.ndarray, depth_mm: np.ndarray) -> float:
    vals = depth_mm[mask]
    if vals.size == 0:
        return float("inf")
    return float(np.median(vals))


def _draw_order(
    instances: list[AffordanceInstance],
    masks: list[np.ndarray],
    depth_mm: Optional[np.ndarray],
) -> list[int]:
    if depth_mm is None:
        return list(range(len(instances)))
    keyed = [
        (-_median_depth(masks[i], depth_mm), instances[i].class_id, i)
        for i in range(len(instances))
    ]
    keyed.sort(key=lambda k: (k[0], k[1]))  # far to near; ties by class id
    return [i for _, _, i in keyed]


def composite(
    image: np.ndarray,
    instances: list[AffordanceInstance],
    style: StyleSpec,
    depth_mm: Optional[np.ndarray] = None,
    shift_px: Optional[dict[int, int]] = None,
) -> np.ndarray:
    """Blend styled overlays onto a copy of ``image``.

    With a depth map, instances render far-to-near by median depth over the
    instance mask (ties: lower class id first) so nearer overlays occlude
    farther ones. ``shift_px`` translates instance i left by shift_px[i]
    pixels (used for the right stereo eye).
    """
    out = np.array(image, dtype=np.uint8, copy=True)
    if not instances:
        return out
    h, w = out.shape[:2]
    masks = []
    for idx, inst in enumerate(instances):
        shape = inst.shape
        if shift_px and shift_px.get(idx):
            shape = shape.translated(-shift_px[idx], 0)
        masks.append(rasterize(shape, w, h).arr)
    for idx in _draw_order(instances, masks, depth_mm):
        inst = instances[idx]
        rs = style.style_for(inst.role)
        if rs.mode == "off" or not masks[idx].any():
            continue
        if rs.mode == "solid":
            region = masks[idx]
        else:
            region = boundary(Bitmask(masks[idx]), rs.thickness).arr
        _blend(out, region, rs.color, rs.alpha)
    return out


def composite_stereo(
    left: np.ndarray,
    right: np.ndarray,
    instances: list[AffordanceInstance],
    style: StyleSpec,
    depth_mm: np.ndarray,
    focal_px: float,
    baseline_m: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Composite both eyes: the right eye's overlays are the left overlays
    translated left by each instance's median-depth disparity."""
    h, w = left.shape[:2]
    shifts: dict[int, int] = {}
    for idx, inst in enumerate(instances):
        mask = rasterize(inst.shape, w, h).arr
        depth = _median_depth(mask, depth_mm)
        if np.isfinite(depth) and depth > 0:
            shifts[idx] = disparity_px(depth, focal_px, baseline_m)
        else:
            shifts[idx] = 0
    out_left = composite(left, instances, style, depth_mm=depth_mm)
    out_right = composite(right, instances, style, depth_mm=depth_mm, shift_px=shifts)
    return out_left, out_right
