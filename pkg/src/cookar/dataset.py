"""Dataset curation: detector-gated key-frame selection, the five
annotation-aware augmentation operations, resolution normalization, and
deterministic train/val/test splitting.

All sampling goes through the package's splitmix64 stream so identical seeds
give byte-identical outputs on any platform.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .annotations import Annotation
from .geometry import Affine, transform_polygon
from .rng import SeededStream, mix64

log = logging.getLogger("cookar.dataset")

DEFAULT_FRAME_SKIP = 20
MIN_INSTANCE_AREA_PX2 = 4.0


def filter_frames(
    frame_ids: Sequence[int],
    interest_predicate: Callable[[int], bool],
    skip: int = DEFAULT_FRAME_SKIP,
) -> list[int]:
    """Scan ids in order; when the predicate fires at position i, emit that
    frame and resume scanning ``skip`` positions later."""
    kept = []
    i = 0
    while i < len(frame_ids):
        if interest_predicate(frame_ids[i]):
            kept.append(frame_ids[i])
            i += skip + 1
        else:
            i += 1
    return kept


@dataclass(frozen=True)
class AugmentParams:
    """Sampling ranges for one augmentation pass. Each field is the maximum
    magnitude; the sampled values are uniform in the closed range
    ([0, max] for crop/blur/noise, [-max, +max] for rotation/brightness)."""

    seed: int
    crop_zoom: float = 0.40
    rotation_deg: float = 15.0
    brightness: float = 0.15
    blur_sigma: float = 2.5
    noise_frac: float = 0.001

    def __post_init__(self):
        if not 0.0 <= self.crop_zoom < 1.0:
            raise ValueError("crop_zoom must be in [0, 1)")
        for name in ("rotation_deg", "brightness", "blur_sigma", "noise_frac"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class SampledAugment:
    zoom: float
    rotation_deg: float
    brightness: float
    blur_sigma: float
    noise_frac: float


def sample_augment(params: AugmentParams, stream: SeededStream) -> SampledAugment:
    return SampledAugment(
        zoom=stream.uniform(0.0, params.crop_zoom),
        rotation_deg=stream.uniform(-params.rotation_deg, params.rotation_deg),
        brightness=stream.uniform(-params.brightness, params.brightness),
        blur_sigma=stream.uniform(0.0, params.blur_sigma),
        noise_frac=stream.uniform(0.0, params.noise_frac),
    )


# ---------------------------------------------------------------------------
# image warps
# ---------------------------------------------------------------------------

def _bilinear_sample(image: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``image`` at float coordinates (pixel centers at +0.5), with
    black outside the frame."""
    h, w = image.shape[:2]
    fx = sx - 0.5
    fy = sy - 0.5
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    wx = fx - x0
    wy = fy - y0
    out = np.zeros(sx.shape + (3,), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (wx if dx else 1.0 - wx) * (wy if dy else 1.0 - wy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            contrib = np.zeros(sx.shape + (3,), dtype=np.float64)
            contrib[valid] = image[yi[valid], xi[valid]].astype(np.float64)
            out += contrib * weight[..., None]
    return np.floor(out + 0.5).astype(np.uint8)


def warp_image(image: np.ndarray, transform: Affine, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear inverse-mapped warp onto a (width, height) canvas."""
    inv = transform.invert()
    ow, oh = out_size
    ys, xs = np.mgrid[0:oh, 0:ow]
    cx = xs + 0.5
    cy = ys + 0.5
    sx = inv.a * cx + inv.b * cy + inv.c
    sy = inv.d * cx + inv.e * cy + inv.f
    return _bilinear_sample(image, sx, sy)


def apply_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    """v' = clamp(round(v * (1 + factor)), 0, 255) per channel."""
    scaled = np.floor(image.astype(np.float64) * (1.0 + factor) + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at 3 sigma, reflect edges."""
    if sigma <= 0:
        return image.copy()
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    padded = np.pad(image.astype(np.float64), ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    vert = sum(
        padded[i : i + image.shape[0]] * kernel[i] for i in range(2 * radius + 1)
    )
    padded = np.pad(vert, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    horiz = sum(
        padded[:, i : i + image.shape[1]] * kernel[i] for i in range(2 * radius + 1)
    )
    return np.clip(np.floor(horiz + 0.5), 0, 255).astype(np.uint8)


def salt_pepper_noise(image: np.ndarray, frac: float, stream: SeededStream) -> np.ndarray:
    """Replace ``frac`` of pixel positions with per-channel 0 or 255."""
    out = image.copy()
    h, w = image.shape[:2]
    count = int(round(frac * h * w))
    if count <= 0:
        return out
    chosen = set()
    while len(chosen) < count:
        chosen.add(stream.randint(0, h * w - 1))
    for pos in sorted(chosen):
        y, x = divmod(pos, w)
        out[y, x] = [255 if stream.randint(0, 1) else 0 for _ in range(3)]
    return out


# ---------------------------------------------------------------------------
# the augmentation pass
# ---------------------------------------------------------------------------

def augment(
    image: np.ndarray,
    annotations: list[Annotation],
    params: AugmentParams,
) -> tuple[np.ndarray, list[Annotation], Affine]:
    """One augmented copy of (image, annotations).

    Order: crop (window side = 1 - zoom of each dimension, position uniform)
    and resize back to the original size, rotation about center with black
    fill, brightness, Gaussian blur, salt-and-pepper noise. Polygons ride the
    same crop/resize/rotation affine; instances whose transformed area drops
    below 4 px^2 are dropped. Returns the affine for consistency checks.
    """
    h, w = image.shape[:2]
    stream = SeededStream(params.seed)
    sampled = sample_augment(params, stream)

    side = 1.0 - sampled.zoom
    cw = max(1, int(round(w * side)))
    ch = max(1, int(round(h * side)))
    x0 = stream.randint(0, w - cw)
    y0 = stream.randint(0, h - ch)
    crop_resize = Affine.scaling(w / cw, h / ch).compose(Affine.translation(-x0, -y0))
    transform = Affine.rotation_about(sampled.rotation_deg, w / 2.0, h / 2.0).compose(
        crop_resize
    )

    identity_geometry = (
        sampled.zoom == 0.0 and x0 == 0 and y0 == 0 and sampled.rotation_deg == 0.0
    )
    if identity_geometry:
        out = image.copy()
    else:
        out = warp_image(image, transform, (w, h))
    out = apply_brightness(out, sampled.brightness)
    out = gaussian_blur(out, sampled.blur_sigma)
    out = salt_pepper_noise(out, sampled.noise_frac, stream.derive(0x4015E))

    kept: list[Annotation] = []
    for ann in annotations:
        shape = transform_polygon(ann.shape, transform, (w, h))
        if shape is None or shape.area() < MIN_INSTANCE_AREA_PX2:
            continue
        kept.append(replace(ann, shape=shape))
    if annotations and not kept:
        log.warning("augmentation dropped every annotation (seed %d)", params.seed)
    return out, kept, transform


def normalize_resolution(
    image: np.ndarray,
    annotations: list[Annotation],
    target: tuple[int, int] = (640, 480),
) -> tuple[np.ndarray, list[Annotation]]:
    """Stretch-resize to ``target`` (width, height) with bilinear sampling;
    annotation coordinates scale by the same factors."""
    h, w = image.shape[:2]
    tw, th = target
    if tw <= 0 or th <= 0:
        raise ValueError("target dimensions must be positive")
    scale = Affine.scaling(tw / w, th / h)
    out = warp_image(image, scale, (tw, th))
    scaled = []
    for ann in annotations:
        shape = transform_polygon(ann.shape, scale, (tw, th))
        if shape is not None:
            scaled.append(replace(ann, shape=shape))
    return out, scaled


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    seed: int
    ratios: tuple[float, float, float] = (0.82, 0.12, 0.06)

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1.0, got {sum(self.ratios)}")


def largest_remainder_sizes(total: int, ratios: Sequence[float]) -> list[int]:
    exact = [total * r for r in ratios]
    sizes = [int(math.floor(e)) for e in exact]
    short = total - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split(
    image_ids: Iterable[int], spec: SplitSpec
) -> tuple[list[int], list[int], list[int]]:
    """Seeded shuffle, then partition by largest-remainder rounding; the
    three partitions are disjoint and exhaustive."""
    ids = list(image_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique")
    if len(ids) < 3:
        raise ValueError(f"cannot split {len(ids)} ids into 3 partitions")
    stream = SeededStream(spec.seed).derive(0x5917)
    stream.shuffle(ids)
    n_train, n_val, _ = largest_remainder_sizes(len(ids), spec.ratios)
    return ids[:n_train], ids[n_train : n_train + n_val], ids[n_train + n_val :]


def per_image_seed(base_seed: int, image_id: int) -> int:
    """Seed for one image's augmentation stream: order-independent, so
    parallel augmentation cannot change results."""
    return mix64(base_seed ^ image_id)
