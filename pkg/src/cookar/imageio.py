"""Image file plumbing: PNG frames via Pillow, 16-bit binary PGM depth maps
(P5, maxval 65535, big-endian, values in millimeters)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(str(path)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def write_depth_pgm(path: str | Path, depth_mm: np.ndarray) -> None:
    d = np.ascontiguousarray(depth_mm, dtype=np.uint16)
    h, w = d.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + d.astype(">u2").tobytes())


def read_depth_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # comments (#...) allowed between them
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header in {path}")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: magic {magic!r}")
    if maxval != 65535:
        raise ValueError(f"depth PGM must have maxval 65535, got {maxval}")
    data = raw[pos : pos + w * h * 2]
    if len(data) != w * h * 2:
        raise ValueError(f"PGM pixel data truncated in {path}")
    return np.frombuffer(data, dtype=">u2").astype(np.uint16).reshape(h, w)
