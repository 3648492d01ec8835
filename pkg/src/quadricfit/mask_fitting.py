"""Oriented-ellipse fitting to binary object masks via image moments.

The fitted ellipse has the foreground centroid as center, the covariance
eigenvectors as axes and semi-axis lengths 2*sqrt(eigenvalue), which makes
the uniform ellipse's second central moments match the mask's exactly
(a uniform ellipse of semi-axis l has second moment l^2/4 along that axis).

Pixels are treated as points at their centers; mask pixel (col, row) sits
at image coordinates origin_offset + (col, row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateMaskError, InvalidInputError
from .geometry import Ellipse2D


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Boolean foreground grid plus the image position of its (0,0) pixel."""

    data: np.ndarray
    origin_offset: np.ndarray = (0.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2 or d.size == 0:
            raise InvalidInputError(f"mask data must be a non-empty 2D grid, got shape {d.shape}")
        object.__setattr__(self, "data", d.astype(bool))
        off = np.array(self.origin_offset, dtype=float)
        if off.shape != (2,) or not np.all(np.isfinite(off)):
            raise InvalidInputError(f"origin_offset must be a finite 2-vector, got {off}")
        object.__setattr__(self, "origin_offset", off)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def _parse_pgm(raw: bytes) -> np.ndarray:
    """Gray image from a P2 (ASCII) or P5 (binary) PGM byte string."""
    magic = raw[:2]
    pos = 2
    tokens: list[int] = []

    def next_token() -> int:
        nonlocal pos
        while pos < len(raw):
            c = raw[pos : pos + 1]
            if c == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError("truncated PGM header")
        return int(raw[start:pos])

    width = next_token()
    height = next_token()
    maxval = next_token()
    if width <= 0 or height <= 0:
        raise InvalidInputError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise InvalidInputError(f"unsupported PGM maxval {maxval} (only 8-bit handled)")

    if magic == b"P2":
        values = []
        while len(values) < width * height:
            values.append(next_token())
        arr = np.array(values, dtype=np.uint8)
    else:  # P5: header ends after exactly one whitespace byte
        pos += 1
        if len(raw) - pos < width * height:
            raise InvalidInputError("PGM pixel data shorter than header promises")
        arr = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return arr.reshape(height, width)


def load_mask(path: str | Path, origin_offset=(0.0, 0.0)) -> BinaryMask:
    """Read a PGM (P2/P5) or PNG file and threshold gray values at > 127."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"P2", b"P5"):
        gray = _parse_pgm(raw)
    elif raw[:4] == b"\x89PNG":
        with Image.open(path) as img:
            gray = np.asarray(img.convert("L"))
    else:
        raise InvalidInputError(f"{path.name}: not a PGM (P2/P5) or PNG file")
    return BinaryMask(data=gray > 127, origin_offset=origin_offset)


def moments_ellipse(mask: BinaryMask) -> Ellipse2D:
    """Moment-matched oriented ellipse of a mask's foreground pixels.

    Raises:
        DegenerateMaskError: fewer than 3 foreground pixels, or all of
            them collinear (rank-deficient covariance).
    """
    rows, cols = np.nonzero(mask.data)
    n = rows.size
    if n < 3:
        raise DegenerateMaskError(f"mask has {n} foreground pixel(s); need at least 3")
    pts = np.stack([cols, rows], axis=1).astype(float) + mask.origin_offset
    center = pts.mean(axis=0)
    d = pts - center
    cov = (d.T @ d) / n
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 1e-9 * max(evals[1], 1.0):
        raise DegenerateMaskError("foreground pixels are collinear; covariance is singular")
    semi = 2.0 * np.sqrt(evals[::-1])  # descending
    major = evecs[:, 1]
    return Ellipse2D(center=center, semi_axes=semi, angle=math.atan2(major[1], major[0]))
