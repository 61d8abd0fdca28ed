"""Images, points, label maps and the polar-angle convention shared by every module.

Coordinates follow the image convention: ``x`` is the column, ``y`` the row
(downward positive), and pixel ``(row, col)`` sits at ``(x=col, y=row)``.
Angles are measured counter-clockwise with the image y-axis flipped, so
"up" in the picture is 90 degrees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from PIL import Image

CANONICAL_LONG_SIDE = 500
MIN_IMAGE_SIDE = 8

PathLike = Union[str, Path]


class InvalidInputError(ValueError):
    """Raised for inputs that violate a documented precondition."""


class Point(NamedTuple):
    x: float
    y: float

    def to_json(self) -> dict:
        return {"x": float(self.x), "y": float(self.y)}

    @classmethod
    def from_json(cls, d: dict) -> "Point":
        return cls(float(d["x"]), float(d["y"]))


class Triangle(NamedTuple):
    a: Point
    b: Point
    c: Point

    def area(self) -> float:
        return 0.5 * abs(
            (self.b.x - self.a.x) * (self.c.y - self.a.y)
            - (self.c.x - self.a.x) * (self.b.y - self.a.y)
        )

    def perimeter(self) -> float:
        return dist(self.a, self.b) + dist(self.b, self.c) + dist(self.c, self.a)


@dataclass(frozen=True)
class LineSegment:
    """A detected segment with the pixels that support it.

    ``support_pixels`` is an ``(N, 2)`` integer array of ``(x, y)`` pixel
    coordinates.
    """

    p0: Point
    p1: Point
    support_pixels: np.ndarray = field(repr=False, compare=False)
    confidence: float = 0.0

    def __post_init__(self):
        if self.p0 == self.p1:
            raise InvalidInputError("segment endpoints coincide")
        if len(self.support_pixels) == 0:
            raise InvalidInputError("segment has no support pixels")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def length(self) -> float:
        return dist(self.p0, self.p1)

    @property
    def orientation(self) -> float:
        """Undirected orientation in degrees, [0, 180), y-up convention."""
        return line_orientation(self.p0, self.p1)

    def to_json(self) -> dict:
        return {"p0": self.p0.to_json(), "p1": self.p1.to_json(),
                "confidence": float(self.confidence)}


def dist(p: Point, q: Point) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def line_orientation(p: Point, q: Point) -> float:
    ang = math.degrees(math.atan2(-(q[1] - p[1]), q[0] - p[0])) % 180.0
    return 0.0 if ang >= 180.0 else ang


def polar_angle(pole: Point, x: Point) -> float:
    """Angle of ``x - pole`` in degrees in [0, 360), with "up" at 90."""
    dx = x[0] - pole[0]
    dy = x[1] - pole[1]
    if dx == 0 and dy == 0:
        raise InvalidInputError("polar angle undefined at the pole")
    ang = math.degrees(math.atan2(-dy, dx)) % 360.0
    return 0.0 if ang >= 360.0 else ang


def polar_angles(pole: Point, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`polar_angle`; the pole itself yields 0 (callers mask it)."""
    ang = np.degrees(np.arctan2(-(ys - pole[1]), xs - pole[0])) % 360.0
    ang[ang >= 360.0] = 0.0
    return ang


# ---------------------------------------------------------------------------
# images

def as_image(arr) -> np.ndarray:
    """Validate and normalise to an ``(H, W, 3)`` uint8 array."""
    img = np.asarray(arr)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, :3]
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected an RGB image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise InvalidInputError(f"image {w}x{h} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img


def load_image(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return as_image(np.asarray(im.convert("RGB")))
    except (OSError, SyntaxError) as exc:
        raise InvalidInputError(f"cannot read image {path}: {exc}") from exc


def save_image(path: PathLike, img: np.ndarray) -> None:
    Image.fromarray(as_image(img)).save(path)


def canonical_size(width: int, height: int) -> tuple[int, int]:
    if width >= height:
        return CANONICAL_LONG_SIDE, max(1, round(height * CANONICAL_LONG_SIDE / width))
    return max(1, round(width * CANONICAL_LONG_SIDE / height)), CANONICAL_LONG_SIDE


def resize_canonical(img) -> np.ndarray:
    """Rescale so the long side is 500 px, keeping the aspect ratio."""
    img = as_image(img)
    h, w = img.shape[:2]
    nw, nh = canonical_size(w, h)
    if (nw, nh) == (w, h):
        return img.copy()
    return np.asarray(Image.fromarray(img).resize((nw, nh), Image.BILINEAR))


def to_gray(img: np.ndarray) -> np.ndarray:
    """Luminance on the 0-255 scale as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


# ---------------------------------------------------------------------------
# label maps

def relabel(labels: np.ndarray) -> np.ndarray:
    """Map arbitrary non-negative IDs onto 0..K-1, ordered by original ID."""
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.reshape(np.shape(labels)).astype(np.int32)


def check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InvalidInputError("label map must be 2-D")
    if labels.size and labels.min() < 0:
        raise InvalidInputError("label IDs must be non-negative")
    k = int(labels.max()) + 1 if labels.size else 0
    if np.count_nonzero(np.bincount(labels.ravel(), minlength=k)) != k:
        raise InvalidInputError("label IDs are not contiguous 0..K-1")
    return labels


def save_labels(path: PathLike, labels: np.ndarray) -> None:
    labels = check_labels(labels)
    if labels.max() > 65535:
        raise InvalidInputError("more than 65536 regions cannot be stored as 16-bit PNG")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def load_labels(path: PathLike) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path} is not a single-channel label map")
    return arr.astype(np.int32)


@dataclass
class Edge:
    """Adjacency between two regions ``i < j``.

    ``pairs`` is an ``(n, 2)`` array of flat pixel indices; column 0 lies in
    region ``i``, column 1 in region ``j``.
    """

    i: int
    j: int
    pairs: np.ndarray


def region_adjacency(labels: np.ndarray) -> dict[tuple[int, int], Edge]:
    """4-adjacency edges between regions, keyed by ``(i, j)`` with ``i < j``.

    Works for any non-negative integer IDs, not only contiguous ones.
    """
    labels = np.asarray(labels)
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    flat = labels.ravel()
    differ = flat[p] != flat[q]
    p, q = p[differ], q[differ]
    if p.size == 0:
        return {}
    # sort pairs by their first pixel so every edge's list is in raster order
    order = np.lexsort((q, p))
    p, q = p[order], q[order]
    a, b = flat[p], flat[q]
    swap = a > b
    p, q = np.where(swap, q, p), np.where(swap, p, q)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo.astype(np.int64) * (int(flat.max()) + 1) + hi
    order = np.argsort(key, kind="stable")
    key, p, q, lo, hi = key[order], p[order], q[order], lo[order], hi[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    ends = np.r_[starts[1:], key.size]
    edges = {}
    for s, e in zip(starts, ends):
        i, j = int(lo[s]), int(hi[s])
        edges[(i, j)] = Edge(i, j, np.stack([p[s:e], q[s:e]], axis=1))
    return edges


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
