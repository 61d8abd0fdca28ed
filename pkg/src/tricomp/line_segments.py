"""Line segments from level-line region growing, validated a contrario.

The detector follows the usual LSD pipeline: a level-line orientation field,
greedy growth of line-support regions, a rectangle fit per region, and a
number-of-false-alarms (NFA) test. A density threshold on the rectangle
controls how much curvature a segment may absorb. Detected segments are
then filtered by their strongest contour response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import binom

from .core import InvalidInputError, LineSegment, Point, as_image, to_gray


@dataclass(frozen=True)
class LsdConfig:
    angle_tolerance: float = 22.5
    density_threshold: float = 0.2
    magnitude_cutoff: float = 2.0
    nfa_epsilon: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.angle_tolerance < 90.0:
            raise InvalidInputError("angle tolerance must lie in (0, 90) degrees")
        if not 0.0 < self.density_threshold <= 1.0:
            raise InvalidInputError("density threshold must lie in (0, 1]")
        if self.magnitude_cutoff < 0 or self.nfa_epsilon <= 0:
            raise InvalidInputError("magnitude cutoff and NFA epsilon must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError("alpha must lie in [0, 1]")


@dataclass
class LevelLineField:
    angle: np.ndarray = field(repr=False)      # degrees in [0, 180)
    magnitude: np.ndarray = field(repr=False)
    usable: np.ndarray = field(repr=False)

    _flat_angles: Optional[list] = field(default=None, repr=False, compare=False)

    def angle_list(self) -> list:
        if self._flat_angles is None:
            self._flat_angles = self.angle.ravel().tolist()
        return self._flat_angles

    @property
    def used(self) -> np.ndarray:
        return self.usable

    @property
    def shape(self):
        return self.angle.shape


@dataclass
class LineSupportRegion:
    pixels: np.ndarray  # (N, 2) integer (x, y)
    mean_angle: float
    seed: tuple[int, int]


@dataclass
class RectApprox:
    center: Point
    axis_angle: float  # degrees, image coordinates
    length: float
    width: float
    density: float
    p0: Point = None
    p1: Point = None
    n_pixels: int = 0
    n_aligned: int = 0


def angle_diff(a, b):
    """Absolute difference between orientations modulo 180 degrees."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % 180.0
    return np.minimum(d, 180.0 - d)


def level_line_field(img, magnitude_cutoff: float = 2.0) -> LevelLineField:
    """Level-line orientation on a 2x2 stencil.

    The gradient of pixel ``(x, y)`` is taken from the block
    ``(x..x+1, y..y+1)``; the last row and column are unusable.
    """
    if np.ndim(img) == 2:
        gray = np.asarray(img, dtype=np.float64)
    else:
        gray = to_gray(as_image(img))
    h, w = gray.shape
    angle = np.zeros((h, w))
    mag = np.zeros((h, w))
    a = gray[:-1, :-1]
    b = gray[:-1, 1:]
    c = gray[1:, :-1]
    d = gray[1:, 1:]
    com1 = d - a
    com2 = b - c
    gx = com1 + com2
    gy = com1 - com2  # image y grows downward
    mag[:-1, :-1] = np.sqrt((gx * gx + gy * gy) / 4.0)
    grad = np.degrees(np.arctan2(-gy, gx))
    angle[:-1, :-1] = (grad + 90.0) % 180.0
    angle[angle >= 180.0] = 0.0
    usable = mag > magnitude_cutoff
    return LevelLineField(angle, mag, usable)


_NEIGHBOURS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]


def _grow(seed: int, w: int, h: int, ang: list, ok, tol: float, taken: set) -> list:
    """8-connected growth from ``seed`` (flat index); ``ok(i)`` gates candidates."""
    sx = math.cos(math.radians(2 * ang[seed]))
    sy = math.sin(math.radians(2 * ang[seed]))
    mean = ang[seed]
    region = [seed]
    taken.add(seed)
    k = 0
    while k < len(region):
        i = region[k]
        k += 1
        x, y = i % w, i // w
        for dx, dy in _NEIGHBOURS:
            nx, ny = x + dx, y + dy
            if nx < 0 or ny < 0 or nx >= w or ny >= h:
                continue
            j = ny * w + nx
            if j in taken or not ok(j):
                continue
            d = abs(ang[j] - mean) % 180.0
            if min(d, 180.0 - d) > tol:
                continue
            taken.add(j)
            region.append(j)
            sx += math.cos(math.radians(2 * ang[j]))
            sy += math.sin(math.radians(2 * ang[j]))
            mean = (math.degrees(math.atan2(sy, sx)) / 2.0) % 180.0
    return region


def _to_region(flat: list, w: int, ang: np.ndarray, seed: int) -> LineSupportRegion:
    idx = np.asarray(flat, dtype=np.int64)
    pix = np.stack([idx % w, idx // w], axis=1)
    a = np.radians(2 * ang.ravel()[idx])
    mean = (math.degrees(math.atan2(np.sin(a).sum(), np.cos(a).sum())) / 2.0) % 180.0
    return LineSupportRegion(pix, mean, (int(seed % w), int(seed // w)))


def _seed_order(fld: LevelLineField) -> list:
    order = np.flatnonzero(fld.usable.ravel())
    return order[np.argsort(-fld.magnitude.ravel()[order], kind="stable")].tolist()


def grow_regions(fld: LevelLineField, cfg: LsdConfig = LsdConfig()) -> list[LineSupportRegion]:
    """Partition usable pixels into line-support regions.

    Seeds are visited by decreasing gradient magnitude; a pixel joins a
    region when its level-line angle is within the tolerance of the region's
    running mean orientation.
    """
    h, w = fld.shape
    ang = fld.angle_list()
    ok = fld.usable.ravel().tolist().__getitem__
    used: set = set()
    regions = []
    for seed in _seed_order(fld):
        if seed in used:
            continue
        flat = _grow(seed, w, h, ang, ok, cfg.angle_tolerance, used)
        regions.append(_to_region(flat, w, fld.angle, seed))
    return regions


# ---------------------------------------------------------------------------
# rectangles and validation

def fit_rect(pix: np.ndarray, fld: LevelLineField, tol: float) -> RectApprox:
    """Magnitude-weighted centroid and inertia axis; density counted over the rectangle."""
    xs = pix[:, 0].astype(np.float64) + 0.5  # gradients live at block centres
    ys = pix[:, 1].astype(np.float64) + 0.5
    wts = fld.magnitude[pix[:, 1], pix[:, 0]]
    if wts.sum() <= 0:
        wts = np.ones(len(pix))
    cx = float(np.sum(wts * xs) / wts.sum())
    cy = float(np.sum(wts * ys) / wts.sum())
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.sum(wts * dx * dx), np.sum(wts * dx * dy)],
                    [np.sum(wts * dx * dy), np.sum(wts * dy * dy)]])
    evals, evecs = np.linalg.eigh(cov)
    ux, uy = evecs[:, 1]
    lon = dx * ux + dy * uy
    lat = -dx * uy + dy * ux
    l0, l1 = float(lon.min()), float(lon.max())
    w0, w1 = float(lat.min()), float(lat.max())
    if w1 - w0 < 1.0:
        mid = 0.5 * (w0 + w1)
        w0, w1 = mid - 0.5, mid + 0.5
    axis = math.degrees(math.atan2(uy, ux))
    rect = RectApprox(Point(cx, cy), axis, l1 - l0, w1 - w0, 0.0,
                      Point(cx + l0 * ux, cy + l0 * uy), Point(cx + l1 * ux, cy + l1 * uy))
    _count_aligned(rect, (l0, l1, w0, w1), fld, tol)
    return rect


def _count_aligned(rect: RectApprox, extent, fld: LevelLineField, tol: float) -> None:
    l0, l1, w0, w1 = extent
    h, w = fld.shape
    ux, uy = math.cos(math.radians(rect.axis_angle)), math.sin(math.radians(rect.axis_angle))
    cx, cy = rect.center
    corners = [(cx + a * ux - b * uy, cy + a * uy + b * ux) for a in (l0, l1) for b in (w0, w1)]
    xa = max(0, int(math.floor(min(c[0] for c in corners) - 0.5)))
    xb = min(w - 1, int(math.ceil(max(c[0] for c in corners))))
    ya = max(0, int(math.floor(min(c[1] for c in corners) - 0.5)))
    yb = min(h - 1, int(math.ceil(max(c[1] for c in corners))))
    ys, xs = np.mgrid[ya:yb + 1, xa:xb + 1]
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    lon = dx * ux + dy * uy
    lat = -dx * uy + dy * ux
    eps = 1e-9
    inside = (lon >= l0 - eps) & (lon <= l1 + eps) & (lat >= w0 - eps) & (lat <= w1 + eps)
    n = int(inside.sum())
    # the field's orientation is y-up; the rectangle axis is in image coordinates
    rect_orient = (-rect.axis_angle) % 180.0
    sub_ang = fld.angle[ya:yb + 1, xa:xb + 1]
    sub_ok = fld.usable[ya:yb + 1, xa:xb + 1]
    aligned = inside & sub_ok & (angle_diff(sub_ang, rect_orient) <= tol)
    k = int(aligned.sum())
    rect.n_pixels = max(n, 1)
    rect.n_aligned = k
    rect.density = k / rect.n_pixels


def log10_nfa(n: int, k: int, p: float, width: int, height: int) -> float:
    """``log10`` of the number of false alarms for ``k`` aligned points out of ``n``."""
    tests = 2.5 * math.log10(float(width) * float(height))
    if k <= 0:
        return tests
    tail = binom.logsf(k - 1, n, p) / math.log(10.0)
    return tests + float(tail)


def min_region_size(width: int, height: int, p: float) -> int:
    """Smallest region whose best possible rectangle (all points aligned) can pass the NFA test."""
    return int(math.ceil(2.5 * math.log10(float(width) * float(height)) / -math.log10(p)))


def _angle_spread(pix: np.ndarray, fld: LevelLineField, seed, radius: float) -> tuple[float, float]:
    sx, sy = seed
    near = np.hypot(pix[:, 0] - sx, pix[:, 1] - sy) <= radius
    sel = pix[near] if near.any() else pix
    ang = fld.angle[sel[:, 1], sel[:, 0]]
    a = np.radians(2 * ang)
    mean = (math.degrees(math.atan2(np.sin(a).sum(), np.cos(a).sum())) / 2.0) % 180.0
    dev = angle_diff(ang, mean)
    return mean, float(np.sqrt(np.mean(dev * dev)))


def _refine(region: LineSupportRegion, fld: LevelLineField, cfg: LsdConfig):
    """Cut and shrink a region until its rectangle is dense enough."""
    tol = cfg.angle_tolerance
    pix = region.pixels
    rect = fit_rect(pix, fld, tol)
    if rect.density >= cfg.density_threshold:
        return pix, rect
    # cut: regrow inside the region with a tolerance fitted near the seed
    h, w = fld.shape
    _, spread = _angle_spread(pix, fld, region.seed, rect.width)
    tight = max(min(2.0 * spread, tol), 1e-6)
    member = set((pix[:, 1] * w + pix[:, 0]).tolist())
    seed = region.seed[1] * w + region.seed[0]
    flat = _grow(seed, w, h, fld.angle_list(), member.__contains__, tight, set())
    if len(flat) >= 2:
        idx = np.asarray(flat)
        pix = np.stack([idx % w, idx // w], axis=1)
        rect = fit_rect(pix, fld, tol)
        if rect.density >= cfg.density_threshold:
            return pix, rect
    # shrink: drop pixels far from the seed
    d = np.hypot(pix[:, 0] - region.seed[0], pix[:, 1] - region.seed[1])
    rad = float(d.max())
    while len(pix) >= 2 and rect.density < cfg.density_threshold:
        rad *= 0.75
        keep = d <= rad
        if keep.sum() < 2:
            return None, None
        pix, d = pix[keep], d[keep]
        rect = fit_rect(pix, fld, tol)
    if len(pix) < 2:
        return None, None
    return pix, rect


def rect_and_validate(region: LineSupportRegion, fld: LevelLineField,
                      cfg: LsdConfig = LsdConfig(),
                      size: Optional[tuple[int, int]] = None) -> Optional[LineSegment]:
    """Fit a rectangle, refine for density, and keep it if it is meaningful."""
    if len(region.pixels) < 2:
        return None
    h, w = fld.shape
    width, height = size if size is not None else (w, h)
    pix, rect = _refine(region, fld, cfg)
    if pix is None or rect.density < cfg.density_threshold:
        return None
    p = cfg.angle_tolerance / 180.0
    lnfa = log10_nfa(rect.n_pixels, rect.n_aligned, p, width, height)
    if lnfa > math.log10(cfg.nfa_epsilon):
        return None
    if rect.p0 == rect.p1:
        return None
    return LineSegment(rect.p0, rect.p1, pix.astype(np.int64), 0.0)


def confidence_filter(segments: list[LineSegment], contours: np.ndarray,
                      alpha: float = 0.5) -> list[LineSegment]:
    """Keep segments whose peak contour confidence is at least ``(1 - alpha) * C``.

    Each segment's confidence becomes the maximum contour value over its
    support pixels; ``C`` is the largest such confidence in the image.
    """
    if not segments:
        return []
    contours = np.clip(np.asarray(contours, dtype=np.float64), 0.0, 1.0)
    scored = []
    for s in segments:
        px = s.support_pixels
        conf = float(contours[px[:, 1], px[:, 0]].max())
        scored.append(replace(s, confidence=conf))
    top = max(s.confidence for s in scored)
    thresh = (1.0 - alpha) * top
    return [s for s in scored if s.confidence >= thresh]


def detect_line_segments(img, cfg: LsdConfig = LsdConfig(),
                         contours: Optional[np.ndarray] = None,
                         filter_by_contours: bool = True) -> list[LineSegment]:
    """Level-line field, region growing, validation, then contour filtering.

    Without an explicit contour map the boundary-strength map of the
    segmentation module stands in for it.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    fld = level_line_field(img, cfg.magnitude_cutoff)
    ang = fld.angle_list()
    ok = fld.usable.ravel().tolist().__getitem__
    used: set = set()
    segs = []
    min_size = min_region_size(w, h, cfg.angle_tolerance / 180.0)
    for seed in _seed_order(fld):
        if seed in used:
            continue
        flat = _grow(seed, w, h, ang, ok, cfg.angle_tolerance, used)
        if len(flat) < min_size:
            continue
        region = _to_region(flat, w, fld.angle, seed)
        seg = rect_and_validate(region, fld, cfg, (w, h))
        # pixels trimmed by refinement may still join later regions
        kept = set() if seg is None else set((seg.support_pixels[:, 1] * w
                                               + seg.support_pixels[:, 0]).tolist())
        if seg is not None:
            used.difference_update(set(flat) - kept)
            segs.append(seg)
    if not filter_by_contours or not segs:
        return segs
    if contours is None:
        from .segmentation import boundary_strength
        contours = boundary_strength(img)
    if np.shape(contours) != (h, w):
        raise InvalidInputError("contour map and image differ in size")
    return confidence_filter(segs, contours, cfg.alpha)
