"""Triangle fitting from line segments, plus sketch matching.

Two non-parallel segments are extended to lines and intersected at ``O``.
Each line is split at ``O`` into two half lines; the support pixels near a
line are projected onto it, and each half line gets a continuity ratio: the
best coverage of a run ``[O, X]`` by projected pixels. Pairing one half line
from each line gives four candidate triangles per segment pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import InvalidInputError, LineSegment, Point, Triangle
from .metrics import triangle_match_ratio

OPENINGS = ("up", "down", "left", "right")


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    d_nb: float = 5.0
    min_cr: float = 0.1
    min_tr: float = 0.1
    min_pair_angle: float = 10.0
    rng_seed: int = 0
    min_length: float = 10.0
    nms_delta: float = 0.3

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be positive")
        if self.d_nb <= 0:
            raise InvalidInputError("d_nb must be positive")
        for name in ("min_cr", "min_tr", "nms_delta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.min_pair_angle < 90.0:
            raise InvalidInputError("min_pair_angle must lie in [0, 90)")
        if self.min_length < 0:
            raise InvalidInputError("min_length must be non-negative")


def _orientation(dx: float, dy: float) -> float:
    """Undirected orientation of an image-space direction, y-up, in [0, 180)."""
    ang = math.degrees(math.atan2(-dy, dx)) % 180.0
    return 0.0 if ang >= 180.0 else ang


def _orient_diff(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


@dataclass(frozen=True)
class Line:
    point: Point
    direction: tuple[float, float]

    @classmethod
    def through(cls, p, q) -> "Line":
        dx, dy = q[0] - p[0], q[1] - p[1]
        n = math.hypot(dx, dy)
        if n == 0:
            raise InvalidInputError("a line needs two distinct points")
        return cls(Point(float(p[0]), float(p[1])), (dx / n, dy / n))

    @classmethod
    def from_segment(cls, seg: LineSegment) -> "Line":
        return cls.through(seg.p0, seg.p1)

    @property
    def orientation(self) -> float:
        return _orientation(*self.direction)

    def distances(self, pts: np.ndarray) -> np.ndarray:
        dx, dy = self.direction
        return np.abs((pts[:, 0] - self.point.x) * dy - (pts[:, 1] - self.point.y) * dx)


@dataclass(frozen=True)
class HalfLine:
    origin: Point
    direction: tuple[float, float]
    source_orientation: float

    def __post_init__(self):
        if abs(math.hypot(*self.direction) - 1.0) > 1e-9:
            raise InvalidInputError("half-line direction must be a unit vector")

    def at(self, offset: float) -> Point:
        return Point(self.origin.x + offset * self.direction[0],
                     self.origin.y + offset * self.direction[1])


@dataclass(frozen=True)
class ProjectedPixelSet:
    positions: np.ndarray = field(repr=False)  # sorted, unique, non-negative ints

    def __post_init__(self):
        pos = np.unique(np.asarray(self.positions, dtype=np.int64))
        if pos.size and pos[0] < 0:
            raise InvalidInputError("projected offsets must be non-negative")
        object.__setattr__(self, "positions", pos)

    def __len__(self):
        return int(self.positions.size)


def intersect(l1: Line, l2: Line, min_angle: float = 0.0) -> Optional[Point]:
    """Intersection of two infinite lines, or ``None`` when (near) parallel."""
    if _orient_diff(l1.orientation, l2.orientation) < max(min_angle, 1e-9):
        return None
    (ax, ay), (bx, by) = l1.direction, l2.direction
    den = ax * by - ay * bx
    if abs(den) < 1e-12:
        return None
    wx, wy = l2.point.x - l1.point.x, l2.point.y - l1.point.y
    t = (wx * by - wy * bx) / den
    return Point(l1.point.x + t * ax, l1.point.y + t * ay)


def _support_points(seg: LineSegment) -> np.ndarray:
    # support pixels are located at their block centres, like the endpoints
    return seg.support_pixels.astype(np.float64) + 0.5


def collect_inliers(line: Line, segments: Sequence[LineSegment], d_nb: float = 5.0,
                    points: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """Support points of all segments within ``d_nb`` of ``line`` (deduplicated).

    ``points`` overrides the per-segment point arrays; by default each
    support pixel sits at its block centre.
    """
    if d_nb <= 0:
        raise InvalidInputError("d_nb must be positive")
    arrays = points if points is not None else [_support_points(s) for s in segments]
    keep = [p[line.distances(p) <= d_nb] for p in arrays if len(p)]
    keep = [k for k in keep if len(k)]
    if not keep:
        return np.zeros((0, 2))
    return np.unique(np.concatenate(keep), axis=0)


def project_pixels(line: Line, inliers: np.ndarray, origin: Point
                   ) -> tuple[ProjectedPixelSet, ProjectedPixelSet]:
    """Integer offsets from ``origin`` along ``line``, split by sign.

    Offsets are rounded half up; zero goes to the positive half line.
    """
    inliers = np.asarray(inliers, dtype=np.float64).reshape(-1, 2)
    dx, dy = line.direction
    t = (inliers[:, 0] - origin.x) * dx + (inliers[:, 1] - origin.y) * dy
    r = np.floor(t + 0.5).astype(np.int64)
    return ProjectedPixelSet(r[r >= 0]), ProjectedPixelSet(-r[r < 0])


def half_lines(line: Line, origin: Point) -> tuple[HalfLine, HalfLine]:
    dx, dy = line.direction
    o = line.orientation
    return HalfLine(origin, (dx, dy), o), HalfLine(origin, (-dx, -dy), o)


def best_coverage(positions: np.ndarray) -> tuple[float, int]:
    """``max_X (#positions <= X) / (X + 1)`` over X in ``positions``; ties to the largest X."""
    pos = np.asarray(positions, dtype=np.int64)
    if pos.size == 0:
        return 0.0, -1
    ratios = np.minimum(np.arange(1, pos.size + 1) / (pos + 1.0), 1.0)
    top = ratios.max()
    k = int(np.flatnonzero(ratios == top)[-1])
    return float(top), int(pos[k])


def continuity_ratio(half: HalfLine, proj: ProjectedPixelSet) -> tuple[float, Optional[Point]]:
    cr, off = best_coverage(proj.positions)
    if off < 0:
        return 0.0, None
    return cr, half.at(off)


def opening_of(apex: Point, v1: Point, v2: Point) -> str:
    """Quadrant of the internal-angle bisector at the apex (y-up degrees)."""
    a = np.array([v1.x - apex.x, v1.y - apex.y])
    b = np.array([v2.x - apex.x, v2.y - apex.y])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInputError("degenerate triangle has no opening")
    bis = a / na + b / nb
    if np.hypot(*bis) < 1e-12:
        raise InvalidInputError("straight angle has no opening")
    phi = math.degrees(math.atan2(-bis[1], bis[0])) % 360.0
    if phi >= 315.0 or phi < 45.0:
        return "right"
    if phi < 135.0:
        return "up"
    if phi < 225.0:
        return "left"
    return "down"


def score_triangle(apex: Point, v1: Point, v2: Point, size: tuple[int, int],
                   side_ratios: tuple[float, float] = (1.0, 1.0)) -> tuple[float, float, Optional[str]]:
    """``(continuity ratio, total ratio, opening)``; opening is ``None`` if degenerate."""
    w, h = size
    cr = float(side_ratios[0]) * float(side_ratios[1])
    area = Triangle(apex, v1, v2).area()
    tr = area / float(w * h)
    if area <= 1e-12:
        return cr, 0.0, None
    return cr, tr, opening_of(apex, v1, v2)


@dataclass(frozen=True)
class TriangleCandidate:
    apex: Point
    vertex_x: Point
    vertex_y: Point
    continuity_ratio: float
    total_ratio: float
    opening: str

    @property
    def triangle(self) -> Triangle:
        return Triangle(self.apex, self.vertex_x, self.vertex_y)

    @property
    def side_orientations(self) -> tuple[float, float]:
        return (_orientation(self.vertex_x.x - self.apex.x, self.vertex_x.y - self.apex.y),
                _orientation(self.vertex_y.x - self.apex.x, self.vertex_y.y - self.apex.y))

    def to_json(self) -> dict:
        return {"apex": self.apex.to_json(), "v1": self.vertex_x.to_json(),
                "v2": self.vertex_y.to_json(), "cr": self.continuity_ratio,
                "tr": self.total_ratio, "opening": self.opening}

    @classmethod
    def from_json(cls, d: dict) -> "TriangleCandidate":
        return cls(Point.from_json(d["apex"]), Point.from_json(d["v1"]), Point.from_json(d["v2"]),
                   float(d["cr"]), float(d["tr"]), str(d["opening"]))


def _rank_key(c: TriangleCandidate):
    return (-c.continuity_ratio, -c.total_ratio, c.apex, c.vertex_x, c.vertex_y)


def suppress_duplicates(cands: Sequence[TriangleCandidate], delta: float = 0.3) -> list[TriangleCandidate]:
    """Greedy non-maximum suppression under the vertex-distance match, best CR first."""
    kept: list[TriangleCandidate] = []
    for c in sorted(cands, key=_rank_key):
        if all(triangle_match_ratio(k.triangle, c.triangle) > delta for k in kept):
            kept.append(c)
    return kept


def _canonical(seg: LineSegment):
    a, b = sorted([tuple(seg.p0), tuple(seg.p1)])
    return (a, b, len(seg.support_pixels))


def _pair_indices(n: int, cfg: RansacConfig) -> list[tuple[int, int]]:
    total = n * (n - 1) // 2
    if total <= cfg.iterations:
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    rng = np.random.default_rng(cfg.rng_seed)
    picks = np.sort(rng.choice(total, size=cfg.iterations, replace=False))
    # unrank k into (i, j) with i < j, row-major over the upper triangle
    starts = np.cumsum([0] + [n - 1 - i for i in range(n - 1)])
    rows = np.searchsorted(starts, picks, side="right") - 1
    return [(int(i), int(i + 1 + k - starts[i])) for i, k in zip(rows, picks)]


def triangles_from_pair(l1: Line, l2: Line, inl1: np.ndarray, inl2: np.ndarray,
                        size: tuple[int, int], min_angle: float = 10.0) -> list[TriangleCandidate]:
    """The four half-line pairings of two lines, scored (unfiltered)."""
    o = intersect(l1, l2, min_angle)
    if o is None:
        return []
    sides = []
    for line, inl in ((l1, inl1), (l2, inl2)):
        hp, hn = half_lines(line, o)
        pp, pn = project_pixels(line, inl, o)
        sides.append([continuity_ratio(hp, pp), continuity_ratio(hn, pn)])
    out = []
    for cr1, v1 in sides[0]:
        for cr2, v2 in sides[1]:
            if v1 is None or v2 is None:
                continue
            cr, tr, opening = score_triangle(o, v1, v2, size, (cr1, cr2))
            if opening is not None:
                out.append(TriangleCandidate(o, v1, v2, cr, tr, opening))
    return out


def ransac_detect(segments: Sequence[LineSegment], cfg: RansacConfig = RansacConfig(),
                  size: tuple[int, int] = (500, 330)) -> list[TriangleCandidate]:
    """Sample segment pairs, fit the four triangles of each, filter and deduplicate.

    Segments are sorted canonically first so the result does not depend on
    input order. When there are no more pairs than iterations every pair is
    tried; otherwise ``iterations`` distinct pairs are drawn with the seeded
    RNG. Output is ranked by continuity ratio.
    """
    segs = sorted((s for s in segments if s.length >= cfg.min_length), key=_canonical)
    if len(segs) < 2:
        return []
    lines = [Line.from_segment(s) for s in segs]
    pts = [_support_points(s) for s in segs]
    inliers: dict[int, np.ndarray] = {}

    def inl(i):
        if i not in inliers:
            inliers[i] = collect_inliers(lines[i], segs, cfg.d_nb, pts)
        return inliers[i]

    cands = []
    for i, j in _pair_indices(len(segs), cfg):
        if _orient_diff(lines[i].orientation, lines[j].orientation) < cfg.min_pair_angle:
            continue
        for c in triangles_from_pair(lines[i], lines[j], inl(i), inl(j), size, cfg.min_pair_angle):
            if c.continuity_ratio >= cfg.min_cr and c.total_ratio >= cfg.min_tr:
                cands.append(c)
    return suppress_duplicates(cands, cfg.nms_delta)


# ---------------------------------------------------------------------------
# sketch queries

@dataclass(frozen=True)
class SketchQuery:
    orient1: float
    orient2: float
    opening: str
    orient_tolerance: float = 11.25

    def __post_init__(self):
        for o in (self.orient1, self.orient2):
            if not 0.0 <= o < 180.0:
                raise InvalidInputError("sketch orientations must lie in [0, 180)")
        if self.opening not in OPENINGS:
            raise InvalidInputError(f"opening must be one of {OPENINGS}")
        if _orient_diff(self.orient1, self.orient2) < 45.0:
            raise InvalidInputError("the sketched angle must lie in [45, 135] degrees")
        if self.orient_tolerance < 0:
            raise InvalidInputError("orientation tolerance must be non-negative")


def sketch_matches(query: SketchQuery, cand: TriangleCandidate) -> bool:
    if cand.opening != query.opening:
        return False
    a, b = cand.side_orientations
    tol = query.orient_tolerance
    direct = _orient_diff(a, query.orient1) <= tol and _orient_diff(b, query.orient2) <= tol
    swapped = _orient_diff(a, query.orient2) <= tol and _orient_diff(b, query.orient1) <= tol
    return direct or swapped


def match_sketch(query: SketchQuery, candidates: Sequence[TriangleCandidate]) -> list[TriangleCandidate]:
    """Candidates agreeing with the sketch, by descending continuity ratio (stable)."""
    hits = [c for c in candidates if sketch_matches(query, c)]
    return sorted(hits, key=lambda c: -c.continuity_ratio)
