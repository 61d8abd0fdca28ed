"""Procedural test scenes with known ground truth.

Perspective scenes are modelled as wedges: planes parallel to the dominant
direction project to angular sectors around the vanishing point, bounded by
rays from it. Portrait-style scenes are two drawn sides of a triangle among
clutter strokes.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .core import Point, Triangle, polar_angles


def _grid(width: int, height: int):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def wedge_labels(width: int, height: int, vp: Point, ray_angles: Sequence[float]) -> np.ndarray:
    """Label each pixel by the angular sector (about ``vp``) it falls in."""
    rays = np.sort(np.asarray(ray_angles, dtype=np.float64) % 360.0)
    xs, ys = _grid(width, height)
    ang = polar_angles(vp, xs, ys)
    # sector s spans [rays[s], rays[s+1]); the last one wraps through 0
    lab = np.searchsorted(rays, ang, side="right") - 1
    lab[lab < 0] = len(rays) - 1
    return lab.astype(np.int32)


def corridor_rays(width: int, height: int, vp: Point) -> list[float]:
    """Rays from the vanishing point through the four image corners."""
    corners = [(0, 0), (width - 1, 0), (width - 1, height - 1), (0, height - 1)]
    return [math.degrees(math.atan2(-(cy - vp[1]), cx - vp[0])) % 360.0 for cx, cy in corners]


def _bisectors(rays: np.ndarray) -> np.ndarray:
    rays = np.sort(rays % 360.0)
    nxt = np.r_[rays[1:], rays[0] + 360.0]
    return ((rays + nxt) / 2.0) % 360.0, (nxt - rays)


def render_wedge_scene(width: int, height: int, vp: Point, ray_angles: Sequence[float],
                       colors: Sequence[Sequence[float]], rng: np.random.Generator,
                       noise: float = 4.0, cross_stripes: int = 0,
                       stripe_colors: Optional[Sequence[Sequence[float]]] = None,
                       stripe_span: float = 0.7, planks: int = 0,
                       plank_contrast: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Render a piecewise-planar perspective scene.

    ``cross_stripes`` bands per plane run perpendicular to the plane's
    bisector (constant depth), spaced geometrically away from the vanishing
    point, and cover the central ``stripe_span`` fraction of the sector.
    ``planks`` splits each plane into radial boards of alternating tone.
    Returns the uint8 image and the ground-truth plane labels.
    """
    rays = np.sort(np.asarray(ray_angles, dtype=np.float64) % 360.0)
    labels = wedge_labels(width, height, vp, rays)
    xs, ys = _grid(width, height)
    dx, dy = xs - vp[0], -(ys - vp[1])
    ang = polar_angles(vp, xs, ys)
    img = np.zeros((height, width, 3))
    for s, col in enumerate(colors):
        img[labels == s] = col
    bis, spans = _bisectors(rays)
    diag = math.hypot(width, height)
    for s in range(len(rays)):
        mask = labels == s
        rel = (ang - rays[s]) % 360.0
        if cross_stripes:
            ux, uy = math.cos(math.radians(bis[s])), math.sin(math.radians(bis[s]))
            depth = dx * ux + dy * uy
            lo = spans[s] * (1 - stripe_span) / 2
            inside = mask & (rel >= lo) & (rel <= spans[s] - lo)
            r = rng.uniform(25, 45)
            q = rng.uniform(1.35, 1.6)
            scol = (stripe_colors[s] if stripe_colors is not None
                    else np.asarray(colors[s]) * 0.45)
            while r < diag:
                width_px = max(3.0, 0.12 * r)
                band = inside & (np.abs(depth - r) < width_px / 2)
                img[band] = scol
                r *= q
        if planks > 1:
            # sub-wedges of alternating tone, like boards converging on the VP
            cuts = np.sort(rng.uniform(0.1, 0.9, planks - 1)) * spans[s]
            band = np.searchsorted(cuts, rel)
            img[mask & (band % 2 == 1)] += plank_contrast
    img += rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels


def random_corridor(rng: np.random.Generator, width: int = 500, height: int = 330,
                    vp: Optional[Point] = None, planks: int = 3,
                    cross_stripes: int = 1) -> tuple[np.ndarray, np.ndarray, Point]:
    """Four-plane corridor (floor, ceiling, two walls) with distinct plane tones."""
    if vp is None:
        vp = Point(rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height)
    rays = corridor_rays(width, height, vp)
    base = rng.uniform(60, 200, size=(4, 3))
    # keep neighbouring planes visibly different
    base[1::2] = np.clip(base[1::2] + rng.choice([-50, 50], size=(2, 1)), 20, 235)
    img, labels = render_wedge_scene(width, height, vp, rays, base, rng,
                                     cross_stripes=cross_stripes, planks=planks)
    return img, labels, vp


def random_star(rng: np.random.Generator, width: int = 500, height: int = 330,
                vp: Optional[Point] = None, sectors: int = 8) -> tuple[np.ndarray, np.ndarray, Point]:
    """Alternating-tone star of ``sectors`` wedges around the vanishing point."""
    if vp is None:
        vp = Point(rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height)
    offset = rng.uniform(0, 360.0 / sectors)
    rays = [offset + k * 360.0 / sectors for k in range(sectors)]
    light, dark = rng.uniform(150, 220), rng.uniform(40, 100)
    colors = [[light] * 3 if k % 2 == 0 else [dark] * 3 for k in range(sectors)]
    img, labels = render_wedge_scene(width, height, vp, rays, colors, rng, noise=4.0)
    return img, labels, vp


def ambiguous_plane_scene(rng: np.random.Generator, num_planes: int = 3, width: int = 500,
                          height: int = 330) -> tuple[np.ndarray, np.ndarray, Point]:
    """Two- or three-plane scene whose plane boundaries are photometrically weak.

    Neighbouring planes differ by only a few gray levels, while each plane
    carries high-contrast constant-depth stripes that a purely photometric
    merge finds harder to absorb than the plane boundaries.
    """
    vp = Point(rng.uniform(0.3, 0.7) * width, rng.uniform(0.3, 0.7) * height)
    start = rng.uniform(0, 360)
    gaps = rng.dirichlet(np.full(num_planes, 6.0)) * 360.0
    gaps = 60.0 + gaps * (360.0 - 60.0 * num_planes) / 360.0
    rays = start + np.r_[0.0, np.cumsum(gaps)[:-1]]
    tone = rng.uniform(110, 150)
    colors = [[tone + 9.0 * (s % 2) + 4.0 * (s == 2)] * 3 for s in range(num_planes)]
    stripes = [[rng.uniform(20, 50), rng.uniform(20, 50), rng.uniform(20, 50)]
               for _ in range(num_planes)]
    img, labels = render_wedge_scene(width, height, vp, rays, colors, rng, noise=3.0,
                                     cross_stripes=1, stripe_colors=stripes)
    return img, labels, vp


# ---------------------------------------------------------------------------
# strokes

def draw_segment(canvas: np.ndarray, p0, p1, value: float, half_width: float = 1.0) -> None:
    """Anti-aliased stroke blended toward ``value`` in place (gray or RGB canvas)."""
    h, w = canvas.shape[:2]
    x0, y0 = p0
    x1, y1 = p1
    pad = half_width + 2
    xa, xb = int(max(0, math.floor(min(x0, x1) - pad))), int(min(w, math.ceil(max(x0, x1) + pad) + 1))
    ya, yb = int(max(0, math.floor(min(y0, y1) - pad))), int(min(h, math.ceil(max(y0, y1) + pad) + 1))
    if xa >= xb or ya >= yb:
        return
    ys, xs = np.mgrid[ya:yb, xa:xb].astype(np.float64)
    vx, vy = x1 - x0, y1 - y0
    l2 = vx * vx + vy * vy
    t = np.clip(((xs - x0) * vx + (ys - y0) * vy) / l2, 0.0, 1.0) if l2 > 0 else 0.0
    d = np.hypot(xs - (x0 + t * vx), ys - (y0 + t * vy))
    cover = np.clip(half_width + 0.5 - d, 0.0, 1.0)
    region = canvas[ya:yb, xa:xb]
    if region.ndim == 3:
        cover = cover[..., None]
    region[...] = region * (1 - cover) + value * cover


def render_line(width: int, height: int, p0, p1, contrast: float = 128.0,
                background: float = 64.0, half_width: float = 1.0) -> np.ndarray:
    canvas = np.full((height, width), background, dtype=np.float64)
    draw_segment(canvas, p0, p1, background + contrast, half_width)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def render_arc(width: int, height: int, center, radius: float, start_deg: float,
               end_deg: float, contrast: float = 128.0, background: float = 64.0,
               half_width: float = 1.0, step_deg: float = 0.5) -> np.ndarray:
    """Polyline arc; angles in the y-up convention."""
    canvas = np.full((height, width), background, dtype=np.float64)
    ts = np.radians(np.arange(start_deg, end_deg + 1e-9, step_deg))
    pts = [(center[0] + radius * math.cos(t), center[1] - radius * math.sin(t)) for t in ts]
    for a, b in zip(pts[:-1], pts[1:]):
        draw_segment(canvas, a, b, background + contrast, half_width)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def _point_at(a: Point, b: Point, f: float) -> tuple[float, float]:
    return (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))


def render_two_sided_triangle(rng: np.random.Generator, width: int = 500, height: int = 330,
                              clutter_fraction: float = 0.2, gap_fraction: float = 0.06,
                              half_width: float = 1.5) -> tuple[np.ndarray, Triangle]:
    """Two sides of a random triangle, each broken by one occlusion gap.

    Clutter strokes (``clutter_fraction`` of the stroke count, at least one)
    are scattered at random. Returns the RGB image and the full ground-truth
    triangle ``(apex, end of side 1, end of side 2)``.
    """
    while True:
        apex = Point(rng.uniform(0.15, 0.85) * width, rng.uniform(0.15, 0.85) * height)
        axis = rng.uniform(0, 360)
        opening = rng.uniform(45, 135)
        lens = rng.uniform(0.45, 0.8, size=2) * height
        ends = []
        for k, sign in enumerate((-0.5, 0.5)):
            t = math.radians(axis + sign * opening)
            ends.append(Point(apex.x + lens[k] * math.cos(t), apex.y - lens[k] * math.sin(t)))
        tri = Triangle(apex, ends[0], ends[1])
        inside = all(5 <= p.x <= width - 6 and 5 <= p.y <= height - 6 for p in tri)
        if inside and tri.area() / (width * height) >= 0.12:
            break
    bg = rng.uniform(150, 200)
    ink = bg - rng.uniform(90, 130)
    canvas = np.full((height, width), bg) + rng.normal(0, 2.0, (height, width))
    for end in ends:
        g0 = rng.uniform(0.25, 0.75)
        draw_segment(canvas, _point_at(apex, end, 0.0), _point_at(apex, end, g0), ink, half_width)
        draw_segment(canvas, _point_at(apex, end, g0 + gap_fraction), end, ink, half_width)
    n_clutter = max(1, int(round(clutter_fraction * 4)))
    for _ in range(n_clutter):
        c = (rng.uniform(0, width), rng.uniform(0, height))
        t = rng.uniform(0, math.pi)
        ln = rng.uniform(20, 60)
        p0 = (c[0] - ln / 2 * math.cos(t), c[1] - ln / 2 * math.sin(t))
        p1 = (c[0] + ln / 2 * math.cos(t), c[1] + ln / 2 * math.sin(t))
        draw_segment(canvas, p0, p1, ink, half_width)
    gray = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2), tri
