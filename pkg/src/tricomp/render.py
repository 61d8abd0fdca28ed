"""Overlay rendering: triangles, vanishing points, segments, label maps, heat maps."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .core import LineSegment, Point, as_image
from .triangles import TriangleCandidate

RED = (255, 0, 0)
YELLOW = (255, 255, 0)
GREEN = (0, 200, 0)
SIDE_WIDTH = 2
VP_DIAMETER = 6


def mean_color_fill(img: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Replace every region by its mean colour."""
    img = as_image(img)
    labels = np.asarray(labels)
    k = int(labels.max()) + 1
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    out = np.empty_like(img)
    for c in range(3):
        sums = np.bincount(flat, weights=img[..., c].ravel().astype(np.float64), minlength=k)
        means = np.rint(sums / np.maximum(counts, 1)).astype(np.uint8)
        out[..., c] = means[labels]
    return out


def emit_overlay(img, triangles: Sequence[TriangleCandidate] = (), vp: Optional[Point] = None,
                 labels: Optional[np.ndarray] = None,
                 segments: Sequence[LineSegment] = ()) -> np.ndarray:
    """Draw detections over the image.

    Only the two sides meeting at each triangle's apex are drawn, as 2 px
    red strokes; the vanishing point is a 6 px yellow disc. With nothing to
    draw the result equals the input.
    """
    base = as_image(img)
    if labels is not None:
        base = mean_color_fill(base, labels)
    if not triangles and vp is None and not segments:
        return base.copy()
    canvas = Image.fromarray(base)
    draw = ImageDraw.Draw(canvas)
    for s in segments:
        draw.line([tuple(s.p0), tuple(s.p1)], fill=GREEN, width=1)
    for t in triangles:
        for v in (t.vertex_x, t.vertex_y):
            draw.line([tuple(t.apex), tuple(v)], fill=RED, width=SIDE_WIDTH)
    if vp is not None:
        r = VP_DIAMETER / 2.0
        draw.ellipse([vp[0] - r, vp[1] - r, vp[0] + r, vp[1] + r], fill=YELLOW)
    return np.asarray(canvas)


def heat_map(scores: np.ndarray, size: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Grayscale rendering of a score grid, optionally stretched to ``size = (w, h)``."""
    s = np.asarray(scores, dtype=np.float64)
    lo, hi = float(s.min()), float(s.max())
    g = np.zeros_like(s) if hi <= lo else (s - lo) / (hi - lo)
    gray = np.rint(255 * g).astype(np.uint8)
    if size is not None:
        gray = np.asarray(Image.fromarray(gray).resize(size, Image.NEAREST))
    return gray


def contact_sheet(images: Sequence[np.ndarray], columns: int = 4,
                  thumb: tuple[int, int] = (200, 132), pad: int = 4) -> np.ndarray:
    """Tile thumbnails left to right, top to bottom, on a white sheet."""
    if not images:
        return np.full((thumb[1] + 2 * pad, thumb[0] + 2 * pad, 3), 255, np.uint8)
    cols = min(columns, len(images))
    rows = -(-len(images) // cols)
    sheet = Image.new("RGB", (cols * (thumb[0] + pad) + pad, rows * (thumb[1] + pad) + pad),
                      (255, 255, 255))
    for k, im in enumerate(images):
        t = Image.fromarray(as_image(im))
        t.thumbnail(thumb, Image.BILINEAR)
        r, c = divmod(k, cols)
        sheet.paste(t, (pad + c * (thumb[0] + pad), pad + r * (thumb[1] + pad)))
    return np.asarray(sheet)
