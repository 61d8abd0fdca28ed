"""Geometric hierarchical segmentation around a dominant vanishing point.

Regions of an over-segmentation are merged greedily by the edge weight

    W = lam * W_g + (1 - lam) * W_p

where ``W_p`` is the mean boundary strength along the shared boundary and
``W_g`` compares 360-bin histograms of the regions' polar angles about the
vanishing point (the pole).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage
from skimage.segmentation import felzenszwalb

from .core import (
    InvalidInputError,
    Point,
    as_image,
    check_labels,
    polar_angles,
    region_adjacency,
    relabel,
)

NUM_BINS = 360


@dataclass(frozen=True)
class SegmentationConfig:
    lam: float = 0.6
    stop_delta: float = 0.55
    target_regions: Optional[int] = None
    overseg_min_size: int = 20
    overseg_scale: float = 100.0
    overseg_sigma: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidInputError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.stop_delta <= 1.0:
            raise InvalidInputError(f"stop_delta must lie in [0, 1], got {self.stop_delta}")
        if self.target_regions is not None and self.target_regions < 1:
            raise InvalidInputError("target_regions must be >= 1")
        if self.overseg_min_size < 1 or self.overseg_scale <= 0 or self.overseg_sigma < 0:
            raise InvalidInputError("over-segmentation parameters must be positive")


# ---------------------------------------------------------------------------
# inputs: over-segmentation and boundary strength

def overseg_initial(img, cfg: SegmentationConfig = SegmentationConfig()) -> np.ndarray:
    """Graph-based (Felzenszwalb-Huttenlocher) over-segmentation."""
    img = as_image(img)
    labels = felzenszwalb(img, scale=cfg.overseg_scale, sigma=cfg.overseg_sigma,
                          min_size=cfg.overseg_min_size)
    return absorb_ribbons(relabel(labels), img)


def absorb_ribbons(labels: np.ndarray, img) -> np.ndarray:
    """Fold regions without a single interior pixel into their closest-colour neighbour.

    Pre-smoothing turns a sharp step edge into one-pixel strips of
    intermediate colour; such ribbons carry no area of their own.
    """
    labels = np.asarray(labels)
    n = int(labels.max()) + 1
    if n == 1:
        return labels
    cross = ndimage.generate_binary_structure(2, 1)
    interior = np.zeros(n, dtype=bool)
    same = ndimage.minimum_filter(labels, footprint=cross, mode="nearest") == \
        ndimage.maximum_filter(labels, footprint=cross, mode="nearest")
    interior[np.unique(labels[same])] = True
    if interior.all():
        return labels
    rgb = as_image(img).astype(np.float64)
    counts = np.bincount(labels.ravel(), minlength=n)
    means = np.stack([np.bincount(labels.ravel(), rgb[..., c].ravel(), minlength=n)
                      for c in range(3)], axis=1) / counts[:, None]
    target = np.arange(n)
    for (a, b) in sorted(region_adjacency(labels)):
        for r, o in ((a, b), (b, a)):
            if interior[r] or not interior[o]:
                continue
            cur = target[r]
            d = np.linalg.norm(means[r] - means[o])
            if cur == r or d < np.linalg.norm(means[r] - means[cur]):
                target[r] = o
    return relabel(target[labels])


def boundary_strength(img) -> np.ndarray:
    """Per-pixel boundary strength in [0, 1].

    Gradient magnitude of the smoothed (sigma=1) YCbCr image, divided by its
    99th percentile (or by the maximum when fewer than 1% of pixels carry
    any gradient) and clamped.
    """
    rgb = as_image(img).astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    channels = (
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.168736 * r - 0.331264 * g + 0.5 * b,
        0.5 * r - 0.418688 * g - 0.081312 * b,
    )
    mag2 = np.zeros(rgb.shape[:2])
    for ch in channels:
        gy, gx = np.gradient(ndimage.gaussian_filter(ch, 1.0))
        mag2 += gx * gx + gy * gy
    mag = np.sqrt(mag2)
    scale = np.percentile(mag, 99)
    if scale <= 1e-9:
        scale = mag.max()
    if scale <= 1e-9:
        return np.zeros_like(mag)
    return np.clip(mag / scale, 0.0, 1.0)


def contour_from_gray(gray: np.ndarray) -> np.ndarray:
    """Imported contour map: 8-bit gray 0..255 -> [0, 1]."""
    gray = np.asarray(gray)
    if gray.ndim == 3:
        gray = gray[..., 0]
    return gray.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# edge weights

def pair_strengths(pairs: np.ndarray, strength: np.ndarray) -> np.ndarray:
    flat = np.asarray(strength, dtype=np.float64).ravel()
    return (flat[pairs[:, 0]] + flat[pairs[:, 1]]) * 0.5


def mean_strength(values: np.ndarray) -> float:
    # fsum is exactly rounded, so the result does not depend on pair order
    if len(values) == 0:
        raise RuntimeError("edge without boundary pixels")
    return math.fsum(values) / len(values)


def photometric_weight(pairs: np.ndarray, strength: np.ndarray) -> float:
    """Mean boundary strength over an edge's boundary pairs."""
    return mean_strength(pair_strengths(np.asarray(pairs), strength))


def build_histogram(pixels, pole: Point) -> np.ndarray:
    """360-bin polar-angle histogram of ``(x, y)`` pixels about ``pole``.

    A pixel coinciding with the pole is skipped.
    """
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if len(pix) == 0:
        raise InvalidInputError("empty region")
    xs, ys = pix[:, 0], pix[:, 1]
    keep = ~((xs == pole[0]) & (ys == pole[1]))
    if not keep.any():
        raise InvalidInputError("region contains only the pole pixel")
    bins = np.floor(polar_angles(pole, xs[keep], ys[keep])).astype(np.int64) % NUM_BINS
    return np.bincount(bins, minlength=NUM_BINS)


def angle_bins(shape: tuple[int, int], pole: Point) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel angle bin and a mask that is False only at the pole pixel."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    xs = xs.ravel().astype(np.float64)
    ys = ys.ravel().astype(np.float64)
    bins = np.floor(polar_angles(pole, xs, ys)).astype(np.int64) % NUM_BINS
    keep = ~((xs == pole[0]) & (ys == pole[1]))
    return bins, keep


def region_histograms(labels: np.ndarray, pole: Point, num_regions: Optional[int] = None,
                      _bins=None) -> np.ndarray:
    """``(K, 360)`` histograms for every region of a contiguous label map."""
    flat = np.asarray(labels).ravel()
    k = int(flat.max()) + 1 if num_regions is None else num_regions
    bins, keep = angle_bins(np.shape(labels), pole) if _bins is None else _bins
    idx = flat[keep].astype(np.int64) * NUM_BINS + bins[keep]
    return np.bincount(idx, minlength=k * NUM_BINS).reshape(k, NUM_BINS)


def geometric_weight(h_i, h_j) -> float:
    """``1 - max(sum(min)/|R_i|, sum(min)/|R_j|)``; 0 when one histogram dominates."""
    a = np.asarray(h_i)
    b = np.asarray(h_j)
    n = max(a.size, b.size)
    if a.size < n:
        a = np.pad(a, (0, n - a.size))
    if b.size < n:
        b = np.pad(b, (0, n - b.size))
    ta, tb = int(a.sum()), int(b.sum())
    if ta < 1 or tb < 1:
        raise InvalidInputError("geometric weight of an empty histogram")
    overlap = int(np.minimum(a, b).sum())
    return 1.0 - overlap / min(ta, tb)


def geometric_weights(hists: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    """Vectorised :func:`geometric_weight` over edge index arrays."""
    totals = hists.sum(axis=1)
    overlap = np.minimum(hists[ii], hists[jj]).sum(axis=1)
    denom = np.minimum(totals[ii], totals[jj])
    if np.any(denom < 1):
        raise InvalidInputError("geometric weight of an empty histogram")
    return 1.0 - overlap / denom


def combined_weight(w_g: float, w_p: float, lam: float) -> float:
    return lam * w_g + (1.0 - lam) * w_p


# ---------------------------------------------------------------------------
# region graph

@dataclass
class GraphEdge:
    i: int
    j: int
    pairs: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # per-pair mean strength
    w_p: float = 0.0
    w_g: float = 0.0
    w: float = 0.0


@dataclass
class RegionGraph:
    labels: np.ndarray = field(repr=False)
    pole: Point
    lam: float
    sizes: np.ndarray = field(repr=False)
    hists: np.ndarray = field(repr=False)
    edges: dict = field(repr=False)

    @property
    def num_regions(self) -> int:
        return len(self.sizes)


def build_region_graph(labels: np.ndarray, strength: np.ndarray, pole: Point,
                       lam: float = 0.6, adjacency: Optional[dict] = None) -> RegionGraph:
    labels = check_labels(labels)
    if np.shape(strength) != labels.shape:
        raise InvalidInputError("strength map and label map differ in size")
    k = int(labels.max()) + 1
    hists = region_histograms(labels, pole, k)
    if np.any(hists.sum(axis=1) < 1):
        raise InvalidInputError("a region consists only of the pole pixel")
    adjacency = region_adjacency(labels) if adjacency is None else adjacency
    edges = {}
    for key, e in adjacency.items():
        vals = pair_strengths(e.pairs, strength)
        w_p = mean_strength(vals)
        w_g = geometric_weight(hists[e.i], hists[e.j])
        edges[key] = GraphEdge(e.i, e.j, e.pairs, vals, w_p, w_g,
                               combined_weight(w_g, w_p, lam))
    sizes = np.bincount(labels.ravel(), minlength=k)
    return RegionGraph(labels, Point(*pole), lam, sizes, hists, edges)


# ---------------------------------------------------------------------------
# greedy merging

@dataclass
class MergeHierarchy:
    initial: np.ndarray = field(repr=False)
    merges: list  # (weight, survivor, absorbed)

    @property
    def num_initial(self) -> int:
        return int(self.initial.max()) + 1


class HierarchicalMerger:
    """Incremental state of the greedy merge loop.

    The survivor of a merge keeps the smaller ID. Histograms are summed,
    edges to a common neighbour are fused by concatenating their boundary
    values, and every edge touching the survivor is re-weighted.
    """

    def __init__(self, graph: RegionGraph):
        self.lam = graph.lam
        self.hists = {r: graph.hists[r].astype(np.int64).copy() for r in range(graph.num_regions)}
        self.nbrs: dict[int, set] = {r: set() for r in range(graph.num_regions)}
        self.values: dict[tuple[int, int], np.ndarray] = {}
        self.weights: dict[tuple[int, int], tuple[float, float, float]] = {}
        self.heap: list = []
        for (i, j), e in graph.edges.items():
            self.nbrs[i].add(j)
            self.nbrs[j].add(i)
            self.values[(i, j)] = e.values
            self.weights[(i, j)] = (e.w_p, e.w_g, e.w)
            self.heap.append((e.w, i, j))
        heapq.heapify(self.heap)

    @property
    def num_regions(self) -> int:
        return len(self.hists)

    def peek(self) -> Optional[tuple[float, int, int]]:
        while self.heap:
            w, i, j = self.heap[0]
            cur = self.weights.get((i, j))
            if cur is not None and cur[2] == w:
                return w, i, j
            heapq.heappop(self.heap)
        return None

    def step(self) -> Optional[tuple[float, int, int]]:
        top = self.peek()
        if top is None:
            return None
        heapq.heappop(self.heap)
        w, a, b = top
        self._merge(a, b)
        return w, a, b

    def _merge(self, a: int, b: int) -> None:
        self.hists[a] = self.hists[a] + self.hists.pop(b)
        del self.values[(a, b)]
        del self.weights[(a, b)]
        self.nbrs[a].discard(b)
        for n in self.nbrs.pop(b):
            if n == a:
                continue
            old = (min(b, n), max(b, n))
            vals = self.values.pop(old)
            del self.weights[old]
            self.nbrs[n].discard(b)
            new = (min(a, n), max(a, n))
            if new in self.values:
                vals = np.concatenate([self.values[new], vals])
            self.values[new] = vals
            self.nbrs[a].add(n)
            self.nbrs[n].add(a)
        for n in self.nbrs[a]:
            key = (min(a, n), max(a, n))
            w_p = mean_strength(self.values[key])
            w_g = geometric_weight(self.hists[key[0]], self.hists[key[1]])
            w = combined_weight(w_g, w_p, self.lam)
            self.weights[key] = (w_p, w_g, w)
            heapq.heappush(self.heap, (w, key[0], key[1]))


def merge_hierarchy(graph: RegionGraph, cfg: Optional[SegmentationConfig] = None) -> MergeHierarchy:
    """Run the greedy merge loop.

    With ``cfg=None`` the loop runs until no edges remain, giving the full
    hierarchy that :func:`segment_at` can cut at any level. With a config it
    stops once ``cfg.target_regions`` is reached or the minimum weight
    exceeds ``cfg.stop_delta``.
    """
    m = HierarchicalMerger(graph)
    merges = []
    while True:
        if cfg is not None:
            if cfg.target_regions is not None and m.num_regions <= cfg.target_regions:
                break
            top = m.peek()
            if top is None or top[0] > cfg.stop_delta:
                break
        step = m.step()
        if step is None:
            break
        merges.append(step)
    return MergeHierarchy(graph.labels.copy(), merges)


def _replay(h: MergeHierarchy, k: Optional[int], delta: Optional[float]) -> np.ndarray:
    n = h.num_initial
    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    count = n
    for w, a, b in h.merges:
        if k is not None and count <= k:
            break
        if delta is not None and w > delta:
            break
        ra, rb = find(a), find(b)
        parent[max(ra, rb)] = min(ra, rb)
        count -= 1
    roots = np.array([find(x) for x in range(n)])
    return roots


def segment_at(h: MergeHierarchy, k: Optional[int] = None,
               delta: Optional[float] = None) -> np.ndarray:
    """Cut the hierarchy at ``k`` regions and/or weight threshold ``delta``."""
    if k is not None and k < 1:
        raise InvalidInputError("k must be >= 1")
    roots = _replay(h, k, delta)
    return relabel(roots[h.initial])


def segment(img, pole: Point, cfg: SegmentationConfig = SegmentationConfig(),
            strength: Optional[np.ndarray] = None,
            overseg: Optional[np.ndarray] = None) -> tuple[np.ndarray, MergeHierarchy]:
    """Over-segment, build the graph and cut the full hierarchy per ``cfg``."""
    img = as_image(img)
    labels = overseg_initial(img, cfg) if overseg is None else check_labels(overseg)
    strength = boundary_strength(img) if strength is None else strength
    graph = build_region_graph(labels, strength, pole, cfg.lam)
    hierarchy = merge_hierarchy(graph)
    return segment_at(hierarchy, cfg.target_regions, cfg.stop_delta), hierarchy

