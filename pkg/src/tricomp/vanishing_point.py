"""Dominant vanishing point by exhaustive grid search.

Every grid vertex is tried as the pole. Its consensus score sums, over all
adjacency edges of a fixed over-segmentation, the product of the edge's
photometric weight (pole independent) and its geometric weight (recomputed
for the pole).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import InvalidInputError, Point, as_image, check_labels, polar_angles, region_adjacency
from .segmentation import (
    NUM_BINS,
    SegmentationConfig,
    boundary_strength,
    overseg_initial,
    pair_strengths,
    mean_strength,
)


@dataclass(frozen=True)
class VpSearchConfig:
    grid_cols: int = 50
    grid_rows: int = 33
    coarse_to_fine: bool = False

    def __post_init__(self):
        if self.grid_cols < 2 or self.grid_rows < 2:
            raise InvalidInputError("the VP grid needs at least 2x2 vertices")


@dataclass
class VpScoreMap:
    scores: np.ndarray = field(repr=False)  # (grid_rows, grid_cols)
    xs: np.ndarray = field(repr=False)
    ys: np.ndarray = field(repr=False)
    best: Point
    best_score: float
    evaluated: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"vp": self.best.to_json(), "score": float(self.best_score),
                "grid": [len(self.xs), len(self.ys)]}


def worker_count() -> int:
    """Worker cap from ``COMPOSE_THREADS`` (unset or 0 means one per CPU)."""
    try:
        n = int(os.environ.get("COMPOSE_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def grid_vertices(width: int, height: int, cols: int, rows: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell centres of a ``cols x rows`` partition of the frame."""
    xs = (np.arange(cols) + 0.5) * width / cols
    ys = (np.arange(rows) + 0.5) * height / rows
    return xs, ys


class PoleScorer:
    """Caches everything about an over-segmentation that does not depend on the pole."""

    def __init__(self, labels: np.ndarray, edge_ids: np.ndarray, w_p: np.ndarray):
        labels = np.asarray(labels)
        self.shape = labels.shape
        self.k = int(labels.max()) + 1
        h, w = labels.shape
        ys, xs = np.mgrid[0:h, 0:w]
        self.xs = xs.ravel().astype(np.float64)
        self.ys = ys.ravel().astype(np.float64)
        self.base = labels.ravel().astype(np.int64) * NUM_BINS
        self.ii = np.asarray(edge_ids[:, 0], dtype=np.int64) if len(edge_ids) else np.zeros(0, np.int64)
        self.jj = np.asarray(edge_ids[:, 1], dtype=np.int64) if len(edge_ids) else np.zeros(0, np.int64)
        self.w_p = np.asarray(w_p, dtype=np.float64)

    @classmethod
    def from_strength(cls, labels: np.ndarray, strength: np.ndarray) -> "PoleScorer":
        labels = check_labels(labels)
        adj = region_adjacency(labels)
        keys = sorted(adj)
        ids = np.array(keys, dtype=np.int64).reshape(-1, 2)
        w_p = np.array([mean_strength(pair_strengths(adj[k].pairs, strength)) for k in keys])
        return cls(labels, ids, w_p)

    def histograms(self, pole: Point) -> np.ndarray:
        bins = np.floor(polar_angles(pole, self.xs, self.ys)).astype(np.int64) % NUM_BINS
        idx = self.base + bins
        at_pole = (self.xs == pole[0]) & (self.ys == pole[1])
        if at_pole.any():
            idx = idx[~at_pole]
        return np.bincount(idx, minlength=self.k * NUM_BINS).reshape(self.k, NUM_BINS)

    def score(self, pole: Point) -> float:
        if self.ii.size == 0:
            return 0.0
        hists = self.histograms(pole)
        totals = hists.sum(axis=1)
        overlap = np.minimum(hists[self.ii], hists[self.jj]).sum(axis=1)
        denom = np.minimum(totals[self.ii], totals[self.jj])
        # a region made only of the pole pixel has no angle; it contributes nothing
        w_g = np.where(denom > 0, 1.0 - overlap / np.maximum(denom, 1), 0.0)
        return float(np.dot(self.w_p, w_g))


def consensus_score(labels: np.ndarray, edge_ids: np.ndarray, w_p: np.ndarray, pole: Point) -> float:
    """Sum over edges of ``W_p * W_g`` with histograms taken about ``pole``."""
    return PoleScorer(labels, np.asarray(edge_ids).reshape(-1, 2), w_p).score(pole)


def _score_points(scorer: PoleScorer, points: list, workers: int) -> list:
    if workers <= 1 or len(points) < 2:
        return [scorer.score(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(scorer.score, points))


def search_grid(scorer: PoleScorer, cfg: VpSearchConfig = VpSearchConfig(),
                workers: Optional[int] = None) -> VpScoreMap:
    h, w = scorer.shape
    workers = worker_count() if workers is None else workers
    m, n = cfg.grid_cols, cfg.grid_rows
    xs, ys = grid_vertices(w, h, m, n)
    scores = np.zeros((n, m))
    evaluated = np.zeros((n, m), dtype=bool)
    if cfg.coarse_to_fine and (m > 10 or n > 7):
        cm, cn = min(10, m), min(7, n)
        cxs, cys = grid_vertices(w, h, cm, cn)
        coarse = _score_points(scorer, [Point(x, y) for y in cys for x in cxs], workers)
        ci = int(np.argmax(coarse))
        crow, ccol = divmod(ci, cm)
        # fine vertices lying inside the best coarse cell's 3x3 neighbourhood
        x0, x1 = (ccol - 1) * w / cm, (ccol + 2) * w / cm
        y0, y1 = (crow - 1) * h / cn, (crow + 2) * h / cn
        cols = np.flatnonzero((xs >= x0) & (xs < x1))
        rows = np.flatnonzero((ys >= y0) & (ys < y1))
        cells = [(r, c) for r in rows for c in cols]
    else:
        cells = [(r, c) for r in range(n) for c in range(m)]
    vals = _score_points(scorer, [Point(xs[c], ys[r]) for r, c in cells], workers)
    for (r, c), v in zip(cells, vals):
        scores[r, c] = v
        evaluated[r, c] = True
    masked = np.where(evaluated, scores, -np.inf)
    r, c = divmod(int(np.argmax(masked)), m)
    return VpScoreMap(scores, xs, ys, Point(float(xs[c]), float(ys[r])),
                      float(scores[r, c]), evaluated)


def detect_dominant_vp(img, cfg: VpSearchConfig = VpSearchConfig(),
                       seg_cfg: SegmentationConfig = SegmentationConfig(),
                       overseg: Optional[np.ndarray] = None,
                       strength: Optional[np.ndarray] = None,
                       workers: Optional[int] = None) -> VpScoreMap:
    """Grid search for the in-frame pole with the highest consensus score."""
    img = as_image(img)
    labels = overseg_initial(img, seg_cfg) if overseg is None else check_labels(overseg)
    strength = boundary_strength(img) if strength is None else strength
    scorer = PoleScorer.from_strength(labels, strength)
    return search_grid(scorer, cfg, workers)
