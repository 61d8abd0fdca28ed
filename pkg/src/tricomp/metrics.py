"""Benchmarks: partition agreement, vanishing-point success, triangle precision/recall."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np

from .core import InvalidInputError, Point, Triangle, dist


def contingency(s1: np.ndarray, s2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Non-zero overlap counts with their row/column region sizes.

    Returns ``(n_ij, a_i, b_j)`` where ``n_ij`` lists every non-empty
    intersection and ``a_i``/``b_j`` are the sizes of the two regions it
    belongs to.
    """
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if s1.shape != s2.shape:
        raise InvalidInputError(f"label maps differ in size: {s1.shape} vs {s2.shape}")
    _, r = np.unique(s1.ravel(), return_inverse=True)
    _, c = np.unique(s2.ravel(), return_inverse=True)
    r = r.ravel().astype(np.int64)
    c = c.ravel().astype(np.int64)
    rows = np.bincount(r)
    cols = np.bincount(c)
    cells, counts = np.unique(r * len(cols) + c, return_counts=True)
    ri, ci = np.divmod(cells, len(cols))
    return counts, rows[ri], cols[ci]


def _pairs(n):
    n = np.asarray(n, dtype=np.int64)
    return n * (n - 1) // 2


def rand_index(s1: np.ndarray, s2: np.ndarray) -> float:
    """Fraction of pixel pairs on which the two partitions agree."""
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if s1.shape != s2.shape:
        raise InvalidInputError(f"label maps differ in size: {s1.shape} vs {s2.shape}")
    n = s1.size
    if n < 2:
        return 1.0
    nij, _, _ = contingency(s1, s2)
    rows = np.unique(s1, return_counts=True)[1]
    cols = np.unique(s2, return_counts=True)[1]
    total = n * (n - 1) // 2
    same_both = int(_pairs(nij).sum())
    same_1 = int(_pairs(rows).sum())
    same_2 = int(_pairs(cols).sum())
    # pairs together in both + pairs apart in both
    agree = total + 2 * same_both - same_1 - same_2
    return agree / total


def variation_of_information(s1: np.ndarray, s2: np.ndarray) -> float:
    """``H(S1|S2) + H(S2|S1)`` in bits."""
    nij, a, b = contingency(s1, s2)
    n = float(np.asarray(s1).size)
    p = nij / n
    # each term is exactly zero when a cell fills its whole row/column
    h12 = -np.sum(p * np.log2(nij / b))
    h21 = -np.sum(p * np.log2(nij / a))
    return float(h12 + h21) + 0.0


def segmentation_covering(s1: np.ndarray, s2: np.ndarray, symmetric: bool = False) -> float:
    """Covering of ``s1`` by ``s2``.

    Each region ``R`` of ``s1`` is weighted by its size and scored by its best
    Jaccard overlap with a region of ``s2``. ``symmetric=True`` averages both
    directions.
    """
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if symmetric:
        return 0.5 * (segmentation_covering(s1, s2) + segmentation_covering(s2, s1))
    if s1.shape != s2.shape:
        raise InvalidInputError(f"label maps differ in size: {s1.shape} vs {s2.shape}")
    _, r = np.unique(s1.ravel(), return_inverse=True)
    _, c = np.unique(s2.ravel(), return_inverse=True)
    r = r.ravel().astype(np.int64)
    c = c.ravel().astype(np.int64)
    rows = np.bincount(r)
    cols = np.bincount(c)
    cells, nij = np.unique(r * len(cols) + c, return_counts=True)
    ri, ci = np.divmod(cells, len(cols))
    jac = nij / (rows[ri] + cols[ci] - nij)
    best = np.zeros(len(rows))
    np.maximum.at(best, ri, jac)
    return float(np.sum(rows * best) / s1.size)


# ---------------------------------------------------------------------------
# vanishing points

def vp_distances(detections: Sequence[Point], truths: Sequence[Point]) -> np.ndarray:
    if len(detections) != len(truths):
        raise InvalidInputError("detections and ground truths differ in length")
    return np.array([dist(d, t) for d, t in zip(detections, truths)], dtype=np.float64)


def vp_success_rate(detections: Sequence[Point], truths: Sequence[Point], t: float) -> float:
    """Fraction of detections closer than ``t`` pixels (strict) to the truth."""
    d = vp_distances(detections, truths)
    if d.size == 0:
        return 0.0
    return float(np.mean(d < t))


def vp_success_curve(detections: Sequence[Point], truths: Sequence[Point],
                     thresholds: Sequence[float]) -> np.ndarray:
    d = vp_distances(detections, truths)
    if d.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.mean(d < t) for t in thresholds])


# ---------------------------------------------------------------------------
# triangles

_CORRESPONDENCES = list(itertools.permutations(range(3)))


def triangle_match_ratio(gt: Triangle, cand: Triangle) -> float:
    """Vertex displacement over ground-truth perimeter, minimised over the
    six vertex correspondences."""
    gt = Triangle(*(Point(*p) for p in gt))
    cand = Triangle(*(Point(*p) for p in cand))
    if gt.area() <= 1e-12:
        raise InvalidInputError("ground-truth triangle is degenerate")
    per = gt.perimeter()
    best = math.inf
    for perm in _CORRESPONDENCES:
        disp = sum(dist(gt[k], cand[perm[k]]) for k in range(3))
        best = min(best, disp)
    return best / per


def triangle_match(gt: Triangle, cand: Triangle, delta: float = 0.3) -> bool:
    return triangle_match_ratio(gt, cand) <= delta


def _as_triangle(t) -> Triangle:
    if isinstance(t, Triangle):
        return t
    if hasattr(t, "triangle"):
        return t.triangle
    return Triangle(*(Point(*p) for p in t))


def precision_recall(gt: Sequence, cands: Sequence, delta: float = 0.3) -> tuple[float, float]:
    """Greedy one-to-one matching; candidates are visited by descending
    continuity ratio when they carry one, otherwise in the given order."""
    order = list(range(len(cands)))
    if cands and all(hasattr(c, "continuity_ratio") for c in cands):
        order.sort(key=lambda k: -cands[k].continuity_ratio)
    gts = [_as_triangle(g) for g in gt]
    used = [False] * len(gts)
    matches = 0
    for k in order:
        cand = _as_triangle(cands[k])
        best, best_r = None, math.inf
        for g, tri in enumerate(gts):
            if used[g]:
                continue
            r = triangle_match_ratio(tri, cand)
            if r <= delta and r < best_r:
                best, best_r = g, r
        if best is not None:
            used[best] = True
            matches += 1
    precision = matches / len(cands) if cands else 0.0
    recall = matches / len(gts) if gts else 0.0
    return precision, recall
