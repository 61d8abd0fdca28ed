"""Per-image pipelines: scenes (vanishing point + segmentation) and portraits (triangles)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import LineSegment, Point, as_image, resize_canonical
from .line_segments import LsdConfig, detect_line_segments
from .segmentation import MergeHierarchy, SegmentationConfig, boundary_strength, overseg_initial, segment
from .triangles import RansacConfig, TriangleCandidate, ransac_detect
from .vanishing_point import PoleScorer, VpScoreMap, VpSearchConfig, search_grid


@dataclass(frozen=True)
class AnalysisConfig:
    seg: SegmentationConfig = field(default_factory=SegmentationConfig)
    vp: VpSearchConfig = field(default_factory=VpSearchConfig)
    lsd: LsdConfig = field(default_factory=LsdConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def to_json(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in ("seg", "vp", "lsd", "ransac")}


@dataclass
class SceneAnalysis:
    image: np.ndarray = field(repr=False)
    vp: VpScoreMap
    labels: np.ndarray = field(repr=False)
    hierarchy: MergeHierarchy = field(repr=False)


@dataclass
class PortraitAnalysis:
    image: np.ndarray = field(repr=False)
    segments: list[LineSegment]
    triangles: list[TriangleCandidate]


def analyze_scene(img, cfg: AnalysisConfig = AnalysisConfig(), workers: Optional[int] = None,
                  pole: Optional[Point] = None) -> SceneAnalysis:
    """Rescale, find the dominant vanishing point, then segment around it.

    One over-segmentation and boundary map serve both stages. Passing
    ``pole`` skips the search and segments about the given point.
    """
    img = resize_canonical(as_image(img))
    overseg = overseg_initial(img, cfg.seg)
    strength = boundary_strength(img)
    if pole is None:
        vp = search_grid(PoleScorer.from_strength(overseg, strength), cfg.vp, workers)
    else:
        vp = VpScoreMap(np.zeros((0, 0)), np.zeros(0), np.zeros(0), Point(*pole), float("nan"))
    labels, hierarchy = segment(img, vp.best, cfg.seg, strength, overseg)
    return SceneAnalysis(img, vp, labels, hierarchy)


def analyze_portrait(img, cfg: AnalysisConfig = AnalysisConfig(),
                     contours: Optional[np.ndarray] = None) -> PortraitAnalysis:
    img = resize_canonical(as_image(img))
    segs = detect_line_segments(img, cfg.lsd, contours)
    h, w = img.shape[:2]
    tris = ransac_detect(segs, cfg.ransac, (w, h))
    return PortraitAnalysis(img, segs, tris)
