"""Composition index: build, persist and query.

Scene records carry a dominant vanishing point and a segmentation;
portrait records carry detected triangles. Scene similarity is

    D = (1 - RI(S_i, S_j)) + alpha * |P_i - P_j| / diag

with label maps compared on a common 250x165 grid and ``diag`` the diagonal
of the canonical 500x330 frame.

On disk an index is a directory::

    index.json          manifest: version, mode, params, record list
    records/<id>.json   one record per image
    labels/<id>.png     16-bit label map (scene mode)
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from filelock import FileLock

from .analysis import AnalysisConfig, analyze_portrait, analyze_scene
from .core import (
    InvalidInputError,
    Point,
    load_image,
    load_labels,
    save_labels,
    write_json,
)
from .metrics import rand_index
from .triangles import SketchQuery, TriangleCandidate, match_sketch

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MODES = ("scene", "portrait")
COMMON_GRID = (250, 165)
CANONICAL_DIAGONAL = math.hypot(500.0, 330.0)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = 0.5
    topk: int = 8

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidInputError("alpha must be non-negative")
        if self.topk < 1:
            raise InvalidInputError("topk must be at least 1")


@dataclass
class AnalysisRecord:
    image_id: str
    width: int
    height: int
    vp: Optional[Point] = None
    seg: Optional[np.ndarray] = field(default=None, repr=False)
    triangles: list[TriangleCandidate] = field(default_factory=list)
    segments_count: int = 0
    params: dict = field(default_factory=dict)
    content_hash: str = ""

    @property
    def is_scene(self) -> bool:
        return self.vp is not None and self.seg is not None

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "size": [self.width, self.height],
            "vp": None if self.vp is None else self.vp.to_json(),
            "num_regions": None if self.seg is None else int(self.seg.max()) + 1,
            "triangles": [t.to_json() for t in self.triangles],
            "segments_count": self.segments_count,
            "params": self.params,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_json(cls, d: dict, seg: Optional[np.ndarray] = None) -> "AnalysisRecord":
        return cls(
            image_id=d["image_id"],
            width=int(d["size"][0]),
            height=int(d["size"][1]),
            vp=None if d.get("vp") is None else Point.from_json(d["vp"]),
            seg=seg,
            triangles=[TriangleCandidate.from_json(t) for t in d.get("triangles", [])],
            segments_count=int(d.get("segments_count", 0)),
            params=d.get("params", {}),
            content_hash=d.get("content_hash", ""),
        )


def _file_stem(image_id: str) -> str:
    return image_id.replace("/", "__").replace(os.sep, "__")


@dataclass
class CompositionIndex:
    mode: str
    records: list[AnalysisRecord] = field(default_factory=list)
    version: int = FORMAT_VERSION
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"index mode must be one of {MODES}")
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("image ids in an index must be unique")
        for r in self.records:
            self._check(r)

    def _check(self, r: AnalysisRecord) -> None:
        if self.mode == "scene" and not r.is_scene:
            raise InvalidInputError(f"scene record {r.image_id!r} lacks a vanishing point or segmentation")

    def __len__(self):
        return len(self.records)

    def get(self, image_id: str) -> Optional[AnalysisRecord]:
        for r in self.records:
            if r.image_id == image_id:
                return r
        return None

    def save(self, directory) -> None:
        directory = Path(directory)
        (directory / "records").mkdir(parents=True, exist_ok=True)
        if self.mode == "scene":
            (directory / "labels").mkdir(exist_ok=True)
        with FileLock(str(directory / ".lock")):
            entries = []
            for r in sorted(self.records, key=lambda r: r.image_id):
                stem = _file_stem(r.image_id)
                entry = {"image_id": r.image_id, "record": f"records/{stem}.json",
                         "content_hash": r.content_hash}
                if r.seg is not None:
                    entry["labels"] = f"labels/{stem}.png"
                    save_labels(directory / entry["labels"], r.seg)
                write_json(directory / entry["record"], r.to_json())
                entries.append(entry)
            self._remove_stale(directory, {e["record"] for e in entries} | {e.get("labels") for e in entries})
            write_json(directory / "index.json", {"version": self.version, "mode": self.mode,
                                                  "params": self.params, "records": entries})

    @staticmethod
    def _remove_stale(directory: Path, keep: set) -> None:
        for sub in ("records", "labels"):
            d = directory / sub
            if not d.is_dir():
                continue
            for f in d.iterdir():
                if f"{sub}/{f.name}" not in keep:
                    f.unlink()

    @classmethod
    def load(cls, directory) -> "CompositionIndex":
        directory = Path(directory)
        manifest_path = directory / "index.json"
        if not manifest_path.is_file():
            raise InvalidInputError(f"no index found at {directory}")
        with FileLock(str(directory / ".lock")):
            manifest = json.loads(manifest_path.read_text())
            if manifest.get("version") != FORMAT_VERSION:
                raise InvalidInputError(f"unsupported index version {manifest.get('version')}")
            records = []
            for e in manifest["records"]:
                d = json.loads((directory / e["record"]).read_text())
                seg = load_labels(directory / e["labels"]) if e.get("labels") else None
                records.append(AnalysisRecord.from_json(d, seg))
        return cls(manifest["mode"], records, manifest["version"], manifest.get("params", {}))


# ---------------------------------------------------------------------------
# scene similarity

def resample_labels(labels: np.ndarray, size: tuple[int, int] = COMMON_GRID) -> np.ndarray:
    """Nearest-neighbour resampling to ``size = (width, height)``."""
    labels = np.asarray(labels)
    h, w = labels.shape
    tw, th = size
    rows = np.minimum(((np.arange(th) + 0.5) * h / th).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(np.int64), w - 1)
    return labels[np.ix_(rows, cols)]


def _vp_term(a: AnalysisRecord, b: AnalysisRecord) -> float:
    return math.hypot(a.vp.x - b.vp.x, a.vp.y - b.vp.y) / CANONICAL_DIAGONAL


def scene_distance(a: AnalysisRecord, b: AnalysisRecord, alpha: float = 0.5) -> float:
    if not (a.is_scene and b.is_scene):
        raise InvalidInputError("scene distance needs a vanishing point and a segmentation on both records")
    ri = rand_index(resample_labels(a.seg), resample_labels(b.seg))
    return (1.0 - ri) + alpha * _vp_term(a, b)


def rank_scene(query: AnalysisRecord, index: CompositionIndex,
               cfg: RetrievalConfig = RetrievalConfig()) -> list[tuple[str, float]]:
    """Records by ascending distance to an analysed query (ties by image id)."""
    if index.mode != "scene":
        raise InvalidInputError("scene queries need a scene index")
    scored = [(r.image_id, scene_distance(query, r, cfg.alpha)) for r in index.records]
    scored.sort(key=lambda t: (t[1], t[0]))
    return scored[:cfg.topk]


def scene_record(image_id: str, img, cfg: AnalysisConfig = AnalysisConfig(),
                 workers: Optional[int] = None, content_hash: str = "") -> AnalysisRecord:
    res = analyze_scene(img, cfg, workers)
    h, w = res.labels.shape
    return AnalysisRecord(image_id, w, h, vp=res.vp.best, seg=res.labels,
                          params=cfg.to_json(), content_hash=content_hash)


def portrait_record(image_id: str, img, cfg: AnalysisConfig = AnalysisConfig(),
                    content_hash: str = "") -> AnalysisRecord:
    res = analyze_portrait(img, cfg)
    h, w = res.image.shape[:2]
    return AnalysisRecord(image_id, w, h, triangles=res.triangles,
                          segments_count=len(res.segments), params=cfg.to_json(),
                          content_hash=content_hash)


def query_scene(img, index: CompositionIndex, cfg: RetrievalConfig = RetrievalConfig(),
                analysis: AnalysisConfig = AnalysisConfig(),
                workers: Optional[int] = None) -> list[tuple[str, float]]:
    """Analyse ``img`` as a scene and rank the index by ascending ``D``."""
    if index.mode != "scene":
        raise InvalidInputError("scene queries need a scene index")
    if not index.records:
        return []
    return rank_scene(scene_record("<query>", img, analysis, workers), index, cfg)


def query_sketch(query: SketchQuery, index: CompositionIndex,
                 cfg: RetrievalConfig = RetrievalConfig()) -> list[tuple[str, TriangleCandidate]]:
    """Best sketch-matching triangle per image, ranked by continuity ratio."""
    best = []
    for r in index.records:
        hits = match_sketch(query, r.triangles)
        if hits:
            best.append((r.image_id, hits[0]))
    best.sort(key=lambda t: (-t[1].continuity_ratio, t[0]))
    return best[:cfg.topk]


# ---------------------------------------------------------------------------
# building

def content_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def build_index(directory, mode: str, out=None, cfg: AnalysisConfig = AnalysisConfig(),
                workers: Optional[int] = None) -> CompositionIndex:
    """Analyse every image in ``directory`` and (optionally) persist to ``out``.

    With an existing index at ``out`` built under the same parameters,
    images whose content hash is unchanged reuse their stored record.
    Unreadable images are skipped with a warning.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    params = cfg.to_json()
    previous: dict[str, AnalysisRecord] = {}
    if out is not None and (Path(out) / "index.json").is_file():
        try:
            old = CompositionIndex.load(out)
            if old.mode == mode and old.params == params:
                previous = {r.image_id: r for r in old.records}
        except (InvalidInputError, OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable index at %s: %s", out, exc)
    records = []
    for path in list_images(directory):
        image_id = path.name
        digest = content_hash(path)
        old_rec = previous.get(image_id)
        if old_rec is not None and old_rec.content_hash == digest:
            records.append(old_rec)
            continue
        try:
            img = load_image(path)
        except (InvalidInputError, OSError, ValueError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        if mode == "scene":
            records.append(scene_record(image_id, img, cfg, workers, digest))
        else:
            records.append(portrait_record(image_id, img, cfg, digest))
    index = CompositionIndex(mode, records, FORMAT_VERSION, params)
    if out is not None:
        index.save(out)
    return index


def ranking_json(ranking: Sequence[tuple]) -> list[dict]:
    out = []
    for rank, (image_id, value) in enumerate(ranking, start=1):
        if isinstance(value, TriangleCandidate):
            out.append({"rank": rank, "image_id": image_id, "triangle": value.to_json()})
        else:
            out.append({"rank": rank, "image_id": image_id, "distance": float(value)})
    return out
