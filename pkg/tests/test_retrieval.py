import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tricomp import retrieval
from tricomp.analysis import AnalysisConfig
from tricomp.core import InvalidInputError, Point, load_image, save_image
from tricomp.metrics import rand_index
from tricomp.retrieval import (
    CANONICAL_DIAGONAL,
    AnalysisRecord,
    CompositionIndex,
    RetrievalConfig,
    build_index,
    query_scene,
    query_sketch,
    rank_scene,
    resample_labels,
    scene_distance,
)
from tricomp.synthetic import random_corridor
from tricomp.triangles import RansacConfig, SketchQuery, TriangleCandidate
from tricomp.vanishing_point import VpSearchConfig

FAST = AnalysisConfig(vp=VpSearchConfig(10, 7))


def scene(image_id, vp, seg):
    h, w = seg.shape
    return AnalysisRecord(image_id, w, h, vp=Point(*vp), seg=np.asarray(seg))


def halves(split, w=500, h=330):
    seg = np.zeros((h, w), np.int64)
    seg[:, split:] = 1
    return seg


def tri(cr, opening="up", apex=(100, 200)):
    # sides at 0 and 90 degrees from the apex
    ax, ay = apex
    v2 = (ax, ay - 100) if opening == "up" else (ax, ay + 100)
    return TriangleCandidate(Point(ax, ay), Point(ax + 150, ay), Point(*v2), cr, 0.2, opening)


def portrait(image_id, triangles):
    return AnalysisRecord(image_id, 330, 500, triangles=list(triangles))


class TestSceneDistance:
    def test_self_is_zero(self):
        r = scene("a", (120, 80), halves(200))
        assert scene_distance(r, r) == 0.0

    def test_worked_example(self, monkeypatch):
        monkeypatch.setattr(retrieval, "rand_index", lambda a, b: 0.8)
        a = scene("a", (0, 0), halves(10))
        b = scene("b", (0.1 * CANONICAL_DIAGONAL, 0), halves(10))
        assert scene_distance(a, b, 0.5) == pytest.approx(0.25, abs=1e-12)

    def test_composition_of_terms(self):
        a = scene("a", (100, 100), halves(100))
        b = scene("b", (400, 250), halves(300))
        ri = rand_index(resample_labels(a.seg), resample_labels(b.seg))
        vp = math.hypot(300, 150) / math.hypot(500, 330)
        assert scene_distance(a, b, 0.7) == pytest.approx(1 - ri + 0.7 * vp)

    def test_needs_scene_records(self):
        with pytest.raises(InvalidInputError):
            scene_distance(portrait("p", []), scene("a", (1, 1), halves(5)))

    @given(st.integers(1, 499), st.integers(1, 499), st.floats(0, 500), st.floats(0, 500),
           st.floats(0, 2))
    def test_symmetric(self, s1, s2, x1, x2, alpha):
        a = scene("a", (x1, 50), halves(s1))
        b = scene("b", (x2, 200), halves(s2))
        assert scene_distance(a, b, alpha) == scene_distance(b, a, alpha)
        assert scene_distance(a, b, alpha) >= 0.0

    def test_different_shapes_compared_on_common_grid(self):
        a = scene("a", (10, 10), halves(250))
        b = scene("b", (10, 10), halves(165, w=330, h=500))
        assert 0.0 <= scene_distance(a, b) <= 1.0

    def test_resample_nearest(self):
        seg = np.arange(4).reshape(2, 2)
        assert resample_labels(seg, (4, 4)).tolist() == [[0, 0, 1, 1], [0, 0, 1, 1],
                                                         [2, 2, 3, 3], [2, 2, 3, 3]]


class TestRanking:
    def records(self):
        return [scene(f"s{i}", (50 * i + 20, 150), halves(50 * i + 25)) for i in range(8)]

    def test_ascending_with_self_first(self):
        recs = self.records()
        idx = CompositionIndex("scene", recs)
        ranked = rank_scene(recs[3], idx, RetrievalConfig(topk=8))
        assert ranked[0] == ("s3", 0.0)
        ds = [d for _, d in ranked]
        assert ds == sorted(ds)

    def test_topk_clamps_to_index_size(self):
        idx = CompositionIndex("scene", self.records()[:3])
        assert len(rank_scene(idx.records[0], idx, RetrievalConfig(topk=50))) == 3

    def test_topk_truncates(self):
        idx = CompositionIndex("scene", self.records())
        assert len(rank_scene(idx.records[0], idx, RetrievalConfig(topk=2))) == 2

    @given(st.permutations(range(8)))
    def test_order_invariant(self, perm):
        recs = self.records()
        ref = rank_scene(recs[0], CompositionIndex("scene", recs))
        shuffled = CompositionIndex("scene", [recs[i] for i in perm])
        assert rank_scene(recs[0], shuffled) == ref

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            RetrievalConfig(topk=0)
        with pytest.raises(InvalidInputError):
            RetrievalConfig(alpha=-1)


class TestSketchQueries:
    def test_single_match(self):
        idx = CompositionIndex("portrait", [portrait("p", [tri(0.7)])])
        out = query_sketch(SketchQuery(0, 90, "up"), idx)
        assert [i for i, _ in out] == ["p"]

    def test_opening_filter(self):
        idx = CompositionIndex("portrait", [portrait("p", [tri(0.7)]), portrait("q", [tri(0.9)])])
        assert query_sketch(SketchQuery(0, 90, "left"), idx) == []

    def test_ranked_by_continuity(self):
        recs = [portrait(f"p{i}", [tri(cr)]) for i, cr in enumerate([0.6, 0.9, 0.7])]
        out = query_sketch(SketchQuery(0, 90, "up"), CompositionIndex("portrait", recs))
        assert [c.continuity_ratio for _, c in out] == [0.9, 0.7, 0.6]

    def test_best_candidate_per_image(self):
        recs = [portrait("p", [tri(0.3), tri(0.8, apex=(120, 210)), tri(0.9, "down")])]
        out = query_sketch(SketchQuery(0, 90, "up"), CompositionIndex("portrait", recs))
        assert len(out) == 1 and out[0][1].continuity_ratio == 0.8


class TestIndexFile:
    def test_round_trip(self, tmp_path, rng):
        recs = [scene(f"img{i}.png", rng.uniform(0, 300, 2),
                      rng.integers(0, 5, (33, 50))) for i in range(3)]
        recs[0].params = {"seg": {"lam": 0.6}}
        recs[1].content_hash = "abc"
        idx = CompositionIndex("scene", recs, params={"x": 1})
        idx.save(tmp_path / "ix")
        back = CompositionIndex.load(tmp_path / "ix")
        assert back.mode == "scene" and back.params == {"x": 1}
        for a, b in zip(recs, back.records):
            assert a.to_json() == b.to_json()
            assert np.array_equal(a.seg, b.seg)

    def test_portrait_round_trip(self, tmp_path):
        idx = CompositionIndex("portrait", [portrait("p.png", [tri(0.5), tri(0.25, "down")])])
        idx.save(tmp_path)
        back = CompositionIndex.load(tmp_path)
        assert back.records[0].triangles == idx.records[0].triangles

    def test_duplicate_ids_rejected(self):
        with pytest.raises(InvalidInputError):
            CompositionIndex("portrait", [portrait("a", []), portrait("a", [])])

    def test_scene_index_requires_scene_records(self):
        with pytest.raises(InvalidInputError):
            CompositionIndex("scene", [portrait("a", [])])

    def test_missing_index(self, tmp_path):
        with pytest.raises(InvalidInputError):
            CompositionIndex.load(tmp_path)

    def test_version_checked(self, tmp_path):
        CompositionIndex("portrait").save(tmp_path)
        manifest = json.loads((tmp_path / "index.json").read_text())
        manifest["version"] = 99
        (tmp_path / "index.json").write_text(json.dumps(manifest))
        with pytest.raises(InvalidInputError):
            CompositionIndex.load(tmp_path)


def snapshot(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file() and p.name != ".lock"}


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    rng = np.random.default_rng(404)
    for i, x in enumerate([150, 160, 350]):
        img, _, _ = random_corridor(rng, vp=Point(x, 165))
        save_image(d / f"c{i}.png", img)
    return d


@pytest.fixture(scope="module")
def built(scene_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("index")
    return build_index(scene_dir, "scene", out, FAST, workers=1), out


class TestBuild:
    def test_empty_directory(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        idx = build_index(tmp_path / "imgs", "scene", tmp_path / "ix")
        assert len(idx) == 0
        assert CompositionIndex.load(tmp_path / "ix").records == []

    def test_records_populated(self, built):
        idx, _ = built
        assert [r.image_id for r in idx.records] == ["c0.png", "c1.png", "c2.png"]
        assert all(r.is_scene and r.content_hash for r in idx.records)

    def test_rebuild_is_byte_identical_and_reuses_records(self, built, scene_dir, monkeypatch):
        _, out = built
        before = snapshot(out)

        def fail(*args, **kwargs):
            raise AssertionError("unchanged image was re-analysed")

        monkeypatch.setattr(retrieval, "scene_record", fail)
        build_index(scene_dir, "scene", out, FAST, workers=1)
        assert snapshot(out) == before

    def test_self_query_ranks_first(self, built, scene_dir):
        idx, _ = built
        ranked = query_scene(load_image(scene_dir / "c0.png"), idx, analysis=FAST, workers=1)
        assert ranked[0] == ("c0.png", 0.0)

    def test_corrupt_image_skipped(self, tmp_path, scene_dir, caplog):
        d = tmp_path / "mixed"
        d.mkdir()
        (d / "broken.png").write_bytes(b"not an image")
        (d / "good.png").write_bytes((scene_dir / "c0.png").read_bytes())
        idx = build_index(d, "portrait", None, FAST)
        assert [r.image_id for r in idx.records] == ["good.png"]
        assert "broken.png" in caplog.text

    def test_changed_parameters_force_reanalysis(self, tmp_path, scene_dir, monkeypatch):
        d = tmp_path / "one"
        d.mkdir()
        (d / "a.png").write_bytes((scene_dir / "c2.png").read_bytes())
        build_index(d, "portrait", tmp_path / "ix", FAST)
        calls = []
        real = retrieval.portrait_record
        monkeypatch.setattr(retrieval, "portrait_record",
                            lambda *a, **k: calls.append(a[0]) or real(*a, **k))
        build_index(d, "portrait", tmp_path / "ix", FAST)
        assert calls == []
        changed = AnalysisConfig(vp=FAST.vp, ransac=RansacConfig(min_tr=0.2))
        idx = build_index(d, "portrait", tmp_path / "ix", changed)
        assert calls == ["a.png"]
        assert CompositionIndex.load(tmp_path / "ix").params["ransac"]["min_tr"] == 0.2
        assert idx.params == changed.to_json()

    def test_stale_records_removed(self, tmp_path, scene_dir):
        d = tmp_path / "two"
        d.mkdir()
        for name in ("a.png", "b.png"):
            (d / name).write_bytes((scene_dir / "c1.png").read_bytes())
        build_index(d, "portrait", tmp_path / "ix", FAST)
        (d / "b.png").unlink()
        build_index(d, "portrait", tmp_path / "ix", FAST)
        assert sorted(p.name for p in (tmp_path / "ix" / "records").iterdir()) == ["a.png.json"]

    def test_bad_mode(self, tmp_path):
        with pytest.raises(InvalidInputError):
            build_index(tmp_path, "landscape")
