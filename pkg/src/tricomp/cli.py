"""Command-line entry point.

Exit codes: 0 success, 1 bad input (including usage errors), 2 internal error.
All files are written under ``--out``; the main JSON result is also printed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analysis import AnalysisConfig, analyze_portrait, analyze_scene
from .core import (
    InvalidInputError,
    LineSegment,
    Point,
    Triangle,
    check_labels,
    load_image,
    load_labels,
    resize_canonical,
    save_image,
    save_labels,
    write_json,
)
from .line_segments import LsdConfig, detect_line_segments
from .metrics import (
    precision_recall,
    rand_index,
    segmentation_covering,
    variation_of_information,
    vp_distances,
    vp_success_curve,
)
from .render import contact_sheet, emit_overlay, heat_map
from .retrieval import (
    CompositionIndex,
    RetrievalConfig,
    build_index,
    query_scene,
    query_sketch,
    ranking_json,
)
from .segmentation import SegmentationConfig, boundary_strength, contour_from_gray, segment
from .triangles import RansacConfig, SketchQuery, TriangleCandidate, match_sketch
from .vanishing_point import VpSearchConfig, detect_dominant_vp

log = logging.getLogger("tricomp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument parsing

def _grid(text: str) -> tuple[int, int]:
    try:
        m, n = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 50x33, got {text!r}")
    return m, n


def _point(text: str) -> Point:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"point must look like x,y, got {text!r}")
    return Point(x, y)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="key=value file of flag overrides (flags win)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")


def _seg_flags(p):
    g = p.add_argument_group("segmentation")
    g.add_argument("--lambda", dest="lam", type=float, default=0.6, help="geometric weight share")
    g.add_argument("--delta", dest="stop_delta", type=float, default=0.55, help="merge stopping weight")
    g.add_argument("--regions", dest="target_regions", type=int, default=None,
                   help="also stop once this many regions remain")
    g.add_argument("--overseg-scale", type=float, default=100.0, help="over-segmentation scale")
    g.add_argument("--overseg-min-size", type=int, default=20, help="smallest initial region")
    g.add_argument("--overseg-sigma", type=float, default=0.3, help="pre-smoothing of the over-segmentation")


def _vp_flags(p):
    g = p.add_argument_group("vanishing point")
    g.add_argument("--grid", type=_grid, default=(50, 33), help="search grid, columns x rows")
    g.add_argument("--coarse-to-fine", action="store_true", help="coarse 10x7 pass, then refine")


def _lsd_flags(p):
    g = p.add_argument_group("line segments")
    g.add_argument("--density", type=float, default=0.2, help="rectangle density threshold")
    g.add_argument("--angle-tol", type=float, default=22.5, help="level-line angle tolerance (deg)")
    g.add_argument("--line-alpha", type=float, default=0.5, help="contour confidence filter fraction")
    g.add_argument("--contours", help="grayscale contour map PNG (0-255 -> [0,1])")


def _ransac_flags(p):
    g = p.add_argument_group("triangles")
    g.add_argument("--iterations", type=int, default=2000, help="RANSAC pair budget")
    g.add_argument("--dnb", type=float, default=5.0, help="inlier band half-width (px)")
    g.add_argument("--min-cr", type=float, default=0.1, help="minimum continuity ratio")
    g.add_argument("--min-tr", type=float, default=0.1, help="minimum total ratio")
    g.add_argument("--min-length", type=float, default=10.0, help="shortest usable segment (px)")
    g.add_argument("--match-delta", type=float, default=0.3, help="vertex-distance match threshold")
    g.add_argument("--seed", type=int, default=0, help="RANSAC seed")


def _sketch_flags(p, required: bool):
    p.add_argument("--l1", type=float, required=required, help="first side orientation (deg)")
    p.add_argument("--l2", type=float, required=required, help="second side orientation (deg)")
    p.add_argument("--open", dest="opening", choices=["up", "down", "left", "right"],
                   required=required, help="opening direction")
    p.add_argument("--orient-tol", type=float, default=11.25, help="orientation tolerance (deg)")


def _retrieval_flags(p):
    p.add_argument("--alpha", type=float, default=0.5, help="weight of the VP term")
    p.add_argument("--topk", type=int, default=8, help="results to return")
    p.add_argument("--images", help="image directory for the contact sheet")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    root = _Parser(prog="tricomp", description="Triangle-based composition analysis.",
                   formatter_class=fmt)
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text, *flag_sets):
        p = sub.add_parser(name, help=help_text, formatter_class=fmt)
        for f in flag_sets:
            f(p)
        _common(p)
        return p

    p = cmd("analyze", "full analysis of one image", _seg_flags, _vp_flags, _lsd_flags, _ransac_flags)
    p.add_argument("image")
    p.add_argument("--mode", choices=["scene", "portrait"], default="scene",
                   help="scene: vanishing point and segmentation; portrait: lines and triangles")

    p = cmd("segment", "segmentation around a vanishing point", _seg_flags, _vp_flags)
    p.add_argument("image")
    p.add_argument("--vp", type=_point, help="pole x,y (detected when omitted)")
    p.add_argument("--labels", help="initial over-segmentation (16-bit PNG)")
    p.add_argument("--contours", help="boundary map PNG used as photometric strength")

    p = cmd("vp", "dominant vanishing point", _seg_flags, _vp_flags)
    p.add_argument("image")

    p = cmd("lines", "line segment detection", _lsd_flags)
    p.add_argument("image")

    p = cmd("triangles", "triangle detection", _lsd_flags, _ransac_flags)
    p.add_argument("image")
    _sketch_flags(p, required=False)

    p_index = sub.add_parser("index", help="composition index")
    isub = p_index.add_subparsers(dest="action", required=True, parser_class=_Parser)
    p = isub.add_parser("build", help="analyse a directory", formatter_class=fmt)
    p.add_argument("directory")
    p.add_argument("--mode", choices=["scene", "portrait"], default="scene",
                   help="scene records for scene queries, portrait records for sketch queries")
    for f in (_seg_flags, _vp_flags, _lsd_flags, _ransac_flags, _common):
        f(p)

    p_query = sub.add_parser("query", help="query an index")
    qsub = p_query.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    p = qsub.add_parser("scene", help="rank scenes by composition", formatter_class=fmt)
    p.add_argument("image")
    p.add_argument("--index", required=True)
    for f in (_retrieval_flags, _seg_flags, _vp_flags, _common):
        f(p)
    p = qsub.add_parser("sketch", help="rank portraits by a sketched angle", formatter_class=fmt)
    p.add_argument("--index", required=True)
    _sketch_flags(p, required=True)
    _retrieval_flags(p)
    _common(p)
    p.set_defaults(topk=20)

    p = cmd("eval", "benchmark metrics")
    p.add_argument("kind", choices=["seg", "vp", "triangles"])
    p.add_argument("--pred", required=True, help="label PNG / VP JSON / triangle JSON")
    p.add_argument("--gt", required=True, help="ground truth in the same format")
    p.add_argument("--thresholds", default="5,10,15,20,25,30", help="VP distance thresholds (px)")
    p.add_argument("--match-delta", type=float, default=0.3, help="vertex-distance match threshold")
    return root


# ---------------------------------------------------------------------------
# config files

def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys are long flag names."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("_", "-")] = value.strip("\"'")
    return out


def _command_depth(argv: Sequence[str]) -> int:
    if argv and argv[0] in ("index", "query"):
        return 2
    return 1


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for k, a in enumerate(argv):
        if a == "--config" and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _leaf_parser(root: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.ArgumentParser:
    p = root
    for tok in argv[:_command_depth(argv)]:
        subs = [a for a in p._actions if isinstance(a, argparse._SubParsersAction)]
        if not subs or tok not in subs[0].choices:
            return p
        p = subs[0].choices[tok]
    return p


def expand_config(root: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Splice config-file values in front of the user's flags so flags win."""
    path = _config_path(argv)
    if path is None:
        return argv
    leaf = _leaf_parser(root, argv)
    known = leaf._option_string_actions
    extra = []
    for key, value in read_config(path).items():
        opt = f"--{key}"
        action = known.get(opt)
        if action is None:
            log.warning("config key %r does not apply to this command; ignored", key)
            continue
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                extra.append(opt)
        else:
            extra += [opt, value]
    depth = _command_depth(argv)
    return argv[:depth] + extra + argv[depth:]


def _analysis_config(a) -> AnalysisConfig:
    kw = {}
    if hasattr(a, "lam"):
        kw["seg"] = SegmentationConfig(lam=a.lam, stop_delta=a.stop_delta,
                                       target_regions=a.target_regions,
                                       overseg_min_size=a.overseg_min_size,
                                       overseg_scale=a.overseg_scale,
                                       overseg_sigma=a.overseg_sigma)
    if hasattr(a, "grid"):
        kw["vp"] = VpSearchConfig(grid_cols=a.grid[0], grid_rows=a.grid[1],
                                  coarse_to_fine=a.coarse_to_fine)
    if hasattr(a, "density"):
        kw["lsd"] = LsdConfig(angle_tolerance=a.angle_tol, density_threshold=a.density,
                              alpha=a.line_alpha)
    if hasattr(a, "iterations"):
        kw["ransac"] = RansacConfig(iterations=a.iterations, d_nb=a.dnb, min_cr=a.min_cr,
                                    min_tr=a.min_tr, rng_seed=a.seed, min_length=a.min_length,
                                    nms_delta=a.match_delta)
    return AnalysisConfig(**kw)


def _sketch(a) -> Optional[SketchQuery]:
    given = [a.l1 is not None, a.l2 is not None, a.opening is not None]
    if not any(given):
        return None
    if not all(given):
        raise InvalidInputError("a sketch needs --l1, --l2 and --open together")
    return SketchQuery(a.l1 % 180.0, a.l2 % 180.0, a.opening, a.orient_tol)


# ---------------------------------------------------------------------------
# commands

def _emit(out: Path, name: str, obj) -> None:
    write_json(out / name, obj)
    print(json.dumps(obj, indent=2, sort_keys=True))


def _contours(path: Optional[str], shape) -> Optional[np.ndarray]:
    if path is None:
        return None
    from PIL import Image
    try:
        with Image.open(path) as im:
            gray = np.asarray(im.convert("L"))
    except OSError as exc:
        raise InvalidInputError(f"cannot read contour map {path}: {exc}") from exc
    if gray.shape != tuple(shape):
        gray = np.asarray(Image.fromarray(gray).resize((shape[1], shape[0]), Image.BILINEAR))
    return contour_from_gray(gray)


def _segments_json(segs: Sequence[LineSegment]) -> list[dict]:
    return [{"p0": s.p0.to_json(), "p1": s.p1.to_json(), "confidence": s.confidence} for s in segs]


def cmd_vp(a, out: Path, cfg: AnalysisConfig, stem: str) -> None:
    img = resize_canonical(load_image(a.image))
    res = detect_dominant_vp(img, cfg.vp, cfg.seg)
    h, w = img.shape[:2]
    save_image(out / f"{stem}.vp_heat.png", heat_map(res.scores, (w, h)))
    save_image(out / f"{stem}.vp.png", emit_overlay(img, vp=res.best))
    _emit(out, f"{stem}.vp.json", res.to_json())


def cmd_segment(a, out: Path, cfg: AnalysisConfig, stem: str) -> None:
    img = resize_canonical(load_image(a.image))
    h, w = img.shape[:2]
    overseg = None
    if a.labels:
        overseg = check_labels(load_labels(a.labels))
        if overseg.shape != (h, w):
            raise InvalidInputError("label map must match the rescaled image size")
    strength = _contours(a.contours, (h, w))
    if strength is None:
        strength = boundary_strength(img)
    pole = a.vp
    if pole is None:
        pole = detect_dominant_vp(img, cfg.vp, cfg.seg, overseg, strength).best
    labels, _ = segment(img, pole, cfg.seg, strength, overseg)
    save_labels(out / f"{stem}.labels.png", labels)
    save_image(out / f"{stem}.segment.png", emit_overlay(img, labels=labels, vp=pole))
    _emit(out, f"{stem}.segment.json", {"lambda": cfg.seg.lam, "stop_delta": cfg.seg.stop_delta,
                                        "num_regions": int(labels.max()) + 1, "vp": pole.to_json()})


def cmd_lines(a, out: Path, cfg: AnalysisConfig, stem: str) -> None:
    img = resize_canonical(load_image(a.image))
    segs = detect_line_segments(img, cfg.lsd, _contours(a.contours, img.shape[:2]))
    save_image(out / f"{stem}.lines.png", emit_overlay(img, segments=segs))
    _emit(out, f"{stem}.lines.json", _segments_json(segs))


def cmd_triangles(a, out: Path, cfg: AnalysisConfig, stem: str) -> None:
    img = resize_canonical(load_image(a.image))
    res = analyze_portrait(img, cfg, _contours(a.contours, img.shape[:2]))
    tris = res.triangles
    query = _sketch(a)
    if query is not None:
        tris = match_sketch(query, tris)
    for k, t in enumerate(tris[:20]):
        save_image(out / f"{stem}.triangle{k:02d}.png", emit_overlay(img, triangles=[t]))
    _emit(out, f"{stem}.triangles.json", [t.to_json() for t in tris])


def cmd_analyze(a, out: Path, cfg: AnalysisConfig, stem: str) -> None:
    if a.mode == "portrait":
        res = analyze_portrait(load_image(a.image), cfg, None)
        save_image(out / f"{stem}.analysis.png",
                   emit_overlay(res.image, triangles=res.triangles[:1], segments=res.segments))
        obj = {"mode": "portrait", "segments": _segments_json(res.segments),
               "triangles": [t.to_json() for t in res.triangles], "params": cfg.to_json()}
    else:
        res = analyze_scene(load_image(a.image), cfg)
        save_labels(out / f"{stem}.labels.png", res.labels)
        save_image(out / f"{stem}.analysis.png",
                   emit_overlay(res.image, labels=res.labels, vp=res.vp.best))
        obj = {"mode": "scene", "vp": res.vp.to_json(), "num_regions": int(res.labels.max()) + 1,
               "params": cfg.to_json()}
    _emit(out, f"{stem}.analysis.json", obj)


def cmd_index(a, out: Path, cfg: AnalysisConfig) -> None:
    index = build_index(a.directory, a.mode, out, cfg)
    print(json.dumps({"mode": index.mode, "records": len(index), "out": str(out)}, sort_keys=True))


def _sheet(a, out: Path, ranking, name: str) -> None:
    if not a.images or not ranking:
        return
    tiles = []
    for image_id, value in ranking:
        img = resize_canonical(load_image(Path(a.images) / image_id))
        tri = [value] if isinstance(value, TriangleCandidate) else []
        tiles.append(emit_overlay(img, triangles=tri))
    save_image(out / name, contact_sheet(tiles))


def cmd_query(a, out: Path, cfg: AnalysisConfig) -> None:
    index = CompositionIndex.load(a.index)
    rcfg = RetrievalConfig(alpha=a.alpha, topk=a.topk)
    if a.kind == "scene":
        ranking = query_scene(load_image(a.image), index, rcfg, cfg)
        name = f"{Path(a.image).stem}.query"
    else:
        ranking = query_sketch(_sketch(a), index, rcfg)
        name = "sketch.query"
    _sheet(a, out, ranking, f"{name}.png")
    _emit(out, f"{name}.json", ranking_json(ranking))


def _load_vp_json(path) -> dict[str, Point]:
    d = json.loads(Path(path).read_text())
    if isinstance(d, dict) and "vp" in d and isinstance(d["vp"], dict):
        return {"_": Point.from_json(d["vp"])}
    if isinstance(d, dict):
        return {k: Point.from_json(v["vp"] if "vp" in v else v) for k, v in d.items()}
    raise InvalidInputError(f"{path}: expected an object of id -> {{x, y}}")


def _as_point(p) -> Point:
    return Point.from_json(p) if isinstance(p, dict) else Point(float(p[0]), float(p[1]))


def _load_triangles(path) -> list:
    items = json.loads(Path(path).read_text())
    out = []
    for t in items:
        if isinstance(t, dict) and "apex" in t:
            out.append(TriangleCandidate.from_json(t))
        elif isinstance(t, dict):
            out.append(Triangle(*(_as_point(t[k]) for k in ("a", "b", "c"))))
        else:
            out.append(Triangle(*(_as_point(p) for p in t)))
    return out


def cmd_eval(a, out: Path) -> None:
    if a.kind == "seg":
        s1, s2 = load_labels(a.pred), load_labels(a.gt)
        obj = {"rand_index": rand_index(s1, s2), "voi": variation_of_information(s1, s2),
               "covering": segmentation_covering(s2, s1)}
    elif a.kind == "vp":
        pred, gt = _load_vp_json(a.pred), _load_vp_json(a.gt)
        ids = sorted(set(pred) & set(gt))
        if not ids:
            raise InvalidInputError("no image ids in common between prediction and ground truth")
        ts = [float(t) for t in a.thresholds.split(",")]
        d = vp_distances([pred[i] for i in ids], [gt[i] for i in ids])
        curve = vp_success_curve([pred[i] for i in ids], [gt[i] for i in ids], ts)
        obj = {"count": len(ids), "distances": {i: float(v) for i, v in zip(ids, d)},
               "success": [{"t": t, "rate": float(r)} for t, r in zip(ts, curve)]}
    else:
        pred = _load_triangles(a.pred)
        gt = [t.triangle if isinstance(t, TriangleCandidate) else t for t in _load_triangles(a.gt)]
        p, r = precision_recall(gt, pred, a.match_delta)
        obj = {"precision": p, "recall": r, "candidates": len(pred), "ground_truth": len(gt)}
    _emit(out, f"eval.{a.kind}.json", obj)


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(expand_config(parser, argv))
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "eval":
            cmd_eval(args, out)
            return 0
        cfg = _analysis_config(args)
        if args.command == "index":
            cmd_index(args, out, cfg)
        elif args.command == "query":
            cmd_query(args, out, cfg)
        else:
            stem = Path(args.image).stem
            {"vp": cmd_vp, "segment": cmd_segment, "lines": cmd_lines,
             "triangles": cmd_triangles, "analyze": cmd_analyze}[args.command](args, out, cfg, stem)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        _leaf_parser(parser, argv).print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (InvalidInputError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"tricomp: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"tricomp: internal error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
