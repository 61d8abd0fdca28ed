"""Detect line segments and two-sided triangles on a rendered figure."""

from pathlib import Path

import numpy as np

from tricomp.analysis import analyze_portrait
from tricomp.core import save_image
from tricomp.render import emit_overlay
from tricomp.synthetic import render_two_sided_triangle

OUT = Path(__file__).parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    img, truth = render_two_sided_triangle(np.random.default_rng(31), gap_fraction=0.0)
    result = analyze_portrait(img)
    print(f"{len(result.segments)} segments, {len(result.triangles)} triangles")
    print("drawn apex", tuple(round(v) for v in truth.a))
    for t in result.triangles[:3]:
        print(f"  apex ({t.apex.x:.0f}, {t.apex.y:.0f}) opening {t.opening} "
              f"CR {t.continuity_ratio:.2f} TR {t.total_ratio:.2f}")
    save_image(OUT / "figure.png", img)
    save_image(OUT / "figure.lines.png", emit_overlay(img, segments=result.segments))
    save_image(OUT / "figure.triangles.png", emit_overlay(img, triangles=result.triangles[:1]))


if __name__ == "__main__":
    main()
