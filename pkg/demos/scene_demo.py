"""Render a synthetic corridor, locate its vanishing point and segment it.

Writes the input, the score heat map and the segmentation overlay to
demos/out/.
"""

from pathlib import Path

import numpy as np

from tricomp.analysis import analyze_scene
from tricomp.core import Point, save_image
from tricomp.render import emit_overlay, heat_map
from tricomp.synthetic import random_corridor

OUT = Path(__file__).parent / "out"


def main():
    OUT.mkdir(exist_ok=True)
    img, _, truth = random_corridor(np.random.default_rng(3), vp=Point(310, 140))
    result = analyze_scene(img, workers=1)
    found = result.vp.best
    print(f"true vanishing point ({truth.x:.0f}, {truth.y:.0f}), "
          f"found ({found.x:.0f}, {found.y:.0f}), {int(result.labels.max()) + 1} regions")
    save_image(OUT / "corridor.png", img)
    save_image(OUT / "corridor.heat.png", heat_map(result.vp.scores, (500, 330)))
    save_image(OUT / "corridor.overlay.png", emit_overlay(img, vp=found, labels=result.labels))


if __name__ == "__main__":
    main()
