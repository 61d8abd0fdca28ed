"""Index four corridors and query with a fifth.

Two corridors converge on the left, two on the right; the query converges
on the left, so the left pair should come back first.
"""

import tempfile
from pathlib import Path

import numpy as np

from tricomp.core import Point, save_image
from tricomp.retrieval import build_index, query_scene
from tricomp.synthetic import random_corridor


def main():
    rng = np.random.default_rng(2)
    with tempfile.TemporaryDirectory() as tmp:
        images = Path(tmp) / "images"
        images.mkdir()
        for name, x in [("left_a", 110), ("left_b", 140), ("right_a", 360), ("right_b", 390)]:
            img, _, _ = random_corridor(rng, vp=Point(x, 170))
            save_image(images / f"{name}.png", img)
        index = build_index(images, "scene", Path(tmp) / "index", workers=1)
        query, _, _ = random_corridor(rng, vp=Point(125, 160))
        for rank, (image_id, d) in enumerate(query_scene(query, index, workers=1), 1):
            print(f"{rank}. {image_id}  D = {d:.3f}")


if __name__ == "__main__":
    main()
