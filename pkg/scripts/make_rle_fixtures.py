"""Freeze RLE reference fixtures with pycocotools, an independent encoder.

Run once; the output is committed under tests/fixtures so the test suite does
not need pycocotools installed.

    python3 scripts/make_rle_fixtures.py tests/fixtures/rle_reference.json
"""
import json
import sys

import numpy as np
from pycocotools import mask as mask_utils


def cases(rng):
    yield "all_background_4x4", np.zeros((4, 4), np.uint8)
    yield "all_foreground_4x4", np.ones((4, 4), np.uint8)
    yield "single_pixel_1x1_on", np.ones((1, 1), np.uint8)
    yield "single_pixel_1x1_off", np.zeros((1, 1), np.uint8)
    runs = np.zeros(16, np.uint8)
    runs[6:10] = 1
    yield "runs_6_4_6", runs.reshape(4, 4, order="F")
    yield "checkerboard_2x2", np.array([[1, 0], [0, 1]], np.uint8)
    yield "stripes_2x2", np.array([[0, 0], [1, 1]], np.uint8)
    big = np.zeros((256, 256), np.uint8)
    big[100:200, 30:220] = 1
    yield "large_runs_256", big
    tall = np.zeros((300, 7), np.uint8)
    tall[:, 3] = 1
    tall[5:290, 5] = 1
    yield "tall_columns", tall
    for i in range(40):
        h, w = int(rng.integers(1, 120)), int(rng.integers(1, 120))
        p = float(rng.choice([0.02, 0.3, 0.5, 0.9, 0.995]))
        yield f"random_{i:02d}", (rng.random((h, w)) < p).astype(np.uint8)
    for i in range(4):
        yield f"random_256_{i}", (rng.random((256, 256)) < 0.5).astype(np.uint8)


def main(out):
    rng = np.random.default_rng(20240101)
    fixtures = []
    for name, m in cases(rng):
        rle = mask_utils.encode(np.asfortranarray(m))
        fixtures.append(
            {
                "name": name,
                "size": [int(v) for v in rle["size"]],
                "counts": rle["counts"].decode("ascii"),
                "area": int(mask_utils.area(rle)),
                "bits_row_major_hex": np.packbits(m.astype(bool).ravel()).tobytes().hex(),
            }
        )
    with open(out, "w") as fh:
        json.dump({"generator": "pycocotools.mask.encode", "cases": fixtures}, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/rle_reference.json")
