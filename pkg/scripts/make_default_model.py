#!/usr/bin/env python3
"""Regenerate the packaged offset model (src/treestereo/data/default.gmm).

The model ships with the library so `treestereo match --hdp` works out of the
box; users with a dataset on disk should still prefer `treestereo train-gmm`,
which fits the statistics of their own images.  Training data here is a batch
of seeded random plane scenes, so the output is reproducible byte for byte.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from treestereo.hdp_model import coarsen_ground_truth, collect_offsets, train_gmm
from treestereo.raster_io import DisparityMap
from treestereo.synthetic import random_plane_field

SEED = 20240611
N_SCENES = 40
HEIGHT, WIDTH = 180, 240
D_MAX = 32
BLOCK = 2
LEVELS = 5
COMPONENTS = 3


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    default_out = (
        Path(__file__).resolve().parent.parent
        / "src" / "treestereo" / "data" / "default.gmm"
    )
    parser.add_argument("--out", type=Path, default=default_out)
    args = parser.parse_args()

    rng = np.random.default_rng(SEED)
    per_level: list[list[np.ndarray]] = [[] for _ in range(LEVELS)]
    for _ in range(N_SCENES):
        n_rects = int(rng.integers(3, 9))
        field = random_plane_field(HEIGHT, WIDTH, D_MAX, n_rects, rng)
        gt = DisparityMap(values=field, valid=np.ones(field.shape, dtype=bool))
        layers = coarsen_ground_truth(gt, BLOCK, LEVELS)
        for level in range(LEVELS):
            per_level[level].append(
                collect_offsets(layers[level], layers[level + 1], BLOCK)
            )

    samples = [np.concatenate(chunks) for chunks in per_level]
    model = train_gmm(samples, COMPONENTS)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    model.save(
        args.out,
        comments=(
            f"default packaged model, scripts/make_default_model.py seed={SEED}",
            f"trained on {N_SCENES} random plane scenes, "
            f"{HEIGHT}x{WIDTH}, d_max={D_MAX}, block={BLOCK}",
        ),
    )
    for level, mix in enumerate(model.layers):
        print(
            f"level {level}: n={len(samples[level])} "
            f"pi={np.round(mix.weights, 4).tolist()} "
            f"mu={np.round(mix.means, 4).tolist()} "
            f"sigma={np.round(mix.sigmas, 4).tolist()}"
        )
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
