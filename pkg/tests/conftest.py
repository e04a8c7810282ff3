"""Shared fixtures: small synthetic scenes, a quickly trained offset model,
and an on-disk dataset directory shaped like the CLI expects."""

from __future__ import annotations

import numpy as np
import pytest

from treestereo.hdp_model import (
    GmmModel,
    coarsen_ground_truth,
    collect_offsets,
    train_gmm,
)
from treestereo.raster_io import (
    DisparityMap,
    save_disparity_pgm,
    write_pnm,
)
from treestereo.synthetic import (
    SyntheticScene,
    random_plane_field,
    render_scene,
    three_plane_scene,
)

GT_SCALE = 8  # synthetic scenes here stay under d_max=24, so 8x fits a byte


def train_quick_model(levels: int = 3, n_scenes: int = 6, seed: int = 11) -> GmmModel:
    rng = np.random.default_rng(seed)
    per_level: list[list[np.ndarray]] = [[] for _ in range(levels)]
    for _ in range(n_scenes):
        field = random_plane_field(120, 160, 24, 6, rng)
        gt = DisparityMap(values=field, valid=np.ones(field.shape, dtype=bool))
        layers = coarsen_ground_truth(gt, 2, levels)
        for level in range(levels):
            per_level[level].append(
                collect_offsets(layers[level], layers[level + 1], 2)
            )
    return train_gmm([np.concatenate(c) for c in per_level], 3)


@pytest.fixture(scope="session")
def quick_model() -> GmmModel:
    return train_quick_model()


@pytest.fixture(scope="session")
def small_scene() -> SyntheticScene:
    """A fast 120x160 scene with the same three-plane structure."""
    return three_plane_scene(height=120, width=160, seed=3)


@pytest.fixture(scope="session")
def standard_scene() -> SyntheticScene:
    """The full-size 240x320 scene used by the end-to-end checks."""
    return three_plane_scene(seed=5)


def write_scene_dir(scene: SyntheticScene, directory) -> None:
    """Lay a scene out as <dir>/{view1,view5,disp1,disp5}.pgm|ppm."""
    directory.mkdir(parents=True, exist_ok=True)
    write_pnm(directory / "view1.ppm", scene.pair.left)
    write_pnm(directory / "view5.ppm", scene.pair.right)
    gt_left = DisparityMap(
        values=scene.gt_left.values, valid=scene.gt_left.valid, scale=GT_SCALE
    )
    gt_right = DisparityMap(
        values=scene.gt_right.values, valid=scene.gt_right.valid, scale=GT_SCALE
    )
    save_disparity_pgm(directory / "disp1.pgm", gt_left)
    save_disparity_pgm(directory / "disp5.pgm", gt_right)


@pytest.fixture()
def dataset_dir(tmp_path):
    """Two small scenes in the on-disk layout the CLI discovers."""
    root = tmp_path / "dataset"
    for i, seed in enumerate((3, 4)):
        scene = render_scene(
            random_plane_field(64, 96, 12, 3, np.random.default_rng(seed)),
            d_max=12,
            seed=seed,
            name=f"scene{i}",
        )
        write_scene_dir(scene, root / f"scene{i}")
    return root
