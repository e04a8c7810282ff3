"""Synthetic random-dot stereo scenes with exact ground truth.

A scene is a piecewise-constant disparity field (a background plane plus
axis-aligned rectangles floating in front).  The left view mixes a per-plane
base colour with independent uniform RGB noise; the right view is rendered
by shifting each left pixel (r, c) to (r, c - d).  Where several source
pixels land on the same right pixel the largest disparity wins (it is
nearest to the camera), and the losers are exactly the occluded pixels, so
the occlusion mask comes out analytically rather than by heuristics.  Right
pixels no source pixel reaches (newly exposed regions) receive fresh noise.

The base colours matter: pure per-pixel noise averages towards flat gray a
few pyramid octaves up, so a coarsened pair would carry no information about
where one surface ends and the next begins.  Natural images keep structure
across scales; the colour term reproduces that while the noise term keeps
every window unique along its epipolar line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .raster_io import DisparityMap, RasterImage, StereoPair


@dataclass(frozen=True)
class SyntheticScene:
    pair: StereoPair
    gt_left: DisparityMap
    gt_right: DisparityMap
    occlusion: np.ndarray  # (H, W) bool, True where the left pixel is hidden


def plane_field(
    height: int,
    width: int,
    background: int,
    rects: list[tuple[int, int, int, int, int]],
) -> np.ndarray:
    """Disparity field: background plane plus (r0, c0, r1, c1, d) rectangles."""
    if background < 0:
        raise ConfigError("background disparity must be >= 0")
    field = np.full((height, width), background, dtype=np.int32)
    for r0, c0, r1, c1, d in rects:
        if not (0 <= r0 < r1 <= height and 0 <= c0 < c1 <= width) or d < 0:
            raise ConfigError(f"bad rectangle {(r0, c0, r1, c1, d)}")
        field[r0:r1, c0:c1] = d
    return field


def render_scene(
    disparity: np.ndarray,
    d_max: int,
    seed: int = 0,
    channels: int = 3,
    name: str = "synthetic",
    noise_weight: float = 0.5,
) -> SyntheticScene:
    """Render a random-dot pair realizing the given disparity field.

    Each distinct disparity value gets its own base colour; `noise_weight`
    sets how much per-pixel noise is mixed on top (1.0 = classic random-dot
    pair with no coarse-scale structure at all).
    """
    disparity = np.asarray(disparity, dtype=np.int32)
    h, w = disparity.shape
    if disparity.min() < 0 or disparity.max() > d_max:
        raise ConfigError(
            f"disparity field spans [{disparity.min()}, {disparity.max()}], "
            f"outside [0, {d_max}]"
        )
    if not 0.0 < noise_weight <= 1.0:
        raise ConfigError("noise_weight must be in (0, 1]")
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(d_max + 1, channels)).astype(np.float64)

    def paint(noise: np.ndarray, plane: np.ndarray) -> np.ndarray:
        mixed = (1.0 - noise_weight) * base[plane] + noise_weight * noise
        return np.clip(np.rint(mixed), 0, 255).astype(np.uint8)

    left = paint(rng.uniform(0.0, 255.0, size=(h, w, channels)), disparity)
    # holes keep plain noise: nothing in the left view maps onto them anyway
    right = rng.uniform(0.0, 255.0, size=(h, w, channels))
    right = np.clip(np.rint(right), 0, 255).astype(np.uint8)

    winner_col = np.full((h, w), -1, dtype=np.int64)
    winner_d = np.full((h, w), -1, dtype=np.int32)
    rows_idx, cols_idx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for d in np.unique(disparity).tolist():  # ascending: nearer planes overwrite
        on = disparity == d
        src_r, src_c = rows_idx[on], cols_idx[on]
        dst_c = src_c - d
        ok = dst_c >= 0
        right[src_r[ok], dst_c[ok]] = left[src_r[ok], src_c[ok]]
        winner_col[src_r[ok], dst_c[ok]] = src_c[ok]
        winner_d[src_r[ok], dst_c[ok]] = d

    target = cols_idx - disparity
    inside = target >= 0
    safe = np.maximum(target, 0)
    occluded = ~inside | (winner_col[rows_idx, safe] != cols_idx)

    gt_left = DisparityMap(values=disparity.copy(), valid=np.ones((h, w), dtype=bool))
    gt_right = DisparityMap(
        values=np.where(winner_d >= 0, winner_d, 0), valid=winner_d >= 0
    )
    pair = StereoPair(
        left=RasterImage(left), right=RasterImage(right), d_max=d_max, name=name
    )
    return SyntheticScene(pair=pair, gt_left=gt_left, gt_right=gt_right,
                          occlusion=occluded)


def three_plane_scene(
    height: int = 240,
    width: int = 320,
    seed: int = 0,
    disparities: tuple[int, int, int] = (8, 16, 24),
    align: int = 8,
) -> SyntheticScene:
    """The standard test scene: a background plane and two floating rectangles.

    Corners snap to multiples of `align` so a pyramid coarsened by that
    factor never produces cells straddling two planes; set align=1 to get
    deliberately misaligned boundaries instead.
    """
    back, mid, front = disparities

    def snap(x: int) -> int:
        return (x // align) * align

    field = plane_field(
        height,
        width,
        background=back,
        rects=[
            (snap(height // 6), snap(width // 8),
             snap(height // 2), snap(width // 2), mid),
            (snap(height // 2 + 16), snap(width // 2 + 8),
             snap(5 * height // 6), snap(7 * width // 8), front),
        ],
    )
    return render_scene(field, d_max=max(disparities), seed=seed, name="three-plane")


def random_plane_field(
    height: int, width: int, d_max: int, n_rects: int, rng: np.random.Generator
) -> np.ndarray:
    """A random piecewise-constant field for offset-model training scenes."""
    field = plane_field(height, width, background=int(rng.integers(0, d_max // 3 + 1)), rects=[])
    for _ in range(n_rects):
        r0 = int(rng.integers(0, height - 8))
        c0 = int(rng.integers(0, width - 8))
        r1 = int(rng.integers(r0 + 8, min(r0 + height // 2, height) + 1))
        c1 = int(rng.integers(c0 + 8, min(c0 + width // 2, width) + 1))
        d = int(rng.integers(0, d_max + 1))
        field[r0:r1, c0:c1] = d
    return field
