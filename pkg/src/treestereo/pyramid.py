"""Coarse-to-fine image pyramid built by block averaging.

Each coarser layer collapses ``block_size`` x ``block_size`` pixel blocks of
the layer below into one pixel whose intensity is the plain mean of the
covered samples; border blocks that hang over the edge average only the
pixels they actually cover.  Dimensions round up (ceil) and the disparity
bound shrinks by floor division, so a pixel at level l+1 corresponds to the
block of level-l pixels at (row*S .. row*S+S-1, col*S .. col*S+S-1).

Intensities are kept as float64 throughout: re-quantizing every level back
to 8 bits would feed compounding rounding error into the edge weights of the
coarse graphs, where a single gray-level step already moves tree topology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError
from .raster_io import RasterImage, StereoPair


@dataclass(frozen=True)
class PyramidLayer:
    """One pyramid level: float64 intensities in [0, 255] plus its disparity bound."""

    level: int
    intensities: np.ndarray  # (H, W, C) float64
    d_max: int

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def channels(self) -> int:
        return self.intensities.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.intensities.shape[0] * self.intensities.shape[1]


@dataclass(frozen=True)
class PyramidPair:
    """Per-eye pyramids of equal depth and matching per-level geometry."""

    left: tuple[PyramidLayer, ...]
    right: tuple[PyramidLayer, ...]

    @property
    def levels(self) -> int:
        return len(self.left) - 1


def block_mean(values: np.ndarray, block_size: int) -> np.ndarray:
    """Average (H, W, C) samples over block_size x block_size tiles.

    Partial tiles at the right/bottom borders average only the covered
    samples, so a lone border column contributes its own mean unchanged.
    """
    h, w = values.shape[:2]
    row_idx = np.arange(0, h, block_size)
    col_idx = np.arange(0, w, block_size)
    sums = np.add.reduceat(np.add.reduceat(values, row_idx, axis=0), col_idx, axis=1)
    row_counts = np.diff(np.append(row_idx, h))
    col_counts = np.diff(np.append(col_idx, w))
    counts = row_counts[:, None] * col_counts[None, :]
    return sums / counts[:, :, None]


def build_pyramid(
    image: RasterImage, d_max: int, block_size: int = 2, levels: int = 3
) -> tuple[PyramidLayer, ...]:
    """Build levels 0..levels, level 0 being the source image itself.

    Raises ConfigError if the coarsest disparity bound collapses to zero,
    which would leave the top layer nothing to match.
    """
    if block_size < 2:
        raise ConfigError(f"block_size must be >= 2, got {block_size}")
    if levels < 1:
        raise ConfigError(f"levels must be >= 1, got {levels}")
    if d_max // block_size**levels < 1:
        raise ConfigError(
            f"d_max={d_max} collapses to {d_max // block_size**levels} after "
            f"{levels} levels of /{block_size}; reduce levels or block_size"
        )
    layers = [PyramidLayer(0, image.data.astype(np.float64), d_max)]
    for level in range(1, levels + 1):
        below = layers[-1]
        layers.append(
            PyramidLayer(
                level=level,
                intensities=block_mean(below.intensities, block_size),
                d_max=below.d_max // block_size,
            )
        )
        expect_h = -(-below.height // block_size)  # ceil division
        expect_w = -(-below.width // block_size)
        got = layers[-1]
        if (got.height, got.width) != (expect_h, expect_w):
            raise InternalError(
                f"layer {level} shape {(got.height, got.width)} != "
                f"ceil expectation {(expect_h, expect_w)}"
            )
    return tuple(layers)


def build_pyramid_pair(
    pair: StereoPair, block_size: int = 2, levels: int = 3
) -> PyramidPair:
    return PyramidPair(
        left=build_pyramid(pair.left, pair.d_max, block_size, levels),
        right=build_pyramid(pair.right, pair.d_max, block_size, levels),
    )


def layer_to_image(layer: PyramidLayer) -> RasterImage:
    """Round a layer back to 8 bits for inspection dumps only."""
    return RasterImage(np.clip(np.rint(layer.intensities), 0, 255).astype(np.uint8))
