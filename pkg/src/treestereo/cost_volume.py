"""Per-pixel matching cost and its sparse, tree-blocked storage.

The cost of assigning disparity x to left pixel p combines a truncated mean
absolute color difference with a truncated horizontal-gradient difference:

    cost = (1 - alpha) * min(tau_color, mean_c |L_c(p) - R_c(p - x)|)
         + alpha       * min(tau_grad,  |dL(p) - dR(p - x)|)

computed on intensities scaled to [0, 1]; gradients are central differences
of the grayscale image along the row axis.  When p - x falls off the right
image the cost saturates at the border value (both truncations active), so
out-of-range candidates are penalized but never dominate aggregation.

A SparseCostVolume stores, for every tree of a spanning forest, one dense
matrix of shape (nodes in tree, disparities in the tree's interval).  Rows
follow the forest's BFS block order, which is exactly the layout the
aggregation sweeps want; columns follow the tree's sorted interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InternalError
from .pyramid import PyramidLayer
from .spanning_forest import RootedForest

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class CostParams:
    """Truncated color/gradient cost constants (on unit-scaled intensities)."""

    alpha: float = 0.9
    tau_color: float = 0.0275
    tau_grad: float = 0.0078

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau_color <= 0 or self.tau_grad <= 0:
            raise ConfigError("truncation thresholds must be positive")

    @property
    def border_cost(self) -> float:
        return (1.0 - self.alpha) * self.tau_color + self.alpha * self.tau_grad


@dataclass(frozen=True)
class PreparedLayer:
    """Unit-scaled intensities plus the grayscale gradient, computed once."""

    unit: np.ndarray  # (H, W, C) float64 in [0, 1]
    gray: np.ndarray  # (H, W)
    grad: np.ndarray  # (H, W) d(gray)/d(col)


def prepare_layer(layer: PyramidLayer) -> PreparedLayer:
    unit = layer.intensities / 255.0
    if layer.channels == 3:
        gray = unit @ GRAY_WEIGHTS
    else:
        gray = unit[:, :, 0]
    grad = np.gradient(gray, axis=1) if layer.width > 1 else np.zeros_like(gray)
    return PreparedLayer(unit=unit, gray=gray, grad=grad)


def cost_at_pixels(
    left: PreparedLayer,
    right: PreparedLayer,
    x: int,
    rows: np.ndarray,
    cols: np.ndarray,
    params: CostParams,
) -> np.ndarray:
    """Vectorized cost of disparity x at the given left-image pixels."""
    rcols = cols - x
    inside = rcols >= 0
    safe = np.where(inside, rcols, 0)
    color = np.abs(left.unit[rows, cols] - right.unit[rows, safe]).mean(axis=-1)
    grad = np.abs(left.grad[rows, cols] - right.grad[rows, safe])
    cost = (1.0 - params.alpha) * np.minimum(params.tau_color, color)
    cost += params.alpha * np.minimum(params.tau_grad, grad)
    return np.where(inside, cost, params.border_cost)


def cost_grid(
    left: PreparedLayer, right: PreparedLayer, x: int, params: CostParams
) -> np.ndarray:
    """Cost of disparity x at every pixel, as an (H, W) grid."""
    h, w = left.gray.shape
    out = np.full((h, w), params.border_cost)
    if x < w:
        color = np.abs(left.unit[:, x:] - right.unit[:, : w - x]).mean(axis=-1)
        grad = np.abs(left.grad[:, x:] - right.grad[:, : w - x])
        out[:, x:] = (1.0 - params.alpha) * np.minimum(params.tau_color, color)
        out[:, x:] += params.alpha * np.minimum(params.tau_grad, grad)
    return out


def raw_cost(
    left_layer: PyramidLayer,
    right_layer: PyramidLayer,
    p: tuple[int, int],
    x: int,
    params: CostParams | None = None,
) -> float:
    """Scalar convenience wrapper: cost at left pixel p = (row, col).

    Prepares both layers on every call; batch code should prepare once and
    use cost_at_pixels / cost_grid.
    """
    params = params or CostParams()
    if not 0 <= x <= left_layer.d_max:
        raise ConfigError(f"disparity {x} outside [0, {left_layer.d_max}]")
    row, col = p
    if not (0 <= row < left_layer.height and 0 <= col < left_layer.width):
        raise ConfigError(f"pixel {p} outside {left_layer.height}x{left_layer.width}")
    value = cost_at_pixels(
        prepare_layer(left_layer),
        prepare_layer(right_layer),
        x,
        np.array([row]),
        np.array([col]),
        params,
    )
    return float(value[0])


@dataclass
class SparseCostVolume:
    """Tree-blocked cost storage: one (nodes, interval) matrix per tree."""

    width: int
    height: int
    d_max: int
    node_order: np.ndarray  # (n,) pixel ids grouped by tree (forest BFS order)
    tree_slices: np.ndarray  # (n_trees + 1,) block boundaries into node_order
    intervals: tuple[np.ndarray, ...]  # per tree, sorted disparities
    costs: list[np.ndarray]  # per tree, (n_t, m_t) float64
    pos: np.ndarray  # pixel id -> position in node_order
    tree_of: np.ndarray  # pixel id -> tree index

    @property
    def n_trees(self) -> int:
        return len(self.intervals)

    def interval_for_pixel(self, pixel: int) -> np.ndarray:
        return self.intervals[self.tree_of[pixel]]

    def cost_at(self, pixel: int, x: int) -> float:
        """Stored cost at (pixel, x); raises if x is outside the tree interval."""
        t = int(self.tree_of[pixel])
        interval = self.intervals[t]
        j = int(np.searchsorted(interval, x))
        if j >= interval.size or interval[j] != x:
            raise ConfigError(f"disparity {x} not stored for pixel {pixel}")
        row = int(self.pos[pixel] - self.tree_slices[t])
        return float(self.costs[t][row, j])

    def total_entries(self) -> int:
        return sum(m.size for m in self.costs)

    def dense_entries(self) -> int:
        return self.width * self.height * (self.d_max + 1)

    def stored_ratio(self) -> float:
        return self.total_entries() / self.dense_entries()

    def to_dense(self) -> np.ndarray:
        """(n_pixels, d_max + 1) matrix with NaN where nothing is stored."""
        out = np.full((self.width * self.height, self.d_max + 1), np.nan)
        for t in range(self.n_trees):
            nodes = self.node_order[self.tree_slices[t] : self.tree_slices[t + 1]]
            out[np.ix_(nodes, self.intervals[t])] = self.costs[t]
        return out


def masked_cost_volume(
    left_layer: PyramidLayer,
    right_layer: PyramidLayer,
    forest: RootedForest,
    tree_intervals: Sequence[np.ndarray],
    params: CostParams,
) -> SparseCostVolume:
    """Evaluate the cost only on each tree's disparity interval.

    The forest must cover the full pixel grid of the layer, and every tree
    must come with a non-empty interval within [0, d_max]; an empty interval
    would silence a whole tree and indicates a bug upstream.
    """
    h, w = left_layer.height, left_layer.width
    if forest.n_nodes != h * w:
        raise InternalError(
            f"forest covers {forest.n_nodes} nodes, layer has {h * w} pixels"
        )
    if len(tree_intervals) != forest.n_trees:
        raise InternalError(
            f"{len(tree_intervals)} intervals for {forest.n_trees} trees"
        )
    left = prepare_layer(left_layer)
    right = prepare_layer(right_layer)
    d_max = left_layer.d_max
    costs: list[np.ndarray] = []
    intervals: list[np.ndarray] = []
    for t in range(forest.n_trees):
        interval = np.asarray(tree_intervals[t], dtype=np.int64)
        if interval.size == 0:
            raise InternalError(f"tree {t} has an empty disparity interval")
        if interval[0] < 0 or interval[-1] > d_max or np.any(np.diff(interval) <= 0):
            raise InternalError(
                f"tree {t} interval is not sorted within [0, {d_max}]"
            )
        nodes = forest.tree_nodes(t)
        rows = nodes // w
        cols = nodes % w
        mat = np.empty((nodes.size, interval.size), dtype=np.float64)
        for j, x in enumerate(interval.tolist()):
            mat[:, j] = cost_at_pixels(left, right, x, rows, cols, params)
        costs.append(mat)
        intervals.append(interval)
    return SparseCostVolume(
        width=w,
        height=h,
        d_max=d_max,
        node_order=forest.order,
        tree_slices=forest.tree_slices,
        intervals=tuple(intervals),
        costs=costs,
        pos=forest.pos,
        tree_of=forest.tree_id,
    )


def full_range_intervals(forest: RootedForest, d_max: int) -> list[np.ndarray]:
    """One [0..d_max] interval per tree (the unpredicted baseline)."""
    full = np.arange(d_max + 1, dtype=np.int64)
    return [full] * forest.n_trees
