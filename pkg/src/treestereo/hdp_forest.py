"""Disparity-aware spanning forests.

Once every pixel carries a predicted set of candidate disparities (its
pixel interval, inherited from the parent pixel's row in the interval
table), the spanning structure can stop connecting pixels that have nothing
to agree on.  Two rules shape the forest while edges stream by in the
variant's order:

  rule 1 - an edge whose endpoint pixel intervals are disjoint is dropped
           outright: support between those pixels is meaningless.
  rule 2 - an edge joining two existing trees merges them only if their
           tree intervals (the union of member pixel intervals, maintained
           incrementally) overlap enough: |A & B| / |A | B| >= beta,
           evaluated against the live trees at the moment the edge arrives.

The result is a forest whose trees each own a compact disparity interval;
matching cost is then evaluated and aggregated per tree on that interval
only.  Intervals are kept as arbitrary-precision integer bitsets (bit j set
iff disparity j is a candidate), so the rule checks are two bitwise ops and
two popcounts regardless of the disparity range.

With beta = 0 and full-range intervals both rules always pass and the build
reduces to the plain spanning forest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InternalError
from .hdp_model import DisparityIntervalTable
from .raster_io import DisparityMap, RasterImage
from .spanning_forest import EdgeList, RootedForest, UnionFind, edge_order, _bfs_forest


def mask_to_array(mask: int) -> np.ndarray:
    """Set bit positions of a disparity bitset, ascending."""
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class PixelIntervalMap:
    """Per-pixel candidate disparity sets, shared through table rows.

    Pixels do not own interval copies; each stores the index of its row in
    the prediction table, so memory stays proportional to the table.
    """

    height: int
    width: int
    d_max: int
    pixel_row: np.ndarray  # (H * W,) int64 row index per pixel
    intervals: tuple[np.ndarray, ...]  # table rows, sorted disparities
    masks: tuple[int, ...]  # table rows as bitsets

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    def interval(self, pixel: int) -> np.ndarray:
        return self.intervals[self.pixel_row[pixel]]

    def mask(self, pixel: int) -> int:
        return self.masks[self.pixel_row[pixel]]

    def mean_size(self) -> float:
        sizes = np.array([iv.size for iv in self.intervals], dtype=np.float64)
        return float(sizes[self.pixel_row].mean())


def full_range_interval_map(height: int, width: int, d_max: int) -> PixelIntervalMap:
    """Every pixel may take any disparity in [0, d_max] (no prediction yet)."""
    full = np.arange(d_max + 1, dtype=np.int64)
    return PixelIntervalMap(
        height=height,
        width=width,
        d_max=d_max,
        pixel_row=np.zeros(height * width, dtype=np.int64),
        intervals=(full,),
        masks=((1 << (d_max + 1)) - 1,),
    )


def assign_pixel_intervals(
    parent_disparity: DisparityMap,
    table: DisparityIntervalTable,
    child_height: int,
    child_width: int,
    d_max: int,
    block_size: int,
) -> PixelIntervalMap:
    """Give each child pixel the table row of its parent block's disparity."""
    ph = -(-child_height // block_size)
    pw = -(-child_width // block_size)
    if (parent_disparity.height, parent_disparity.width) != (ph, pw):
        raise InternalError(
            f"parent map {parent_disparity.height}x{parent_disparity.width} does not "
            f"cover child {child_height}x{child_width} at block {block_size}"
        )
    vals = parent_disparity.values
    if vals.min() < 0 or vals.max() >= table.n_rows:
        raise InternalError(
            f"parent disparities span [{vals.min()}, {vals.max()}], table has "
            f"{table.n_rows} rows"
        )
    rows = np.arange(child_height) // block_size
    cols = np.arange(child_width) // block_size
    pixel_row = vals[np.ix_(rows, cols)].astype(np.int64).ravel()
    return PixelIntervalMap(
        height=child_height,
        width=child_width,
        d_max=d_max,
        pixel_row=pixel_row,
        intervals=table.intervals,
        masks=tuple(table.masks()),
    )


@dataclass(frozen=True)
class DisparityForest:
    """A rooted spanning forest plus each tree's disparity interval."""

    base: RootedForest
    intervals: tuple[np.ndarray, ...]  # per tree, sorted
    masks: tuple[int, ...]
    d_max: int

    @property
    def n_trees(self) -> int:
        return self.base.n_trees

    def search_ratio(self) -> float:
        """Mean per-pixel fraction of the disparity range left to search."""
        sizes = np.array([iv.size for iv in self.intervals], dtype=np.float64)
        return float(sizes[self.base.tree_id].mean()) / (self.d_max + 1)

    def total_search_entries(self) -> int:
        """Sum over pixels of the tree interval size (stored cost entries)."""
        sizes = np.array([iv.size for iv in self.intervals], dtype=np.int64)
        counts = np.diff(self.base.tree_slices)
        return int((sizes * counts).sum())


def build_hdpf(
    edges: EdgeList,
    pixel_intervals: PixelIntervalMap,
    tree_kind: str = "mst",
    seed: int = 0,
    beta: float = 0.6,
) -> DisparityForest:
    """Grow the interval-aware forest by streaming edges in variant order.

    Both rules are applied as each edge is encountered; rule 2's overlap
    test uses the merging trees' intervals as they stand at that moment,
    and a merge unions the intervals.  beta may be 0 (merge whenever rule 1
    allows), which with full-range intervals reproduces the plain forest.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must be in [0, 1], got {beta}")
    n = edges.n_nodes
    if pixel_intervals.n_pixels != n:
        raise InternalError(
            f"interval map covers {pixel_intervals.n_pixels} pixels, grid has {n}"
        )
    row_masks = pixel_intervals.masks
    pix_row = pixel_intervals.pixel_row.tolist()
    pix_mask = [row_masks[r] for r in pix_row]
    tree_mask = list(pix_mask)  # per union-find root

    visit = edge_order(edges, tree_kind, seed)
    uf = UnionFind(n)
    u_l = edges.u.tolist()
    v_l = edges.v.tolist()
    w_l = edges.weight.tolist()
    acc_u: list[int] = []
    acc_v: list[int] = []
    acc_w: list[float] = []
    for e in visit.tolist():
        a, b = u_l[e], v_l[e]
        if pix_mask[a] & pix_mask[b] == 0:
            continue  # rule 1: nothing in common at the pixels themselves
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        ta, tb = tree_mask[ra], tree_mask[rb]
        inter = (ta & tb).bit_count()
        union = (ta | tb).bit_count()
        if inter / union < beta:
            continue  # rule 2: live tree intervals diverge too much
        root = uf.union(ra, rb)
        tree_mask[root] = ta | tb
        acc_u.append(a)
        acc_v.append(b)
        acc_w.append(w_l[e])

    base = _bfs_forest(
        n,
        np.asarray(acc_u, dtype=np.int64),
        np.asarray(acc_v, dtype=np.int64),
        np.asarray(acc_w, dtype=np.float64),
    )
    masks = tuple(tree_mask[uf.find(int(r))] for r in base.roots)
    intervals = tuple(mask_to_array(m) for m in masks)
    for t, iv in enumerate(intervals):
        if iv.size == 0:
            raise InternalError(f"tree {t} ended with an empty interval")
    return DisparityForest(
        base=base, intervals=intervals, masks=masks, d_max=pixel_intervals.d_max
    )


def plain_disparity_forest(
    edges: EdgeList, d_max: int, tree_kind: str = "mst", seed: int = 0
) -> DisparityForest:
    """A full-range DisparityForest over the plain spanning forest."""
    pixel_intervals = full_range_interval_map(edges.height, edges.width, d_max)
    return build_hdpf(edges, pixel_intervals, tree_kind, seed, beta=0.0)


def recompute_tree_intervals(
    forest: DisparityForest, pixel_intervals: PixelIntervalMap
) -> tuple[int, ...]:
    """Union of member pixel masks per tree; must equal the stored masks."""
    out = []
    for t in range(forest.n_trees):
        m = 0
        for node in forest.base.tree_nodes(t).tolist():
            m |= pixel_intervals.mask(node)
        out.append(m)
    return tuple(out)


def colorize_forest(forest: RootedForest, height: int, width: int, seed: int = 7) -> RasterImage:
    """Render tree membership as an RGB image, one stable color per tree."""
    rng = np.random.default_rng(seed)
    palette = rng.integers(32, 224, size=(forest.n_trees, 3), dtype=np.int64)
    img = palette[forest.tree_id].reshape(height, width, 3)
    return RasterImage(img.astype(np.uint8))
