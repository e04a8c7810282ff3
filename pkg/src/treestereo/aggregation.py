"""Non-local cost aggregation over spanning trees, and the two pipelines.

Aggregation spreads every pixel's matching cost to every other pixel of its
tree, attenuated by the path weight between them:

    A(p, x) = sum_q exp(-W(p, q) / gamma) * E(q, x),

with W the sum of edge weights (normalized to [0, 1]) along the unique tree
path.  Computing that directly is quadratic; two linear sweeps over the
tree produce it exactly.  An upward pass accumulates each subtree into its
root, A_up(v) = E(v) + sum_children s(v, c) * A_up(c); a downward pass then
corrects for the rest of the tree, A(root) = A_up(root) and

    A(v) = s(parent, v) * A(parent) + (1 - s(parent, v)^2) * A_up(v),

where s(u, v) = exp(-w(u, v) / (gamma * 255)).  Both sweeps run one whole
BFS depth level per array operation; within a level, children of a common
parent are contiguous in BFS order, so sibling sums reduce with reduceat
instead of scattered adds.  The arithmetic order is fixed, which keeps
repeated runs byte-identical.

Two pipelines share this kernel.  The baseline aggregates the full
disparity range over one spanning tree of the source image, streaming the
range in chunks so the dense volume never materializes.  The hierarchical
pipeline matches the coarsest pyramid level over the full (shrunken) range,
then walks down, at each level predicting per-pixel disparity intervals
from the level above, growing interval-aware forests, and aggregating only
the stored entries.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .cost_volume import (
    CostParams,
    SparseCostVolume,
    cost_grid,
    masked_cost_volume,
    prepare_layer,
)
from .errors import ConfigError, DataError, InternalError
from .hdp_forest import (
    DisparityForest,
    assign_pixel_intervals,
    build_hdpf,
    plain_disparity_forest,
)
from .hdp_model import (
    GmmModel,
    bayes_child_given_parent,
    conditional_parent_given_child,
    estimate_prior,
    predict_intervals,
)
from .pyramid import PyramidLayer, build_pyramid_pair
from .raster_io import DisparityMap, StereoPair
from .spanning_forest import RootedForest, apply_median_prefilter, build_edge_list

logger = logging.getLogger(__name__)

SIZE_CLASS_PRESETS = {
    # Image scale drives how aggressively intervals are thinned: small images
    # are cheap to search (loose delta0, permissive beta keeps trees large),
    # large ones need thin intervals and conservative merges.
    "half": {"delta0": 0.064, "beta": 0.6},
    "full": {"delta0": 0.004, "beta": 0.95},
}

STREAM_ENTRY_BUDGET = 16_000_000  # float64 entries per streamed chunk buffer


@dataclass(frozen=True)
class AggregationParams:
    """Pipeline-level knobs; delta0/beta default from the size class."""

    gamma: float = 0.1
    size_class: str = "half"
    block_size: int = 2
    levels: int = 3
    delta0: float | None = None
    beta: float | None = None
    seed: int = 0

    def resolved(self) -> "AggregationParams":
        if self.size_class not in SIZE_CLASS_PRESETS:
            raise ConfigError(
                f"unknown size class {self.size_class!r} "
                f"(want one of {sorted(SIZE_CLASS_PRESETS)})"
            )
        preset = SIZE_CLASS_PRESETS[self.size_class]
        out = replace(
            self,
            delta0=self.delta0 if self.delta0 is not None else preset["delta0"],
            beta=self.beta if self.beta is not None else preset["beta"],
        )
        if not 0.0 < out.delta0 < 1.0:
            raise ConfigError(f"delta0 must be in (0, 1), got {out.delta0}")
        if not 0.0 < out.beta <= 1.0:
            raise ConfigError(f"beta must be in (0, 1], got {out.beta}")
        if out.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {out.gamma}")
        if out.block_size < 2 or out.levels < 1:
            raise ConfigError("block_size must be >= 2 and levels >= 1")
        return out


@dataclass
class LayerResult:
    """Per-level outcome of the hierarchical pipeline."""

    level: int
    disparity: DisparityMap
    min_cost: np.ndarray
    search_ratio: float
    n_trees: int
    stored_entries: int
    timings: dict[str, float]


@dataclass
class PipelineResult:
    disparity: DisparityMap
    layers: list[LayerResult]
    metrics: dict


@dataclass(frozen=True)
class _TreeSweep:
    """Per-tree arrays the two-pass sweeps need, gathered once."""

    start: int
    end: int
    nodes: np.ndarray
    parent_local: np.ndarray
    sim: np.ndarray
    level_bounds: np.ndarray

    @classmethod
    def for_tree(cls, forest: RootedForest, sims: np.ndarray, t: int) -> "_TreeSweep":
        s = int(forest.tree_slices[t])
        e = int(forest.tree_slices[t + 1])
        nodes = forest.order[s:e]
        return cls(
            start=s,
            end=e,
            nodes=nodes,
            parent_local=forest.pos[forest.parent[nodes]] - s,
            sim=sims[nodes],
            level_bounds=forest.level_bounds[t],
        )


def _two_pass(sweep: _TreeSweep, block_costs: np.ndarray) -> np.ndarray:
    """Exact tree aggregation of a (nodes, columns) cost block."""
    up = block_costs.copy()
    lb = sweep.level_bounds
    top = len(lb) - 2  # deepest level index
    sim = sweep.sim
    pl = sweep.parent_local
    for lev in range(top, 0, -1):
        s, e = int(lb[lev]), int(lb[lev + 1])
        seg = pl[s:e]
        vals = sim[s:e, None] * up[s:e]
        # BFS lists children of consecutive parents consecutively, so the
        # parent ids in a level are non-decreasing: segment-sum by reduceat.
        starts = np.concatenate(([0], np.flatnonzero(seg[1:] != seg[:-1]) + 1))
        up[seg[starts]] += np.add.reduceat(vals, starts, axis=0)
    down = np.empty_like(up)
    down[: int(lb[1])] = up[: int(lb[1])]
    for lev in range(1, top + 1):
        s, e = int(lb[lev]), int(lb[lev + 1])
        sl = sim[s:e, None]
        down[s:e] = sl * down[pl[s:e]] + (1.0 - sl * sl) * up[s:e]
    return down


def aggregate_tree(
    volume: SparseCostVolume, forest: DisparityForest, gamma: float = 0.1
) -> SparseCostVolume:
    """Aggregate every tree's cost block; returns a volume of the same shape."""
    base = forest.base
    if volume.node_order is not base.order and not np.array_equal(
        volume.node_order, base.order
    ):
        raise InternalError("cost volume and forest disagree on node order")
    if len(volume.intervals) != forest.n_trees:
        raise InternalError("cost volume and forest disagree on tree count")
    sims = base.similarities(gamma)
    out = []
    for t in range(forest.n_trees):
        if not np.array_equal(volume.intervals[t], forest.intervals[t]):
            raise InternalError(f"tree {t} interval mismatch between volume and forest")
        block = volume.costs[t]
        if block.shape[0] == 1:
            out.append(block.copy())
            continue
        out.append(_two_pass(_TreeSweep.for_tree(base, sims, t), block))
    return SparseCostVolume(
        width=volume.width,
        height=volume.height,
        d_max=volume.d_max,
        node_order=volume.node_order,
        tree_slices=volume.tree_slices,
        intervals=volume.intervals,
        costs=out,
        pos=volume.pos,
        tree_of=volume.tree_of,
    )


def aggregate_forest(
    forest: RootedForest, costs: np.ndarray, gamma: float = 0.1
) -> np.ndarray:
    """Two-pass aggregation of a dense per-node cost matrix over a forest.

    `costs` is (n_nodes, m); every column is filtered independently over the
    tree containing its node.  This is the bare filter with no disparity
    semantics attached.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim == 1:
        costs = costs[:, None]
    if costs.shape[0] != forest.n_nodes:
        raise ConfigError("cost row count must equal the node count")
    sims = forest.similarities(gamma)
    out = np.empty_like(costs)
    for t in range(forest.n_trees):
        sweep = _TreeSweep.for_tree(forest, sims, t)
        block = costs[sweep.nodes]
        out[sweep.nodes] = _two_pass(sweep, block) if sweep.nodes.size > 1 else block
    return out


def winner_takes_all_with_cost(
    volume: SparseCostVolume,
) -> tuple[DisparityMap, np.ndarray]:
    """Per-pixel argmin over the stored interval; ties pick the smaller disparity."""
    n = volume.width * volume.height
    values = np.zeros(n, dtype=np.int32)
    min_cost = np.empty(n, dtype=np.float64)
    for t in range(volume.n_trees):
        nodes = volume.node_order[volume.tree_slices[t] : volume.tree_slices[t + 1]]
        block = volume.costs[t]
        j = np.argmin(block, axis=1)  # first minimum = smallest disparity
        values[nodes] = volume.intervals[t][j]
        min_cost[nodes] = block[np.arange(block.shape[0]), j]
    disparity = DisparityMap(
        values=values.reshape(volume.height, volume.width),
        valid=np.ones((volume.height, volume.width), dtype=bool),
    )
    return disparity, min_cost.reshape(volume.height, volume.width)


def winner_takes_all(volume: SparseCostVolume) -> DisparityMap:
    return winner_takes_all_with_cost(volume)[0]


def _layer_from_pair(pair: StereoPair, median_prefilter: bool) -> tuple[PyramidLayer, PyramidLayer]:
    left, right = pair.left, pair.right
    if median_prefilter:
        left = apply_median_prefilter(left)
        right = apply_median_prefilter(right)
    return (
        PyramidLayer(0, left.data.astype(np.float64), pair.d_max),
        PyramidLayer(0, right.data.astype(np.float64), pair.d_max),
    )


def run_baseline_pipeline(
    pair: StereoPair,
    params: AggregationParams | None = None,
    cost_params: CostParams | None = None,
    tree_kind: str = "mst",
    median_prefilter: bool = False,
    on_forest=None,
) -> PipelineResult:
    """Full-range aggregation over one spanning structure of the source image.

    The disparity axis streams through in chunks: raw cost for a few
    disparities, aggregate, fold into the running minimum.  Results are
    identical to materializing the whole volume, column by column.
    """
    params = (params or AggregationParams()).resolved()
    cost_params = cost_params or CostParams()
    t_start = time.perf_counter()
    left_layer, right_layer = _layer_from_pair(pair, median_prefilter)
    h, w, n = left_layer.height, left_layer.width, left_layer.n_pixels
    d_max = pair.d_max

    t0 = time.perf_counter()
    edges = build_edge_list(left_layer)
    forest = plain_disparity_forest(edges, d_max, tree_kind, params.seed)
    t_forest = time.perf_counter() - t0
    if on_forest is not None:
        on_forest(0, forest)

    t0 = time.perf_counter()
    left = prepare_layer(left_layer)
    right = prepare_layer(right_layer)
    base = forest.base
    sims = base.similarities(params.gamma)
    sweeps = [_TreeSweep.for_tree(base, sims, t) for t in range(forest.n_trees)]

    local_best = [np.full(s.end - s.start, np.inf) for s in sweeps]
    local_x = [np.zeros(s.end - s.start, dtype=np.int32) for s in sweeps]
    chunk = max(1, min(d_max + 1, STREAM_ENTRY_BUDGET // max(n, 1)))
    for x0 in range(0, d_max + 1, chunk):
        xs = np.arange(x0, min(x0 + chunk, d_max + 1), dtype=np.int32)
        raw = np.stack(
            [cost_grid(left, right, int(x), cost_params).ravel() for x in xs], axis=1
        )
        for i, sweep in enumerate(sweeps):
            block = raw[sweep.nodes]
            agg = _two_pass(sweep, block) if sweep.nodes.size > 1 else block
            j = np.argmin(agg, axis=1)  # first minimum = smallest x in chunk
            cand = agg[np.arange(agg.shape[0]), j]
            # Strict comparison keeps the earlier chunk on ties, so the
            # combined result is the global first argmin.
            better = cand < local_best[i]
            local_best[i][better] = cand[better]
            local_x[i][better] = xs[j[better]]
    best_cost = np.empty(n, dtype=np.float64)
    best_x = np.empty(n, dtype=np.int32)
    for i, sweep in enumerate(sweeps):
        best_cost[sweep.nodes] = local_best[i]
        best_x[sweep.nodes] = local_x[i]
    t_aggregate = time.perf_counter() - t0

    disparity = DisparityMap(
        values=best_x.reshape(h, w), valid=np.ones((h, w), dtype=bool)
    )
    total = time.perf_counter() - t_start
    layer = LayerResult(
        level=0,
        disparity=disparity,
        min_cost=best_cost.reshape(h, w),
        search_ratio=1.0,
        n_trees=forest.n_trees,
        stored_entries=n * (d_max + 1),
        timings={"forest": t_forest, "cost_aggregate": t_aggregate},
    )
    metrics = {
        "method": f"{tree_kind}-baseline",
        "tree": tree_kind,
        "hdp": False,
        "median_prefilter": median_prefilter,
        "seed": params.seed,
        "search_ratios": [1.0],
        "stored_entries": layer.stored_entries,
        "dense_entries": n * (d_max + 1),
        "seconds": {"forest": t_forest, "cost_aggregate": t_aggregate, "total": total},
    }
    return PipelineResult(disparity=disparity, layers=[layer], metrics=metrics)


def _matched_layer_geometry(pyr_left, pyr_right) -> None:
    for a, b in zip(pyr_left, pyr_right):
        if (a.height, a.width, a.d_max) != (b.height, b.width, b.d_max):
            raise InternalError("left/right pyramid layers disagree in geometry")


def run_hdp_pipeline(
    pair: StereoPair,
    model: GmmModel,
    params: AggregationParams | None = None,
    cost_params: CostParams | None = None,
    tree_kind: str = "mst",
    median_prefilter: bool = False,
    on_forest=None,
) -> PipelineResult:
    """Coarse-to-fine matching with predicted disparity intervals.

    The coarsest level is matched over its full (shrunken) range with the
    plain spanning structure; every finer level gets per-pixel intervals
    from the level above (mixture conditional x sampled prior, thresholded),
    an interval-aware forest, and aggregation over stored entries only.
    """
    params = (params or AggregationParams()).resolved()
    cost_params = cost_params or CostParams()
    if model.n_layers < params.levels:
        raise DataError(
            f"model covers {model.n_layers} level transitions, run needs {params.levels}"
        )
    t_start = time.perf_counter()
    work_pair = pair
    if median_prefilter:
        work_pair = StereoPair(
            left=apply_median_prefilter(pair.left),
            right=apply_median_prefilter(pair.right),
            d_max=pair.d_max,
            name=pair.name,
        )
    t0 = time.perf_counter()
    pyr = build_pyramid_pair(work_pair, params.block_size, params.levels)
    _matched_layer_geometry(pyr.left, pyr.right)
    t_pyramid = time.perf_counter() - t0

    stage = {"pyramid": t_pyramid, "predict": 0.0, "forest": 0.0, "cost": 0.0,
             "aggregate": 0.0}
    layers: list[LayerResult] = []
    top = params.levels

    def run_layer(level: int, forest: DisparityForest) -> LayerResult:
        lt, rt = pyr.left[level], pyr.right[level]
        t1 = time.perf_counter()
        volume = masked_cost_volume(lt, rt, forest.base, forest.intervals, cost_params)
        t2 = time.perf_counter()
        agg = aggregate_tree(volume, forest, params.gamma)
        disparity, min_cost = winner_takes_all_with_cost(agg)
        t3 = time.perf_counter()
        stage["cost"] += t2 - t1
        stage["aggregate"] += t3 - t2
        return LayerResult(
            level=level,
            disparity=disparity,
            min_cost=min_cost,
            search_ratio=forest.search_ratio(),
            n_trees=forest.n_trees,
            stored_entries=volume.total_entries(),
            timings={"cost": t2 - t1, "aggregate": t3 - t2},
        )

    t0 = time.perf_counter()
    edges = build_edge_list(pyr.left[top])
    top_forest = plain_disparity_forest(
        edges, pyr.left[top].d_max, tree_kind, params.seed
    )
    stage["forest"] += time.perf_counter() - t0
    if on_forest is not None:
        on_forest(top, top_forest)
    layers.append(run_layer(top, top_forest))

    parent = layers[-1].disparity
    for level in range(top - 1, -1, -1):
        lt, rt = pyr.left[level], pyr.right[level]
        d_child = lt.d_max
        d_parent = pyr.left[level + 1].d_max

        t0 = time.perf_counter()
        prior = estimate_prior(lt, rt, cost_params)
        conditional = conditional_parent_given_child(
            model.layers[level], d_child, d_parent, params.block_size
        )
        bayes = bayes_child_given_parent(conditional, prior)
        delta_l = params.delta0 * params.block_size**level
        table = predict_intervals(bayes, delta_l)
        pixel_intervals = assign_pixel_intervals(
            parent, table, lt.height, lt.width, d_child, params.block_size
        )
        stage["predict"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        level_edges = build_edge_list(lt)
        forest = build_hdpf(
            level_edges, pixel_intervals, tree_kind, params.seed, params.beta
        )
        stage["forest"] += time.perf_counter() - t0
        if on_forest is not None:
            on_forest(level, forest)

        layers.append(run_layer(level, forest))
        parent = layers[-1].disparity

    total = time.perf_counter() - t_start
    stage["total"] = total
    by_level = sorted(layers, key=lambda lr: lr.level)
    n0 = pyr.left[0].n_pixels
    metrics = {
        "method": f"hdp-{tree_kind}",
        "tree": tree_kind,
        "hdp": True,
        "median_prefilter": median_prefilter,
        "seed": params.seed,
        "delta0": params.delta0,
        "beta": params.beta,
        "levels": params.levels,
        "block_size": params.block_size,
        "search_ratios": [lr.search_ratio for lr in by_level],
        "stored_entries": by_level[0].stored_entries,
        "dense_entries": n0 * (pair.d_max + 1),
        "seconds": dict(stage),
    }
    return PipelineResult(disparity=layers[-1].disparity, layers=layers, metrics=metrics)
