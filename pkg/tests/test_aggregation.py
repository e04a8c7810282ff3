"""Two-pass tree filtering against brute force, WTA rules, and pipelines."""

from __future__ import annotations

import numpy as np
import pytest

import treestereo.aggregation as agg_mod
from treestereo.aggregation import (
    SIZE_CLASS_PRESETS,
    AggregationParams,
    aggregate_forest,
    aggregate_tree,
    run_baseline_pipeline,
    run_hdp_pipeline,
    winner_takes_all_with_cost,
)
from treestereo.cost_volume import (
    CostParams,
    SparseCostVolume,
    full_range_intervals,
    masked_cost_volume,
)
from treestereo.errors import ConfigError, DataError
from treestereo.evaluation import error_rate
from treestereo.pyramid import PyramidLayer
from treestereo.spanning_forest import (
    build_edge_list,
    build_forest,
    forest_from_edges,
)
from treestereo.synthetic import plane_field, render_scene


def random_forest(rng, max_nodes=20):
    """A random multi-tree forest plus its edge arrays."""
    n = int(rng.integers(2, max_nodes + 1))
    us, vs, ws = [], [], []
    for node in range(1, n):
        if rng.uniform() < 0.85:
            us.append(int(rng.integers(0, node)))
            vs.append(node)
            ws.append(float(rng.uniform(0.0, 255.0)))
    return (
        forest_from_edges(n, np.array(us), np.array(vs), np.array(ws)),
        n,
        list(zip(us, vs, ws)),
    )


def brute_force_aggregate(n, edge_list, costs, gamma):
    """A(v) = sum_u (prod of per-edge similarities on the u-v path) E(u)."""
    adj = [[] for _ in range(n)]
    for u, v, w in edge_list:
        s = float(np.exp(-w / (gamma * 255.0)))
        adj[u].append((v, s))
        adj[v].append((u, s))
    out = np.zeros_like(costs)
    for src in range(n):
        prod = np.full(n, -1.0)
        prod[src] = 1.0
        stack = [src]
        while stack:
            cur = stack.pop()
            for nxt, s in adj[cur]:
                if prod[nxt] < 0:
                    prod[nxt] = prod[cur] * s
                    stack.append(nxt)
        reach = prod >= 0
        out[src] = (prod[reach, None] * costs[reach]).sum(axis=0)
    return out


@pytest.mark.parametrize("trial", range(25))
def test_two_pass_matches_brute_force(trial):
    rng = np.random.default_rng(1000 + trial)
    forest, n, edge_list = random_forest(rng)
    m = int(rng.integers(1, 5))
    costs = rng.uniform(0.0, 1.0, size=(n, m))
    gamma = float(rng.uniform(0.01, 1.0))
    got = aggregate_forest(forest, costs, gamma)
    expect = brute_force_aggregate(n, edge_list, costs, gamma)
    np.testing.assert_allclose(got, expect, atol=1e-9, rtol=0)


def test_two_node_closed_form():
    w = 51.0
    forest = forest_from_edges(2, np.array([0]), np.array([1]), np.array([w]))
    costs = np.array([[1.0], [10.0]])
    s = np.exp(-w / 25.5)
    got = aggregate_forest(forest, costs, gamma=0.1)
    assert got[0, 0] == pytest.approx(1.0 + s * 10.0, abs=1e-12)
    assert got[1, 0] == pytest.approx(10.0 + s * 1.0, abs=1e-12)


def test_singleton_tree_identity():
    forest = forest_from_edges(3, np.array([0]), np.array([1]), np.array([9.0]))
    costs = np.array([[2.0], [3.0], [7.0]])
    got = aggregate_forest(forest, costs, gamma=0.1)
    assert got[2, 0] == 7.0  # node 2 is alone in its tree


def test_trees_are_isolated():
    us, vs, ws = np.array([0, 2]), np.array([1, 3]), np.array([20.0, 30.0])
    forest = forest_from_edges(4, us, vs, ws)
    costs = np.array([[1.0], [2.0], [3.0], [4.0]])
    base = aggregate_forest(forest, costs, gamma=0.3)
    bumped = costs.copy()
    bumped[2:] += 100.0
    moved = aggregate_forest(forest, bumped, gamma=0.3)
    np.testing.assert_array_equal(base[:2], moved[:2])
    assert (moved[2:] != base[2:]).all()


def test_tiny_gamma_approaches_identity():
    rng = np.random.default_rng(5)
    forest, n, _ = random_forest(rng)
    costs = rng.uniform(0.0, 1.0, size=(n, 2))
    got = aggregate_forest(forest, costs, gamma=1e-4)
    np.testing.assert_allclose(got, costs, atol=1e-12)


def test_aggregate_forest_validates_shape():
    forest = forest_from_edges(2, np.array([0]), np.array([1]), np.array([1.0]))
    with pytest.raises(ConfigError):
        aggregate_forest(forest, np.zeros((3, 1)))


def test_wta_tie_takes_smaller_disparity():
    volume = SparseCostVolume(
        width=2,
        height=1,
        d_max=1,
        node_order=np.array([0, 1]),
        tree_slices=np.array([0, 2]),
        intervals=(np.array([0, 1]),),
        costs=[np.array([[0.5, 0.5], [0.3, 0.2]])],
        pos=np.array([0, 1]),
        tree_of=np.array([0, 0]),
    )
    disparity, min_cost = winner_takes_all_with_cost(volume)
    assert disparity.values.tolist() == [[0, 1]]
    assert min_cost.tolist() == [[0.5, 0.2]]


def test_wta_reports_interval_disparities():
    volume = SparseCostVolume(
        width=1,
        height=1,
        d_max=6,
        node_order=np.array([0]),
        tree_slices=np.array([0, 1]),
        intervals=(np.array([2, 5]),),
        costs=[np.array([[0.4, 0.1]])],
        pos=np.array([0]),
        tree_of=np.array([0]),
    )
    disparity, _ = winner_takes_all_with_cost(volume)
    assert disparity.values[0, 0] == 5


def small_pair(h=24, w=32, d=3, d_max=6, seed=9):
    field = plane_field(h, w, background=d, rects=[])
    return render_scene(field, d_max=d_max, seed=seed)


def test_baseline_matches_manual_dense_aggregation():
    scene = small_pair()
    pair = scene.pair
    result = run_baseline_pipeline(pair, AggregationParams())
    left = PyramidLayer(0, pair.left.data.astype(np.float64), pair.d_max)
    right = PyramidLayer(0, pair.right.data.astype(np.float64), pair.d_max)
    forest = build_forest(build_edge_list(left), "mst")
    volume = masked_cost_volume(
        left, right, forest, full_range_intervals(forest, pair.d_max), CostParams()
    )
    dense = volume.to_dense()  # rows indexed by pixel id
    agg = aggregate_forest(forest, dense, gamma=0.1)
    expect = np.argmin(agg, axis=1).reshape(24, 32)
    np.testing.assert_array_equal(result.disparity.values, expect)


def test_baseline_streaming_chunks_equivalent(monkeypatch):
    scene = small_pair()
    full = run_baseline_pipeline(scene.pair, AggregationParams())
    monkeypatch.setattr(agg_mod, "STREAM_ENTRY_BUDGET", 1)  # 1 disparity per chunk
    chunked = run_baseline_pipeline(scene.pair, AggregationParams())
    np.testing.assert_array_equal(full.disparity.values, chunked.disparity.values)
    np.testing.assert_array_equal(
        full.layers[0].min_cost, chunked.layers[0].min_cost
    )


def test_pipelines_are_deterministic(quick_model, small_scene):
    a = run_hdp_pipeline(small_scene.pair, quick_model, AggregationParams())
    b = run_hdp_pipeline(small_scene.pair, quick_model, AggregationParams())
    np.testing.assert_array_equal(a.disparity.values, b.disparity.values)
    c = run_baseline_pipeline(small_scene.pair, AggregationParams(), tree_kind="rt")
    d = run_baseline_pipeline(small_scene.pair, AggregationParams(), tree_kind="rt")
    np.testing.assert_array_equal(c.disparity.values, d.disparity.values)


def test_hdp_demands_enough_model_layers(quick_model, small_scene):
    with pytest.raises(DataError):
        run_hdp_pipeline(
            small_scene.pair, quick_model, AggregationParams(levels=5)
        )


def test_hdp_on_forest_hook_sees_every_level(quick_model, small_scene):
    seen = []
    run_hdp_pipeline(
        small_scene.pair,
        quick_model,
        AggregationParams(),
        on_forest=lambda level, forest: seen.append(level),
    )
    assert seen == [3, 2, 1, 0]


def test_hdp_metrics_account_entries(quick_model, small_scene):
    result = run_hdp_pipeline(small_scene.pair, quick_model, AggregationParams())
    level0 = next(lr for lr in result.layers if lr.level == 0)
    n0 = small_scene.pair.left.height * small_scene.pair.left.width
    dense = n0 * (small_scene.pair.d_max + 1)
    assert result.metrics["dense_entries"] == dense
    assert result.metrics["stored_entries"] == level0.stored_entries
    assert level0.stored_entries <= dense
    ratio = result.metrics["search_ratios"][0]
    assert level0.stored_entries / dense == pytest.approx(ratio, abs=1e-12)


def test_constant_shift_scene_nearly_perfect(quick_model):
    # a rigid shift of 6 at d_max 16 with a 2-level pyramid must come out
    # essentially exact despite the fractional 6/4 shift at the top level
    field = plane_field(96, 128, background=6, rects=[])
    scene = render_scene(field, d_max=16, seed=21)
    result = run_hdp_pipeline(
        scene.pair, quick_model, AggregationParams(levels=2)
    )
    err = error_rate(result.disparity, scene.gt_left, scene.occlusion, 1)
    assert err <= 1.0


def test_params_resolution_and_validation():
    resolved = AggregationParams().resolved()
    assert resolved.delta0 == SIZE_CLASS_PRESETS["half"]["delta0"]
    assert resolved.beta == SIZE_CLASS_PRESETS["half"]["beta"]
    full = AggregationParams(size_class="full").resolved()
    assert (full.delta0, full.beta) == (0.004, 0.95)
    override = AggregationParams(delta0=0.01, beta=0.3).resolved()
    assert (override.delta0, override.beta) == (0.01, 0.3)
    with pytest.raises(ConfigError):
        AggregationParams(size_class="tiny").resolved()
    with pytest.raises(ConfigError):
        AggregationParams(beta=1.5).resolved()
    with pytest.raises(ConfigError):
        AggregationParams(gamma=0.0).resolved()
    with pytest.raises(ConfigError):
        AggregationParams(delta0=1.0).resolved()
