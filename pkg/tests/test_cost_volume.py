"""Matching cost against a straight-line oracle; sparse volume layout."""

from __future__ import annotations

import numpy as np
import pytest

from treestereo.cost_volume import (
    CostParams,
    cost_at_pixels,
    cost_grid,
    full_range_intervals,
    masked_cost_volume,
    prepare_layer,
    raw_cost,
)
from treestereo.errors import ConfigError, InternalError
from treestereo.pyramid import PyramidLayer
from treestereo.spanning_forest import build_edge_list, build_forest


def random_layers(h, w, d_max, seed, channels=3):
    rng = np.random.default_rng(seed)
    left = rng.integers(0, 256, size=(h, w, channels)).astype(np.float64)
    right = rng.integers(0, 256, size=(h, w, channels)).astype(np.float64)
    return (
        PyramidLayer(0, left, d_max),
        PyramidLayer(0, right, d_max),
    )


def oracle_cost(left, right, row, col, x, params):
    """Recompute one cost value with explicit scalar arithmetic."""
    if col - x < 0:
        return (1 - params.alpha) * params.tau_color + params.alpha * params.tau_grad
    lu = left.intensities[row, col] / 255.0
    ru = right.intensities[row, col - x] / 255.0
    color = float(np.mean(np.abs(lu - ru)))

    def gray_grad(layer, r, c):
        unit = layer.intensities[r] / 255.0
        if layer.channels == 3:
            g = unit @ np.array([0.299, 0.587, 0.114])
        else:
            g = unit[:, 0]
        if c == 0:
            return g[1] - g[0]
        if c == layer.width - 1:
            return g[-1] - g[-2]
        return (g[c + 1] - g[c - 1]) / 2.0

    grad = abs(gray_grad(left, row, col) - gray_grad(right, row, col - x))
    return (1 - params.alpha) * min(params.tau_color, color) + params.alpha * min(
        params.tau_grad, grad
    )


def test_raw_cost_matches_oracle():
    left, right = random_layers(6, 10, 5, seed=0)
    params = CostParams()
    rng = np.random.default_rng(1)
    for _ in range(50):
        row = int(rng.integers(0, 6))
        col = int(rng.integers(0, 10))
        x = int(rng.integers(0, 6))
        got = raw_cost(left, right, (row, col), x, params)
        assert got == pytest.approx(oracle_cost(left, right, row, col, x, params), abs=1e-15)


def test_border_cost_when_off_image():
    left, right = random_layers(3, 5, 4, seed=2)
    params = CostParams(alpha=0.9, tau_color=0.0275, tau_grad=0.0078)
    got = raw_cost(left, right, (1, 2), 3, params)
    assert got == pytest.approx(0.1 * 0.0275 + 0.9 * 0.0078)


def test_zero_cost_on_identical_pixels():
    rng = np.random.default_rng(3)
    data = rng.integers(0, 256, size=(4, 6, 3)).astype(np.float64)
    layer = PyramidLayer(0, data, 3)
    assert raw_cost(layer, layer, (2, 3), 0) == 0.0


def test_cost_grid_agrees_with_pointwise():
    left, right = random_layers(5, 8, 4, seed=4)
    params = CostParams()
    pl, pr = prepare_layer(left), prepare_layer(right)
    for x in range(5):
        grid = cost_grid(pl, pr, x, params)
        rows, cols = np.meshgrid(np.arange(5), np.arange(8), indexing="ij")
        point = cost_at_pixels(pl, pr, x, rows.ravel(), cols.ravel(), params)
        np.testing.assert_allclose(grid.ravel(), point, atol=0)


def test_raw_cost_validates_inputs():
    left, right = random_layers(3, 3, 2, seed=5)
    with pytest.raises(ConfigError):
        raw_cost(left, right, (0, 0), 3)
    with pytest.raises(ConfigError):
        raw_cost(left, right, (3, 0), 1)


def test_cost_params_validation():
    with pytest.raises(ConfigError):
        CostParams(alpha=1.5)
    with pytest.raises(ConfigError):
        CostParams(tau_color=0.0)


def build_plain_volume(h=6, w=8, d_max=4, seed=6):
    left, right = random_layers(h, w, d_max, seed=seed)
    forest = build_forest(build_edge_list(left), "mst")
    intervals = full_range_intervals(forest, d_max)
    volume = masked_cost_volume(left, right, forest, intervals, CostParams())
    return left, right, forest, volume


def test_full_volume_matches_dense_grid():
    left, right, forest, volume = build_plain_volume()
    params = CostParams()
    pl, pr = prepare_layer(left), prepare_layer(right)
    dense = volume.to_dense()  # (n_pixels, d_max + 1)
    assert not np.isnan(dense).any()
    for x in range(left.d_max + 1):
        np.testing.assert_array_equal(
            dense[:, x].reshape(left.height, left.width),
            cost_grid(pl, pr, x, params),
        )


def test_volume_layout_and_ratio():
    left, right, forest, volume = build_plain_volume()
    n = left.n_pixels
    assert volume.total_entries() == n * (left.d_max + 1)
    assert volume.dense_entries() == n * (left.d_max + 1)
    assert volume.stored_ratio() == 1.0
    # rows follow BFS block order
    np.testing.assert_array_equal(volume.node_order, forest.order)


def test_volume_cost_at_pixel():
    left, right, forest, volume = build_plain_volume()
    params = CostParams()
    pl, pr = prepare_layer(left), prepare_layer(right)
    pixel = 13
    row, col = divmod(pixel, left.width)
    for x in volume.interval_for_pixel(pixel).tolist():
        expect = cost_at_pixels(
            pl, pr, x, np.array([row]), np.array([col]), params
        )[0]
        assert volume.cost_at(pixel, x) == expect


def test_masked_volume_rejects_bad_intervals():
    left, right, forest, _ = build_plain_volume()
    bad = [np.array([0, 0, 1])] * forest.n_trees  # unsorted / duplicated
    with pytest.raises(InternalError):
        masked_cost_volume(left, right, forest, bad, CostParams())
    empty = [np.array([], dtype=np.int64)] * forest.n_trees
    with pytest.raises(InternalError):
        masked_cost_volume(left, right, forest, empty, CostParams())
    over = [np.array([left.d_max + 1])] * forest.n_trees
    with pytest.raises(InternalError):
        masked_cost_volume(left, right, forest, over, CostParams())
