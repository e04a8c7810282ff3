"""Spanning trees and forests over the 4-connected pixel grid.

An edge between neighboring pixels p, q costs the largest per-channel
absolute intensity difference.  Trees are grown Kruskal-style with a
union-find: edges are visited in an order chosen by the tree variant (sorted
by weight for the minimum spanning tree, seeded shuffle for a random
spanning tree) and accepted when their endpoints are in different
components, optionally subject to an extra acceptance predicate.  That
predicate hook is the extension point for segment-aware variants that stop
merging across strong boundaries.

Everything here is deterministic: ties between equal-weight edges resolve in
grid scan order (per pixel, the edge to the right neighbor precedes the edge
to the neighbor below), the root of every tree is its lowest pixel id, and
BFS visits children in ascending id order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InternalError
from .pyramid import PyramidLayer
from .raster_io import RasterImage

AcceptFn = Callable[[int, int, int, int], bool]


@dataclass(frozen=True)
class EdgeList:
    """All 4-neighbor grid edges in scan order, |E| = 2WH - W - H."""

    u: np.ndarray  # (E,) int64 pixel ids, u < v
    v: np.ndarray
    weight: np.ndarray  # (E,) float64 in [0, 255]
    width: int
    height: int

    @property
    def n_edges(self) -> int:
        return self.u.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.width * self.height


def edge_weight(layer: PyramidLayer, p: tuple[int, int], q: tuple[int, int]) -> float:
    """Weight of the grid edge between 4-adjacent pixels p=(row, col) and q."""
    (pr, pc), (qr, qc) = p, q
    if abs(pr - qr) + abs(pc - qc) != 1:
        raise ConfigError(f"pixels {p} and {q} are not 4-adjacent")
    diff = np.abs(layer.intensities[pr, pc] - layer.intensities[qr, qc])
    return float(diff.max())


def build_edge_list(layer: PyramidLayer) -> EdgeList:
    """Enumerate grid edges in row-major pixel order, right edge before down edge."""
    h, w = layer.height, layer.width
    ids = np.arange(h * w, dtype=np.int64).reshape(h, w)
    img = layer.intensities

    has_right = np.zeros((h, w), dtype=np.int64)
    has_right[:, : w - 1] = 1
    has_down = np.zeros((h, w), dtype=np.int64)
    has_down[: h - 1, :] = 1
    slots = np.cumsum((has_right + has_down).ravel())
    base = (np.concatenate(([0], slots[:-1]))).reshape(h, w)
    n_edges = int(slots[-1]) if slots.size else 0

    u = np.empty(n_edges, dtype=np.int64)
    v = np.empty(n_edges, dtype=np.int64)
    weight = np.empty(n_edges, dtype=np.float64)

    if w > 1:
        slot_r = base[:, : w - 1].ravel()
        u[slot_r] = ids[:, : w - 1].ravel()
        v[slot_r] = ids[:, 1:].ravel()
        weight[slot_r] = np.abs(img[:, : w - 1] - img[:, 1:]).max(axis=2).ravel()
    if h > 1:
        slot_d = (base + has_right)[: h - 1, :].ravel()
        u[slot_d] = ids[: h - 1, :].ravel()
        v[slot_d] = ids[1:, :].ravel()
        weight[slot_d] = np.abs(img[: h - 1] - img[1:]).max(axis=2).ravel()

    expected = 2 * w * h - w - h
    if n_edges != expected:
        raise InternalError(f"edge count {n_edges} != 2WH-W-H = {expected}")
    return EdgeList(u=u, v=v, weight=weight, width=w, height=h)


def mst_edge_order(edges: EdgeList) -> np.ndarray:
    """Indices that sort edges by weight, stable so scan order breaks ties.

    Grid weights at the source level are integer gray-level differences in
    [0, 255]; a stable integer argsort lowers to an LSD radix (counting)
    pass, keeping the sort linear in the edge count.  Fractional weights
    from averaged pyramid layers fall back to a stable comparison sort.
    """
    w = edges.weight
    if w.size and np.all(w == np.floor(w)):
        return np.argsort(w.astype(np.int64), kind="stable")
    return np.argsort(w, kind="stable")


def rt_edge_order(edges: EdgeList, seed: int) -> np.ndarray:
    """A seeded uniform shuffle of the edge indices (random spanning tree)."""
    return np.random.default_rng(seed).permutation(edges.n_edges)


def edge_order(edges: EdgeList, tree_kind: str, seed: int = 0) -> np.ndarray:
    if tree_kind == "mst":
        return mst_edge_order(edges)
    if tree_kind == "rt":
        return rt_edge_order(edges, seed)
    raise ConfigError(f"unknown tree kind {tree_kind!r} (want 'mst' or 'rt')")


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        """Merge the sets rooted at a and b; returns the surviving root."""
        if self.size[a] < self.size[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        return a


@dataclass(frozen=True)
class RootedForest:
    """A rooted spanning forest in flat arrays keyed by pixel id.

    ``order`` lists nodes tree by tree in BFS sequence; ``tree_slices`` holds
    the block boundaries, so tree t occupies order[tree_slices[t] :
    tree_slices[t+1]] and starts with its root (the lowest pixel id in the
    component).  Within a block, nodes of equal depth are contiguous;
    ``level_bounds[t]`` gives the local offsets of each depth level, which is
    what lets the aggregation passes sweep one whole level per array op.
    """

    n_nodes: int
    parent: np.ndarray  # (n,) int64, parent[root] == root
    parent_weight: np.ndarray  # (n,) float64, 0 at roots
    depth: np.ndarray  # (n,) int64
    tree_id: np.ndarray  # (n,) int64
    order: np.ndarray  # (n,) int64 BFS order, trees contiguous
    pos: np.ndarray  # (n,) int64 inverse of order
    tree_slices: np.ndarray  # (n_trees + 1,) int64
    level_bounds: tuple[np.ndarray, ...]  # per tree, local depth-level offsets
    child_start: np.ndarray  # (n + 1,) int64 CSR over children
    child_list: np.ndarray  # (n - n_trees,) int64, ascending per parent

    @property
    def n_trees(self) -> int:
        return len(self.tree_slices) - 1

    @property
    def roots(self) -> np.ndarray:
        return self.order[self.tree_slices[:-1]]

    def children(self, node: int) -> np.ndarray:
        return self.child_list[self.child_start[node] : self.child_start[node + 1]]

    def tree_nodes(self, tree: int) -> np.ndarray:
        return self.order[self.tree_slices[tree] : self.tree_slices[tree + 1]]

    def similarities(self, gamma: float) -> np.ndarray:
        """Per-node similarity to the parent: exp(-w / (gamma * 255))."""
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        return np.exp(-self.parent_weight / (gamma * 255.0))


def _bfs_forest(n_nodes: int, acc_u: np.ndarray, acc_v: np.ndarray,
                acc_w: np.ndarray) -> RootedForest:
    # Symmetric CSR adjacency with neighbor lists ascending.
    nbr_of = np.concatenate([acc_u, acc_v])
    nbr_to = np.concatenate([acc_v, acc_u])
    nbr_w = np.concatenate([acc_w, acc_w])
    sort = np.lexsort((nbr_to, nbr_of))
    nbr_to = nbr_to[sort]
    nbr_w = nbr_w[sort]
    deg = np.bincount(nbr_of, minlength=n_nodes)
    adj_start = np.concatenate(([0], np.cumsum(deg)))

    parent = np.arange(n_nodes, dtype=np.int64)
    parent_weight = np.zeros(n_nodes, dtype=np.float64)
    depth = np.zeros(n_nodes, dtype=np.int64)
    tree_id = np.full(n_nodes, -1, dtype=np.int64)
    order = np.empty(n_nodes, dtype=np.int64)

    adj_start_l = adj_start.tolist()
    nbr_to_l = nbr_to.tolist()
    nbr_w_l = nbr_w.tolist()
    parent_l = parent.tolist()
    weight_l = parent_weight.tolist()
    depth_l = depth.tolist()
    tid_l = tree_id.tolist()
    order_l = order.tolist()

    slices = [0]
    filled = 0
    current = 0
    for start in range(n_nodes):
        if tid_l[start] >= 0:
            continue
        tid_l[start] = current
        head = filled
        order_l[filled] = start
        filled += 1
        while head < filled:
            node = order_l[head]
            head += 1
            d = depth_l[node] + 1
            for k in range(adj_start_l[node], adj_start_l[node + 1]):
                nxt = nbr_to_l[k]
                if tid_l[nxt] >= 0:
                    continue
                tid_l[nxt] = current
                parent_l[nxt] = node
                weight_l[nxt] = nbr_w_l[k]
                depth_l[nxt] = d
                order_l[filled] = nxt
                filled += 1
        slices.append(filled)
        current += 1
    if filled != n_nodes:
        raise InternalError("BFS did not reach every node")

    parent = np.asarray(parent_l, dtype=np.int64)
    parent_weight = np.asarray(weight_l, dtype=np.float64)
    depth = np.asarray(depth_l, dtype=np.int64)
    tree_id = np.asarray(tid_l, dtype=np.int64)
    order = np.asarray(order_l, dtype=np.int64)
    pos = np.empty(n_nodes, dtype=np.int64)
    pos[order] = np.arange(n_nodes, dtype=np.int64)
    tree_slices = np.asarray(slices, dtype=np.int64)

    level_bounds = []
    for t in range(len(slices) - 1):
        block_depth = depth[order[slices[t] : slices[t + 1]]]
        # BFS emits nondecreasing depth, so level starts come from searchsorted.
        top = int(block_depth[-1]) if block_depth.size else 0
        level_bounds.append(
            np.searchsorted(block_depth, np.arange(top + 2)).astype(np.int64)
        )

    is_child = parent != np.arange(n_nodes)
    child_nodes = np.flatnonzero(is_child)
    grouped = child_nodes[np.argsort(parent[child_nodes], kind="stable")]
    counts = np.bincount(parent[child_nodes], minlength=n_nodes)
    child_start = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)

    return RootedForest(
        n_nodes=n_nodes,
        parent=parent,
        parent_weight=parent_weight,
        depth=depth,
        tree_id=tree_id,
        order=order,
        pos=pos,
        tree_slices=tree_slices,
        level_bounds=tuple(level_bounds),
        child_start=child_start,
        child_list=grouped.astype(np.int64),
    )


def build_forest(
    edges: EdgeList,
    tree_kind: str = "mst",
    seed: int = 0,
    accept: AcceptFn | None = None,
) -> RootedForest:
    """Grow a spanning forest by scanning edges in the variant's order.

    An edge joins two trees when its endpoints live in different components
    and ``accept(u, v, root_u, root_v)`` (if given) approves the merge.
    Without a predicate the result spans each grid component with one tree.
    """
    visit = edge_order(edges, tree_kind, seed)
    uf = UnionFind(edges.n_nodes)
    u_l = edges.u.tolist()
    v_l = edges.v.tolist()
    w_l = edges.weight.tolist()
    acc_u: list[int] = []
    acc_v: list[int] = []
    acc_w: list[float] = []
    for e in visit.tolist():
        a, b = u_l[e], v_l[e]
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        if accept is not None and not accept(a, b, ra, rb):
            continue
        uf.union(ra, rb)
        acc_u.append(a)
        acc_v.append(b)
        acc_w.append(w_l[e])
    return _bfs_forest(
        edges.n_nodes,
        np.asarray(acc_u, dtype=np.int64),
        np.asarray(acc_v, dtype=np.int64),
        np.asarray(acc_w, dtype=np.float64),
    )


def forest_from_edges(
    n_nodes: int, u: np.ndarray, v: np.ndarray, weight: np.ndarray
) -> RootedForest:
    """Root an explicit edge set (assumed acyclic) without any grid context."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    if not (u.shape == v.shape == weight.shape):
        raise ConfigError("edge arrays must have matching shapes")
    return _bfs_forest(n_nodes, u, v, weight)


def forest_total_weight(forest: RootedForest) -> float:
    """Sum of accepted edge weights (parent links of non-root nodes)."""
    return float(forest.parent_weight.sum())


def apply_median_prefilter(image: RasterImage) -> RasterImage:
    """3x3 per-channel median filter (reflected borders), for noisy inputs."""
    out = np.empty_like(image.data)
    for c in range(image.channels):
        out[:, :, c] = ndimage.median_filter(image.data[:, :, c], size=3, mode="reflect")
    return RasterImage(out)
