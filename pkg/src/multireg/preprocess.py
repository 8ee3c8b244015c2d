"""Grid subsampling, superpoint partition, kNN tables and geodesic distances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import EmptySuperpoints, KTooLarge, NonPositiveVoxel

BACKGROUND = -1


@dataclass
class PointCloud:
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(self.labels) != len(self.points):
                raise ValueError("labels must cover every point")

    def __len__(self):
        return len(self.points)


@dataclass
class SuperpointGraph:
    """Superpoints of one cloud with their patches and neighbourhoods.

    ``knn[i]`` lists ``k`` superpoint indices, the anchor itself first;
    ``geodesic[i, j]`` is the graph distance from ``i`` to ``knn[i, j]``.
    """

    dense: np.ndarray
    superpoints: np.ndarray
    patch_of: list
    knn: np.ndarray
    geodesic: Optional[np.ndarray] = None
    dense_labels: Optional[np.ndarray] = None
    superpoint_labels: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.knn.shape[1]

    @property
    def point_to_superpoint(self) -> np.ndarray:
        owner = np.empty(len(self.dense), dtype=np.int64)
        for i, patch in enumerate(self.patch_of):
            owner[patch] = i
        return owner


def _majority(groups: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    # per group, most frequent label; ties go to the smallest label
    pairs, counts = np.unique(np.stack([groups, labels], axis=1), axis=0, return_counts=True)
    order = np.lexsort((pairs[:, 1], -counts, pairs[:, 0]))
    pairs = pairs[order]
    first = np.ones(len(pairs), dtype=bool)
    first[1:] = pairs[1:, 0] != pairs[:-1, 0]
    out = np.full(n_groups, BACKGROUND, dtype=np.int64)
    out[pairs[first, 0]] = pairs[first, 1]
    return out


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One point per occupied voxel, at the centroid of its members.

    Output order follows the lexicographic order of the integer voxel keys.
    """
    if not voxel > 0:
        raise NonPositiveVoxel(f"voxel size must be positive, got {voxel}")
    pts = cloud.points
    if len(pts) == 0:
        return PointCloud(pts.copy(), None if cloud.labels is None else cloud.labels.copy())
    keys = np.floor(pts / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n = len(counts)
    sums = np.zeros((n, 3))
    np.add.at(sums, inverse, pts)
    centroids = sums / counts[:, None]
    labels = None
    if cloud.labels is not None:
        labels = _majority(inverse, cloud.labels, n)
    return PointCloud(centroids, labels)


def build_pyramid(cloud: PointCloud, base_voxel: float, stages: int) -> list:
    """Levels of increasingly coarse grid subsampling, voxel doubling per stage.

    Each level is subsampled from the previous one; the first level holds the
    dense points and the last the superpoints.
    """
    if stages < 2:
        raise ValueError("a pyramid needs at least 2 stages")
    levels = [voxel_downsample(cloud, base_voxel)]
    for s in range(1, stages):
        levels.append(voxel_downsample(levels[-1], base_voxel * 2 ** s))
    return levels


def point_to_node(dense, superpoints) -> list:
    """Assign every dense point to its nearest superpoint.

    Returns one sorted index array per superpoint (possibly empty). Distance
    ties go to the lower superpoint index.
    """
    dense = np.asarray(dense, dtype=np.float64).reshape(-1, 3)
    sp = np.asarray(superpoints, dtype=np.float64).reshape(-1, 3)
    if len(sp) == 0:
        raise EmptySuperpoints("point-to-node partition needs superpoints")
    if len(dense) == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(len(sp))]
    kq = min(2, len(sp))
    dist, idx = cKDTree(sp).query(dense, k=kq)
    dist, idx = dist.reshape(len(dense), kq), idx.reshape(len(dense), kq)
    owner = idx[:, 0].copy()
    if kq == 2:
        tie = dist[:, 1] == dist[:, 0]
        owner[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
    order = np.argsort(owner, kind="stable")
    bounds = np.searchsorted(owner[order], np.arange(len(sp) + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(len(sp))]


def knn_table(superpoints, k: int) -> np.ndarray:
    """``(n, k)`` neighbour indices sorted by distance, anchor in slot 0.

    Equal distances are ordered by ascending index.
    """
    sp = np.asarray(superpoints, dtype=np.float64).reshape(-1, 3)
    n = len(sp)
    if k > n:
        raise KTooLarge(f"k={k} exceeds the {n} available superpoints")
    if k < 1:
        raise ValueError("k must be positive")
    # a few spare neighbours so that ties at the k-th slot resolve by index
    kq = min(n, k + 4)
    dist, idx = cKDTree(sp).query(sp, k=kq)
    dist, idx = dist.reshape(n, kq), idx.reshape(n, kq)
    dist = np.where(idx == np.arange(n)[:, None], -1.0, dist)  # self first even on duplicates
    order = np.lexsort((idx, dist), axis=1)
    return np.take_along_axis(idx, order, axis=1)[:, :k].astype(np.int64)


def geodesic_table(superpoints, knn: np.ndarray, graph_k: Optional[int] = None,
                   cap_factor: float = 10.0) -> np.ndarray:
    """Shortest-path length from each anchor to each of its kNN slots.

    Paths run over the symmetrised graph formed by the first ``graph_k`` slots
    of ``knn`` with Euclidean edge weights. Unreachable entries, and paths
    longer than ``cap_factor`` times the longest edge, take that cap value.
    """
    sp = np.asarray(superpoints, dtype=np.float64).reshape(-1, 3)
    n, k = knn.shape
    gk = k if graph_k is None else max(1, min(graph_k, k))
    rows = np.repeat(np.arange(n), gk - 1)
    cols = knn[:, 1:gk].reshape(-1)
    w = np.linalg.norm(sp[rows] - sp[cols], axis=1)
    if len(w) == 0:
        geo = np.zeros((n, k))
        geo[:, 1:] = np.inf
        max_edge = 0.0
    else:
        # zero-length edges would vanish from the sparse matrix
        w = np.maximum(w, 1e-12)
        graph = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
        graph = graph.maximum(graph.T)
        max_edge = float(w.max())
        dist = dijkstra(graph, directed=False, limit=cap_factor * max_edge)
        geo = np.take_along_axis(dist, knn, axis=1)
    cap = cap_factor * max_edge
    geo[~np.isfinite(geo) | (geo > cap)] = cap
    geo[:, 0] = 0.0
    # metric lower bound despite the 1e-12 edge clamp and the cap
    eucl = np.linalg.norm(sp[knn] - sp[:, None, :], axis=2)
    return np.maximum(geo, eucl)


def build_graph(cloud: PointCloud, base_voxel: float, stages: int, k: int,
                geodesic_k: Optional[int] = None) -> SuperpointGraph:
    """Full multi-resolution structure for one cloud.

    ``k`` is clamped to the number of superpoints.
    """
    levels = build_pyramid(cloud, base_voxel, stages)
    dense, coarse = levels[0], levels[-1]
    patches = point_to_node(dense.points, coarse.points)
    kk = min(k, len(coarse.points))
    knn = knn_table(coarse.points, kk)
    geo = geodesic_table(coarse.points, knn, graph_k=geodesic_k)
    sp_labels = None
    if dense.labels is not None:
        sp_labels = coarse.labels.copy()
        for i, patch in enumerate(patches):
            if len(patch):
                vals, counts = np.unique(dense.labels[patch], return_counts=True)
                sp_labels[i] = vals[np.argmax(counts)]
    return SuperpointGraph(
        dense=dense.points,
        superpoints=coarse.points,
        patch_of=patches,
        knn=knn,
        geodesic=geo,
        dense_labels=dense.labels,
        superpoint_labels=sp_labels,
    )
