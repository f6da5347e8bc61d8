"""Vietoris-Rips persistence in dimensions 0 and 1.

Two independent routes to beta_0 are provided: :func:`betti0_at` runs
union-find on the epsilon-graph, while :func:`vr_persistence` reduces the
edge and triangle boundary matrices over Z/2 (triangles first, so that
positive edges are cleared from the edge matrix before it is reduced).

Simplices are ordered by filtration value, then lexicographically by vertex
indices. Pairs of zero persistence are not reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .errors import ArgumentError, ResourceError

DEFAULT_MAX_SIMPLICES = 5_000_000
DEFAULT_BETA1_CAP = 300


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ArgumentError(f"point cloud needs shape (n>=1, d), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ArgumentError("point cloud has non-finite coordinates")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, order=True)
class PersistencePair:
    dim: int
    birth: float
    death: float

    def alive_at(self, eps: float) -> bool:
        return self.birth <= eps < self.death


@dataclass
class BettiCurve:
    dim: int
    epsilons: np.ndarray
    counts: np.ndarray


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return PointCloud(cloud).points


def squared_distances(points: np.ndarray) -> np.ndarray:
    """Condensed squared Euclidean distances (``pdist`` ordering)."""
    return pdist(points, "sqeuclidean")


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.components = n

    def find(self, a: int) -> int:
        root = a
        parent = self.parent
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.components -= 1
        return True


def betti0_at(cloud, epsilon: float) -> int:
    """Connected components of the graph joining points at distance <= epsilon."""
    if epsilon < 0:
        raise ArgumentError("epsilon must be >= 0")
    pts = _points(cloud)
    n = pts.shape[0]
    if n == 1:
        return 1
    d2 = squared_distances(pts)
    rows, cols = np.triu_indices(n, 1)
    hit = np.flatnonzero(d2 <= epsilon * epsilon)
    uf = UnionFind(n)
    for a, b in zip(rows[hit].tolist(), cols[hit].tolist()):
        uf.union(a, b)
    return uf.components


def _sorted_edges(pts: np.ndarray, max_epsilon: float):
    n = pts.shape[0]
    d2 = squared_distances(pts)
    rows, cols = np.triu_indices(n, 1)
    if math.isfinite(max_epsilon):
        keep = d2 <= max_epsilon * max_epsilon
        rows, cols, d2 = rows[keep], cols[keep], d2[keep]
    order = np.lexsort((cols, rows, d2))
    return rows[order], cols[order], np.sqrt(d2[order])


def _triangles(n: int, rows: np.ndarray, cols: np.ndarray, budget: int):
    """All triangles of the edge set as (i<j<k) plus their three edge ids."""
    eid = np.full((n, n), -1, dtype=np.int64)
    eid[rows, cols] = np.arange(len(rows))
    eid[cols, rows] = eid[rows, cols]
    adj = eid >= 0
    tri, edge_ids = [], []
    total = 0
    for i in range(n - 2):
        nb = np.flatnonzero(adj[i, i + 1:]) + i + 1
        if len(nb) < 2:
            continue
        a, b = np.triu_indices(len(nb), 1)
        j, k = nb[a], nb[b]
        ok = adj[j, k]
        j, k = j[ok], k[ok]
        total += len(j)
        if total > budget:
            raise ResourceError(
                f"more than {budget} triangles for {n} points; subsample the cloud "
                "or lower max_epsilon"
            )
        tri.append(np.column_stack([np.full(len(j), i), j, k]))
        edge_ids.append(np.column_stack([eid[i, j], eid[i, k], eid[j, k]]))
    if not tri:
        return np.empty((0, 3), dtype=np.int64), np.empty((0, 3), dtype=np.int64)
    return np.concatenate(tri), np.concatenate(edge_ids)


def _reduce_column(col: set, pivots: dict) -> int:
    """Reduce ``col`` in place against earlier columns; returns its low or -1."""
    while col:
        low = max(col)
        other = pivots.get(low)
        if other is None:
            return low
        col ^= other
    return -1


def vr_persistence(cloud, max_epsilon: float = math.inf, max_dim: int = 1,
                   max_simplices: int = DEFAULT_MAX_SIMPLICES) -> list[PersistencePair]:
    """Persistence pairs of the Rips filtration truncated at ``max_epsilon``.

    Classes still alive at ``max_epsilon`` get ``death = inf``.
    """
    if max_dim not in (0, 1):
        raise ArgumentError("max_dim must be 0 or 1")
    if not max_epsilon > 0:
        raise ArgumentError("max_epsilon must be positive")
    pts = _points(cloud)
    n = pts.shape[0]
    rows, cols, f_edge = _sorted_edges(pts, max_epsilon)
    n_edges = len(rows)
    pairs: list[PersistencePair] = []

    cleared: set[int] = set()
    if max_dim >= 1 and n_edges:
        tri, tri_edges = _triangles(n, rows, cols, max_simplices - n - n_edges)
        # Edge ids are filtration ranks, so the max edge id orders triangles by
        # value; ties in value fall back to lexicographic vertex order.
        f_tri_rank = tri_edges.max(axis=1)
        f_tri = f_edge[f_tri_rank]
        order = np.lexsort((tri[:, 2], tri[:, 1], tri[:, 0], f_tri))
        # Each positive edge is the pivot of at most one triangle column, so
        # their count bounds the pivots and lets the reduction stop early.
        graph = csr_matrix((np.ones(n_edges), (rows, cols)), shape=(n, n))
        n_comp = connected_components(graph, directed=False)[0]
        positive = n_edges - (n - n_comp)
        pivots: dict[int, set] = {}
        for t in order.tolist():
            if len(pivots) == positive:
                break
            col = set(tri_edges[t].tolist())
            low = _reduce_column(col, pivots)
            if low >= 0:
                pivots[low] = col
                cleared.add(low)
                if f_tri[t] > f_edge[low]:
                    pairs.append(PersistencePair(1, float(f_edge[low]), float(f_tri[t])))

    vpivots: dict[int, set] = {}
    essential_edges = []
    for e in range(n_edges):
        if e in cleared:
            continue
        col = {int(rows[e]), int(cols[e])}
        low = _reduce_column(col, vpivots)
        if low >= 0:
            vpivots[low] = col
            if f_edge[e] > 0:
                pairs.append(PersistencePair(0, 0.0, float(f_edge[e])))
        else:
            essential_edges.append(e)
    for v in range(n):
        if v not in vpivots:
            pairs.append(PersistencePair(0, 0.0, math.inf))
    if max_dim >= 1:
        for e in essential_edges:
            pairs.append(PersistencePair(1, float(f_edge[e]), math.inf))
    return sorted(pairs)


def betti_at(pairs, dim: int, epsilon: float) -> int:
    return sum(1 for p in pairs if p.dim == dim and p.alive_at(epsilon))


def betti_curve(pairs, dim: int, eps_grid) -> BettiCurve:
    grid = np.asarray(eps_grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ArgumentError("epsilon grid must be sorted")
    sel = [p for p in pairs if p.dim == dim]
    births = np.array([p.birth for p in sel])
    deaths = np.array([p.death for p in sel])
    if not sel:
        return BettiCurve(dim, grid, np.zeros(len(grid), dtype=np.int64))
    counts = ((births[None, :] <= grid[:, None]) & (grid[:, None] < deaths[None, :])).sum(axis=1)
    return BettiCurve(dim, grid, counts.astype(np.int64))


def subsample(cloud, m: int, seed: int = 0, method: str = "uniform") -> PointCloud:
    """Uniform sampling without replacement, or greedy max-min landmarks."""
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    n = cloud.n
    if not 1 <= m <= n:
        raise ArgumentError(f"cannot subsample {m} of {n} points")
    rng = np.random.default_rng(seed)
    if method == "uniform":
        idx = rng.choice(n, size=m, replace=False)
    elif method == "maxmin":
        idx = np.empty(m, dtype=np.int64)
        idx[0] = rng.integers(n)
        dmin = np.sum((cloud.points - cloud.points[idx[0]]) ** 2, axis=1)
        for t in range(1, m):
            idx[t] = int(np.argmax(dmin))
            dmin = np.minimum(dmin, np.sum((cloud.points - cloud.points[idx[t]]) ** 2, axis=1))
    else:
        raise ArgumentError(f"unknown subsample method {method!r}")
    labels = None if cloud.labels is None else np.asarray(cloud.labels)[idx]
    return PointCloud(cloud.points[idx], labels)


def diameter(cloud) -> float:
    pts = _points(cloud)
    if pts.shape[0] < 2:
        return 0.0
    return float(np.sqrt(squared_distances(pts).max()))


def distance_matrix(cloud) -> np.ndarray:
    return np.sqrt(squareform(squared_distances(_points(cloud))))
