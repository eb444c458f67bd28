"""G-cut clustering: keep edges scoring above a threshold, merge transitively."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ValidationError
from .graph import KnnGraph, as_features, l2_normalize
from .metrics import bcubed_f, pairwise_f
from .multitest import sim_m_edges


class UnionFind:
    """Disjoint sets over ``0..n-1`` with union by rank and path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.components = n

    def __len__(self):
        return len(self.parent)

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if they were already joined."""
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

    def labels(self) -> np.ndarray:
        """Component ids numbered 0, 1, ... in order of each component's smallest member."""
        roots = [self.find(i) for i in range(len(self.parent))]
        ids: dict[int, int] = {}
        return np.array([ids.setdefault(r, len(ids)) for r in roots], dtype=np.int64)


@dataclass(frozen=True)
class ScoredEdgeList:
    a: np.ndarray
    b: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int64)
        b = np.asarray(self.b, dtype=np.int64)
        s = np.asarray(self.score, dtype=np.float64)
        if not (a.shape == b.shape == s.shape) or a.ndim != 1:
            raise ValidationError("edge arrays must be 1-D and equally long")
        if np.any(a == b):
            raise ValidationError("self-edges are not allowed")
        if not np.all(np.isfinite(s)):
            raise ValidationError("edge scores must be finite")
        for name, v in (("a", a), ("b", b), ("score", s)):
            object.__setattr__(self, name, v)

    def __len__(self):
        return self.a.size

    @classmethod
    def from_tuples(cls, edges) -> "ScoredEdgeList":
        edges = list(edges)
        if not edges:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        a, b, s = zip(*edges)
        return cls(np.array(a), np.array(b), np.array(s, dtype=np.float64))


def knn_edges(graph: KnnGraph, features, combine: str = "union", scorer: str = "cosine") -> ScoredEdgeList:
    """Undirected edges from a kNN graph.

    ``combine="union"`` keeps a pair if either endpoint lists the other,
    ``"intersection"`` only if both do. ``scorer`` is ``"cosine"`` of
    ``features`` or ``"simm"`` (real-valued Sim-M over the graph).
    """
    if combine not in ("union", "intersection"):
        raise ParameterError("combine must be 'union' or 'intersection'")
    if scorer not in ("cosine", "simm"):
        raise ParameterError("scorer must be 'cosine' or 'simm'")
    x = l2_normalize(as_features(features)).data
    seen: dict[tuple[int, int], int] = {}
    for i, j, _ in graph.edges():
        key = (min(i, j), max(i, j))
        seen[key] = seen.get(key, 0) + 1
    keep = sorted(k for k, c in seen.items() if combine == "union" or c == 2)
    if not keep:
        return ScoredEdgeList.from_tuples([])
    a, b = np.array(keep).T
    if scorer == "cosine":
        return ScoredEdgeList(a, b, np.einsum("ed,ed->e", x[a], x[b]))
    rows, cols, _, value, _ = sim_m_edges(graph, x)
    lookup = {(min(r, c), max(r, c)): v for r, c, v in zip(rows.tolist(), cols.tolist(), value.tolist())}
    return ScoredEdgeList(a, b, np.array([lookup[(i, j)] for i, j in keep]))


def g_cut(edges: ScoredEdgeList, n: int, threshold: float) -> np.ndarray:
    """Connected components of the edges scoring strictly above ``threshold``."""
    if not np.isfinite(threshold):
        raise ParameterError("threshold must be finite")
    if len(edges) and (edges.a.max() >= n or edges.b.max() >= n or min(edges.a.min(), edges.b.min()) < 0):
        raise ValidationError("edge endpoint out of range")
    uf = UnionFind(n)
    for i in np.nonzero(edges.score > threshold)[0]:
        uf.union(int(edges.a[i]), int(edges.b[i]))
    return uf.labels()


@dataclass(frozen=True)
class SweepResult:
    rows: list[tuple[float, float, float]]
    best_threshold: float
    best_fp: float
    best_fb: float


def threshold_sweep(edges: ScoredEdgeList, n: int, labels, grid, workers: int = 1) -> SweepResult:
    """G-cut at every grid threshold; best is ``argmax min(F_P, F_B)``, ties to the lower threshold."""
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise ParameterError("threshold grid is empty")

    def point(t):
        assign = g_cut(edges, n, t)
        return t, pairwise_f(assign, labels)[2], bcubed_f(assign, labels)[2]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(point, grid))
    else:
        rows = [point(t) for t in grid]
    best = max(rows, key=lambda r: (min(r[1], r[2]), -r[0]))
    return SweepResult(rows, *best)
