"""Feature storage, single-test similarity, exact kNN graphs and edge noise."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, UndefinedENRError, UndefinedSimilarityError, ValidationError

NORM_TOL = 1e-6
# Similarities are rounded before ranking so that exact duplicates tie
# regardless of how the BLAS blocks the product.
TIE_DECIMALS = 12


@dataclass(frozen=True)
class FeatureMatrix:
    """N x M node features. ``data`` is a read-only float64 copy."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"features must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("features contain non-finite values")
        if self.normalized:
            norms = np.linalg.norm(arr, axis=1)
            bad = (norms > 0) & (np.abs(norms - 1.0) > NORM_TOL)
            if bad.any():
                raise ValidationError(f"row {int(np.argmax(bad))} is flagged normalized but has norm {norms[bad][0]}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def zero_rows(self) -> np.ndarray:
        return ~np.any(self.data != 0, axis=1)

    def __len__(self):
        return self.rows


def as_features(x) -> FeatureMatrix:
    if isinstance(x, FeatureMatrix):
        return x
    return FeatureMatrix(x)


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray

    def __post_init__(self):
        arr = np.array(self.labels, copy=True)
        if arr.ndim != 1:
            raise ValidationError("labels must be one-dimensional")
        if arr.size and not np.issubdtype(arr.dtype, np.integer):
            as_int = arr.astype(np.int64)
            if not np.array_equal(as_int, arr):
                raise ValidationError("labels must be integers")
            arr = as_int
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise ValidationError("labels must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    def __len__(self):
        return self.labels.shape[0]


def as_labels(x) -> np.ndarray:
    if isinstance(x, LabelVector):
        return x.labels
    return LabelVector(x).labels


@dataclass(frozen=True)
class KnnGraph:
    """Directed probe -> neighbor lists.

    ``ids`` and ``scores`` are N x k arrays; a node with fewer than k
    neighbors has its trailing slots set to -1 / NaN and ``counts`` holds the
    true list length.
    """

    k: int
    ids: np.ndarray
    scores: np.ndarray
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.int64, copy=True)
        scores = np.array(self.scores, dtype=np.float64, copy=True)
        if ids.ndim != 2 or ids.shape != scores.shape:
            raise ValidationError("ids and scores must be matching 2-D arrays")
        n = ids.shape[0]
        if self.counts is None:
            counts = np.sum(ids >= 0, axis=1)
        else:
            counts = np.array(self.counts, dtype=np.int64, copy=True)
        valid = np.arange(ids.shape[1])[None, :] < counts[:, None]
        if np.any(ids[valid] >= n) or np.any(ids[valid] < 0):
            raise ValidationError("neighbor id out of range")
        if np.any(ids[valid] == np.nonzero(valid)[0]):
            raise ValidationError("self-loop in kNN graph")
        s = np.where(valid, scores, -np.inf)
        with np.errstate(invalid="ignore"):
            rising = np.diff(s, axis=1)[valid[:, 1:]] > 0
        if np.any(rising):
            raise ValidationError("neighbor scores must be non-increasing")
        ids[~valid] = -1
        scores[~valid] = np.nan
        for a in (ids, scores, counts):
            a.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        c = self.counts[i]
        return list(zip(self.ids[i, :c].tolist(), self.scores[i, :c].tolist()))

    def neighbor_ids(self, i: int) -> np.ndarray:
        return self.ids[i, : self.counts[i]]

    def edges(self) -> Iterable[tuple[int, int, float]]:
        for i in range(self.n):
            for j, s in self.neighbors(i):
                yield i, j, s

    @classmethod
    def from_lists(cls, lists: Sequence[Sequence[tuple[int, float]]], k: int | None = None) -> "KnnGraph":
        """Build a graph from explicit per-node ``(neighbor, score)`` lists."""
        width = max((len(x) for x in lists), default=0)
        k = width if k is None else k
        if width > k:
            raise ValidationError("list longer than k")
        ids = np.full((len(lists), max(k, 1)), -1, dtype=np.int64)
        scores = np.full(ids.shape, np.nan)
        for i, lst in enumerate(lists):
            for t, (j, s) in enumerate(lst):
                ids[i, t] = j
                scores[i, t] = s
        return cls(k=k, ids=ids, scores=scores, counts=[len(x) for x in lists])


def l2_normalize(features) -> FeatureMatrix:
    """Scale every nonzero row to unit Euclidean norm; zero rows stay zero."""
    x = as_features(features).data
    # pre-scale by the row max so tiny or huge rows do not under/overflow the norm
    peak = np.max(np.abs(x), axis=1, keepdims=True)
    x = np.divide(x, peak, out=np.zeros_like(x), where=peak > 0)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    out = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    return FeatureMatrix(out, normalized=True)


def sim_s(a, b, kernel: str = "cosine", sigma: float = 1.0) -> float:
    """Single-test similarity between two feature rows.

    ``kernel="gaussian"`` gives ``exp(-|a-b|^2 / (2 sigma^2))`` instead of the
    cosine.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if kernel == "gaussian":
        if sigma <= 0:
            raise ParameterError("sigma must be positive")
        return float(np.exp(-np.sum((a - b) ** 2) / (2.0 * sigma**2)))
    if kernel != "cosine":
        raise ParameterError(f"unknown kernel {kernel!r}")
    if not (a.any() and b.any()):
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    a = a / np.max(np.abs(a))
    b = b / np.max(np.abs(b))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _topk_rows(sims: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    # stable sort on -score keeps the lower id first among equal scores
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(sims, order, axis=1)


def build_knn_graph(features, k: int, chunk: int = 1024) -> KnnGraph:
    """Exact cosine kNN graph, excluding self, ties to the lower node id.

    Scores are cosines rounded to ``TIE_DECIMALS`` places; equal rounded
    scores count as ties.

    Brute force over row blocks of ``chunk`` probes, so memory stays at
    ``chunk x N`` similarities.
    """
    fm = as_features(features)
    if not fm.normalized:
        fm = l2_normalize(fm)
    x = fm.data
    n = x.shape[0]
    if not 1 <= k < n:
        raise ParameterError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    if fm.zero_rows.any():
        raise UndefinedSimilarityError("kNN search requires nonzero feature rows")
    ids = np.empty((n, k), dtype=np.int64)
    scores = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sims = x[start:stop] @ x.T
        np.clip(sims, -1.0, 1.0, out=sims)
        np.round(sims, TIE_DECIMALS, out=sims)
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        ids[start:stop], scores[start:stop] = _topk_rows(sims, k)
    return KnnGraph(k=k, ids=ids, scores=scores)


def enr(graph: KnnGraph, labels, node: int) -> float:
    """Fraction of ``node``'s edges that reach a different label."""
    lab = as_labels(labels)
    nb = graph.neighbor_ids(node)
    if nb.size == 0:
        raise UndefinedENRError(f"node {node} has no neighbors")
    return float(np.mean(lab[nb] != lab[node]))


def avg_enr(graph: KnnGraph, labels) -> float:
    """Mean per-node ENR over nodes that have at least one neighbor."""
    lab = as_labels(labels)
    if len(lab) != graph.n:
        raise ValidationError("label count does not match graph size")
    has = graph.counts > 0
    if not has.any():
        raise UndefinedENRError("graph has no edges")
    valid = np.arange(graph.ids.shape[1])[None, :] < graph.counts[:, None]
    nb_lab = lab[np.where(valid, graph.ids, 0)]
    noisy = np.sum((nb_lab != lab[:, None]) & valid, axis=1)
    rates = noisy[has] / graph.counts[has]
    return float(np.mean(rates))
