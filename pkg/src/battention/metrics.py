"""Evaluation metrics: AUC / ROC over scored pairs, mAP, Pairwise and BCubed F."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError
from .graph import TIE_DECIMALS, as_features, as_labels, l2_normalize


def _split_pairs(pairs):
    """Accept ``(scores, positive)`` arrays or an iterable of ``(score, positive)``."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 1:
        scores, pos = pairs
    else:
        arr = list(pairs)
        scores = [s for s, _ in arr]
        pos = [p for _, p in arr]
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(pos, dtype=bool)
    if scores.shape != pos.shape or scores.ndim != 1 or scores.size == 0:
        raise ValidationError("need a non-empty list of (score, positive) pairs")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == pos.size:
        raise ValidationError("AUC/ROC need at least one positive and one negative")
    return scores, pos


def auc(pairs) -> float:
    """Mann-Whitney AUC via rank sums; tied scores count one half."""
    scores, pos = _split_pairs(pairs)
    ranks = rankdata(scores)
    n_pos = pos.sum()
    n_neg = pos.size - n_pos
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(pairs) -> list[tuple[float, float, float]]:
    """ROC sweep over distinct thresholds, highest first.

    The first point is ``(0, 0, +inf)``; each later point classifies
    ``score >= threshold`` as positive and the last reaches ``(1, 1)``.
    """
    scores, pos = _split_pairs(pairs)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    n_pos, n_neg = tp[-1], fp[-1]
    pts = [(0.0, 0.0, float("inf"))]
    pts += [(fp[i] / n_neg, tp[i] / n_pos, float(s[i])) for i in last]
    return [(float(a), float(b), c) for a, b, c in pts]


def trapezoid_area(points) -> float:
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class MapResult:
    value: float
    skipped: int


def average_precision(relevant_in_rank_order) -> float:
    """Mean of precision@i over the ranks i that hold a relevant item."""
    r = np.asarray(relevant_in_rank_order, dtype=bool)
    hits = np.nonzero(r)[0]
    if hits.size == 0:
        raise ValidationError("no relevant item")
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def mean_average_precision(features, labels, return_skipped: bool = False, chunk: int = 512):
    """Each node probes all others ranked by cosine; mAP is the mean AP.

    Probes without any same-label node are left out; pass
    ``return_skipped=True`` to get a :class:`MapResult` with their count.
    Ties in similarity (after rounding to ``TIE_DECIMALS``) are ordered by node id.
    """
    x = l2_normalize(as_features(features)).data
    lab = as_labels(labels)
    n = x.shape[0]
    if lab.shape[0] != n:
        raise ValidationError("labels and features differ in length")
    aps = []
    skipped = 0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sims = np.round(x[start:stop] @ x.T, TIE_DECIMALS)
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, : n - 1]
        rel = lab[order] == lab[start:stop, None]
        n_rel = rel.sum(axis=1)
        cum = np.cumsum(rel, axis=1)
        prec = cum / np.arange(1, n)[None, :]
        ap_sum = np.sum(prec * rel, axis=1)
        ok = n_rel > 0
        skipped += int((~ok).sum())
        aps.append(ap_sum[ok] / n_rel[ok])
    aps = np.concatenate(aps) if aps else np.array([])
    if aps.size == 0:
        raise ValidationError("no probe has a relevant gallery item")
    value = float(aps.mean())
    return MapResult(value, skipped) if return_skipped else value


def _f(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def _contingency(assignment, labels):
    a = np.asarray(assignment)
    lab = as_labels(labels)
    if a.shape != lab.shape:
        raise ValidationError("assignment and labels differ in length")
    if a.size and (np.any(a < 0) or not np.issubdtype(a.dtype, np.integer)):
        raise ValidationError("cluster ids must be non-negative integers")
    _, ci = np.unique(a, return_inverse=True)
    _, li = np.unique(lab, return_inverse=True)
    table = np.zeros((ci.max() + 1, li.max() + 1), dtype=np.int64)
    np.add.at(table, (ci, li), 1)
    return table, ci, li


def pairwise_f(assignment, labels) -> tuple[float, float, float]:
    """Precision/recall/F over unordered node pairs.

    With no same-cluster pair the precision is 1; with no same-label pair the
    recall is 1; F is 0 when both precision and recall are 0.
    """
    table, _, _ = _contingency(assignment, labels)

    def pairs(c):
        c = c.astype(np.float64)
        return float(np.sum(c * (c - 1) / 2))

    tp = pairs(table)
    same_cluster = pairs(table.sum(axis=1))
    same_label = pairs(table.sum(axis=0))
    precision = 1.0 if same_cluster == 0 else tp / same_cluster
    recall = 1.0 if same_label == 0 else tp / same_label
    return precision, recall, _f(precision, recall)


def bcubed_f(assignment, labels) -> tuple[float, float, float]:
    """Per-node precision and recall averaged over nodes, F of the averages."""
    table, ci, li = _contingency(assignment, labels)
    overlap = table[ci, li].astype(np.float64)
    precision = float(np.mean(overlap / table.sum(axis=1)[ci]))
    recall = float(np.mean(overlap / table.sum(axis=0)[li]))
    return precision, recall, _f(precision, recall)
