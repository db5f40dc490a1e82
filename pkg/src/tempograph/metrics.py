"""Ranking metrics: average precision and ROC AUC."""
from __future__ import annotations

import numpy as np


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores vs {len(labels)} labels")
    if not np.isfinite(scores).all():
        raise ValueError("non-finite score")
    return scores, labels


def average_precision(scores, labels) -> float:
    """Sum over distinct score thresholds of (recall gain) x (precision).

    Tied scores enter together as one threshold, so an all-tied input scores
    exactly the positive prevalence.
    """
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last position of every tie group
    last = np.ones(len(s), dtype=bool)
    last[:-1] = s[1:] != s[:-1]
    ends = last.nonzero()[0]
    tp_at = tp[ends]
    gain = tp_at.astype(np.float64)
    gain[1:] -= tp_at[:-1]
    return float(gain @ (tp_at / (ends + 1)) / n_pos)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney statistic; ties get their mean rank."""
    scores, labels = _validate(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    first = np.ones(len(s), dtype=bool)
    first[1:] = s[1:] != s[:-1]
    group = first.cumsum() - 1
    starts = first.nonzero()[0]
    stops = np.empty_like(starts)
    stops[:-1] = starts[1:]
    stops[-1] = len(s)
    # 1-based mean rank of each tie group
    mean_rank = (starts + stops + 1) / 2.0
    rank_sum = mean_rank[group][labels[order]].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
