"""Independent reference implementations used only by the tests."""
from itertools import permutations

import numpy as np


def neighbors_oracle(src, dst, t, i, query_t, limit=None):
    """Filter every event touching ``i`` strictly before ``query_t``, newest first."""
    rows = []
    for k in range(len(src)):
        if t[k] >= query_t:
            continue
        if src[k] == i:
            rows.append((int(dst[k]), float(t[k]), k))
        elif dst[k] == i:
            rows.append((int(src[k]), float(t[k]), k))
    rows.sort(key=lambda r: (r[1], r[2]), reverse=True)
    return rows if limit is None else rows[:limit]


def ap_oracle(scores, labels):
    """For each distinct threshold: precision of everything scored >= it, weighted by new recall."""
    scores = [float(s) for s in scores]
    labels = [bool(y) for y in labels]
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= thr]
        recall = sum(picked) / n_pos
        total += (recall - prev_recall) * (sum(picked) / len(picked))
        prev_recall = recall
    return total


def auc_oracle(scores, labels):
    """Concordant pairs plus half the tied pairs, over all positive-negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    good = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return good / (len(pos) * len(neg))


def relabel_events(src, dst, perm):
    return sorted(zip([perm[s] for s in src], [perm[d] for d in dst]))


def all_relabelings(n):
    return permutations(range(n))


def gru_scalar(x, h, W, U, b):
    """Hand-written GRU for 1-d inputs and state; W/U/b are dicts keyed by gate."""
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    z = sig(W["z"] * x + U["z"] * h + b["z"])
    r = sig(W["r"] * x + U["r"] * h + b["r"])
    hh = np.tanh(W["h"] * x + U["h"] * (r * h) + b["h"])
    return (1 - z) * hh + z * h


def score_configurations(max_n):
    """Every ranking shape of up to ``max_n`` events.

    A shape is a label sequence in rank order plus a split of the ranks into
    tie groups; any real-valued scoring reduces to exactly one of these. The
    rows are reversed on output so inputs never arrive pre-sorted.
    """
    for n in range(1, max_n + 1):
        for lab_bits in range(2 ** n):
            labels = [(lab_bits >> k) & 1 for k in range(n)]
            for cut_bits in range(2 ** (n - 1)):
                scores, level = [], float(n)
                for k in range(n):
                    if k and (cut_bits >> (k - 1)) & 1:
                        level -= 1.0
                    scores.append(level)
                yield np.array(scores[::-1]), np.array(labels[::-1], dtype=bool)
