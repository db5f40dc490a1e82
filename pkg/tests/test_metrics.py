import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from oracles import ap_oracle, auc_oracle, score_configurations
from tempograph.metrics import average_precision, roc_auc


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)
    assert average_precision([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0]) == 1.0
    assert average_precision([0.5] * 4, [1, 0, 1, 0]) == 0.5
    assert average_precision([0.5] * 5, [1, 0, 0, 0, 0]) == pytest.approx(0.2, abs=1e-15)


def test_auc_examples():
    assert roc_auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75
    assert roc_auc([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0
    assert roc_auc([0.3, 0.3], [1, 0]) == 0.5


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(0)
    labels = np.arange(1000) % 2
    assert abs(roc_auc(rng.random(1000), labels) - 0.5) < 0.05


def test_metric_errors():
    with pytest.raises(ValueError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        roc_auc([0.1], [1, 0])
    with pytest.raises(ValueError):
        average_precision([np.nan], [1])


def test_exhaustive_against_brute_force():
    start = time.perf_counter()
    cases = 0
    for scores, labels in score_configurations(8):
        if any(labels):
            assert abs(average_precision(scores, labels) - ap_oracle(scores, labels)) <= 1e-12
            cases += 1
        if any(labels) and not all(labels):
            assert abs(roc_auc(scores, labels) - auc_oracle(scores, labels)) <= 1e-12
    assert cases == sum(2 ** (n - 1) * (2 ** n - 1) for n in range(1, 9))
    assert time.perf_counter() - start < 30


@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_agrees_with_sklearn(rows):
    scores = np.array([s for s, _ in rows], float)
    labels = np.array([y for _, y in rows])
    if labels.any():
        assert average_precision(scores, labels) == pytest.approx(average_precision_score(labels, scores),
                                                                  abs=1e-12)
    if labels.any() and not labels.all():
        assert roc_auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=20), st.floats(0.1, 10), st.floats(-3, 3))
def test_invariant_to_monotone_rescaling(scores, a, b):
    labels = np.arange(len(scores)) % 2
    scores = np.array(scores)
    assert average_precision(scores, labels) == pytest.approx(average_precision(a * scores + b, labels),
                                                              abs=1e-12) or \
        len(np.unique(scores)) != len(np.unique(a * scores + b))
