import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from oracles import auroc_pairs, average_precision_steps
from lowprior.metrics import MetricError, ScoredPredictions, auprc, auroc

scored = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.6, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
))


def test_examples():
    assert auroc([0.9, 0.6, 0.4], [1, 1, 0]) == 1.0
    assert auroc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    assert auroc([0.8, 0.7, 0.6, 0.5], [1, 0, 1, 0]) == 0.75
    assert auprc([0.9, 0.8, 0.7], [1, 1, 0]) == 1.0
    assert abs(auprc([0.9, 0.8, 0.1], [1, 0, 1]) - 5 / 6) < 1e-15


def test_errors():
    with pytest.raises(MetricError, match="both classes"):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        auprc([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        ScoredPredictions([0.1], [1, 0])
    with pytest.raises(ValueError):
        ScoredPredictions([0.1, 0.2], [2, 0])


@given(scored)
def test_match_oracles(data):
    s, y = data
    assume(0 < sum(y) < len(y))
    assert abs(auroc(s, y) - auroc_pairs(s, y)) <= 1e-12
    assert abs(auprc(s, y) - average_precision_steps(s, y)) <= 1e-12


@given(st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 20), min_size=n, max_size=n), st.lists(st.integers(0, 1), min_size=n, max_size=n))))
def test_rank_invariance(data):
    k, y = data
    assume(0 < sum(y) < len(y))
    # a coarse grid keeps the transform strictly monotone in floating point too
    s = np.asarray(k) / 20.0
    t = np.exp(3 * s) - 7.0
    assert auroc(t, y) == auroc(s, y)
    assert auprc(t, y) == auprc(s, y)


@given(scored)
def test_label_complement(data):
    s, y = data
    assume(0 < sum(y) < len(y))
    assert abs(auroc(s, y) + auroc(s, [1 - v for v in y]) - 1) <= 1e-12


def test_random_scores_ap_near_prior():
    rng = np.random.default_rng(0)
    n, prior = 2000, 0.05
    labels = (rng.random(n) < prior).astype(int)
    aps = [auprc(rng.random(n), labels) for _ in range(200)]
    pi = labels.mean()
    se = np.std(aps, ddof=1) / np.sqrt(len(aps))
    # random-ranking AP sits above the prior by about H(n_pos)/n at finite n
    bias = np.sum(1 / np.arange(1, labels.sum() + 1)) / n
    assert abs(np.mean(aps) - pi) <= 3 * se + bias
