import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpri.classify import (
    EvalReport,
    KnnModel,
    confusion_matrix,
    evaluate,
    knn_classify,
    report_from_confusion,
    split_train_test,
)
from mpri.cube import LabelMap
from mpri.errors import DomainError


def brute_force_knn(train, labels, query, k):
    """Sort all (distance, index) pairs, then vote; ties as documented."""
    dists = sorted((math.dist(query, t), i) for i, t in enumerate(train))
    votes = {}
    for _, i in dists[:k]:
        votes[labels[i]] = votes.get(labels[i], 0) + 1
    best = max(votes.values())
    return min(c for c, v in votes.items() if v == best)


class TestKnn:
    def test_exact_match(self):
        model = KnnModel(1, [[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], [1, 2, 3])
        assert knn_classify(model, [1.0, 1.0]) == 2

    def test_majority(self):
        model = KnnModel(3, [[0.0], [0.1], [0.2], [5.0]], [1, 1, 2, 2])
        assert knn_classify(model, [0.05]) == 1

    def test_vote_tie_smallest_class(self):
        model = KnnModel(2, [[1.0], [-1.0]], [5, 2])
        assert knn_classify(model, [0.0]) == 2

    def test_distance_tie_lower_index(self):
        model = KnnModel(1, [[1.0], [-1.0]], [5, 2])
        assert knn_classify(model, [0.0]) == 5

    def test_dimension_mismatch(self):
        model = KnnModel(1, [[0.0, 0.0]], [1])
        with pytest.raises(DomainError):
            knn_classify(model, [0.0])

    def test_bad_k(self):
        with pytest.raises(DomainError):
            KnnModel(3, [[0.0], [1.0]], [1, 2])

    @given(st.integers(1, 50), st.integers(1, 4), st.integers(1, 7), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_brute_force_oracle(self, n, d, k, seed):
        k = min(k, n)
        rng = np.random.default_rng(seed)
        # a coarse grid produces plenty of distance ties
        train = rng.integers(0, 4, size=(n, d)).astype(float)
        labels = rng.integers(1, 5, size=n)
        queries = rng.integers(0, 4, size=(10, d)).astype(float)
        pred = KnnModel(k, train, labels).predict(queries)
        expected = [brute_force_knn(train.tolist(), labels.tolist(), q.tolist(), k) for q in queries]
        assert pred.tolist() == expected

    @given(st.integers(0, 2**31))
    @settings(max_examples=20)
    def test_permutation_invariant_without_ties(self, seed):
        rng = np.random.default_rng(seed)
        train = rng.normal(size=(30, 3))
        labels = rng.integers(1, 4, size=30)
        q = rng.normal(size=(15, 3))
        perm = rng.permutation(30)
        a = KnnModel(3, train, labels).predict(q)
        b = KnnModel(3, train[perm], labels[perm]).predict(q)
        assert np.array_equal(a, b)


class TestMetrics:
    def test_hand_example(self):
        r = report_from_confusion([[45, 5], [10, 40]])
        assert abs(r.oa - 0.85) <= 1e-12
        assert abs(r.aa - 0.85) <= 1e-12
        assert abs(r.kappa - 0.7) <= 1e-12

    def test_swapped(self):
        r = report_from_confusion([[0, 50], [50, 0]])
        assert r.oa == 0.0
        assert abs(r.kappa + 1.0) <= 1e-12

    def test_perfect(self):
        truth = np.array([1, 2, 2, 3, 3, 3])
        r = evaluate(truth, truth)
        assert (r.oa, r.aa, r.kappa) == (1.0, 1.0, 1.0)

    def test_perfect_single_class(self):
        r = evaluate([1, 1], [1, 1])
        assert r.kappa == 1.0

    def test_label_maps_score_test_pixels_only(self):
        truth = LabelMap(np.array([[0, 1], [2, 0]]))
        pred = LabelMap(np.array([[2, 1], [1, 2]]))
        r = evaluate(pred, truth)
        assert r.confusion.tolist() == [[1, 0], [1, 0]]
        assert r.oa == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            evaluate(LabelMap(np.ones((2, 2), int)), LabelMap(np.ones((2, 3), int)))

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate(np.array([], int), np.array([], int))

    def test_missing_class(self):
        r = report_from_confusion([[5, 0, 0], [0, 0, 0], [1, 0, 4]])
        assert r.missing == [2]
        assert math.isnan(r.per_class[1])
        assert abs(r.aa - (1.0 + 0.8) / 2) <= 1e-15

    def test_equal_counts_equal_recalls(self):
        r = report_from_confusion([[8, 2, 0], [1, 8, 1], [0, 2, 8]])
        assert abs(r.aa - r.oa) <= 1e-15

    @given(st.integers(0, 2**31), st.integers(1, 5))
    @settings(max_examples=40)
    def test_adding_perfect_increases_kappa(self, seed, mult):
        rng = np.random.default_rng(seed)
        cm = rng.integers(0, 20, size=(3, 3))
        cm[0, 0] += 1
        base = report_from_confusion(cm)
        more = report_from_confusion(cm + mult * np.diag(cm.sum(axis=1)))
        if base.kappa < 1.0:
            assert more.kappa > base.kappa
        assert -1.0 <= base.kappa <= 1.0 and 0.0 <= base.oa <= 1.0

    def test_confusion_rows_are_truth(self):
        cm = confusion_matrix(np.array([1, 1, 2]), np.array([2, 1, 2]), 2)
        assert cm.tolist() == [[1, 1], [0, 1]]

    def test_report_round_trip(self):
        r = report_from_confusion([[45, 5, 0], [10, 40, 0], [0, 0, 0]])
        text = r.to_text()
        back = EvalReport.from_text(text)
        assert back.to_text() == text
        assert back.oa == r.oa and back.kappa == r.kappa and back.missing == [3]
        assert "oa=" in text and "per_class[1]=0.9" in text


class TestSplit:
    def test_minimum_one(self):
        labels = LabelMap(np.ones((5, 10), int))
        train, test = split_train_test(labels, 0.02, seed=0)
        assert (train.labels > 0).sum() == 1
        assert (test.labels > 0).sum() == 49

    def test_ceiling(self):
        labels = LabelMap(np.repeat([1, 2], [101, 50]).reshape(1, -1))
        train, _ = split_train_test(labels, 0.02, seed=0)
        assert (train.labels == 1).sum() == 3
        assert (train.labels == 2).sum() == 1

    def test_exact_multiple_not_rounded_up(self):
        labels = LabelMap(np.ones((1, 100), int))
        train, _ = split_train_test(labels, 0.07, seed=0)
        assert (train.labels > 0).sum() == 7

    @given(st.integers(0, 2**31), st.floats(0.01, 0.9))
    @settings(max_examples=30)
    def test_partition(self, seed, frac):
        rng = np.random.default_rng(seed)
        labels = LabelMap(rng.integers(0, 4, size=(8, 9)))
        train, test = split_train_test(labels, frac, seed)
        both = (train.labels > 0) & (test.labels > 0)
        assert not both.any()
        np.testing.assert_array_equal(train.labels + test.labels, labels.labels)
        again = split_train_test(labels, frac, seed)
        np.testing.assert_array_equal(again[0].labels, train.labels)

    def test_skipped_class(self, caplog):
        labels = LabelMap(np.array([[1, 1, 3, 3]]))
        train, test = split_train_test(labels, 0.5, seed=0)
        assert "class 2" in caplog.text
        assert set(np.unique(train.labels)) == {0, 1, 3}

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(DomainError):
            split_train_test(LabelMap(np.ones((2, 2), int)), frac)
