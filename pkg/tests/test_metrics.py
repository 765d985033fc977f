import itertools
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmedix import rng
from deepmedix.metrics import average_ranks, compute_metrics, confusion_matrix, roc_auc_binary


def pair_count_auc(scores, positives):
    """Brute-force oracle: fraction of (pos, neg) pairs ranked correctly, ties count half."""
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def binary_probs(pred):
    pred = np.asarray(pred)
    return np.stack([1.0 - pred, pred.astype(float)], axis=1)


class TestFixtures:
    def test_perfect(self):
        labels = np.array([0, 1, 2, 1, 0])
        rep = compute_metrics(np.eye(3)[labels], labels)
        assert (rep.precision, rep.recall, rep.f1, rep.roc_auc, rep.accuracy) == (1.0,) * 5

    def test_binary_confusion_fixture(self):
        # TP=2, FP=1, FN=1, TN=6
        labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        pred = np.array([1, 1, 0, 1, 0, 0, 0, 0, 0, 0])
        rep = compute_metrics(binary_probs(pred), labels)
        assert rep.confusion == [[6, 1], [1, 2]]
        assert rep.precision == 2 / 3 and rep.recall == 2 / 3 and rep.f1 == pytest.approx(2 / 3, abs=1e-15)
        assert rep.accuracy == 0.8

    def test_multiclass_hand_computed(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        pred = np.array([0, 1, 1, 1, 0, 2])
        rep = compute_metrics(np.eye(3)[pred], labels)
        # per class: P = (1/2, 2/3, 1), R = (1/2, 1, 1/2)
        assert rep.precision == pytest.approx((1 / 2 + 2 / 3 + 1) / 3, abs=1e-15)
        assert rep.recall == pytest.approx((1 / 2 + 1 + 1 / 2) / 3, abs=1e-15)
        f1 = [1 / 2, 0.8, 2 / 3]
        assert rep.f1 == pytest.approx(sum(f1) / 3, abs=1e-15)
        assert rep.accuracy == 4 / 6

    def test_absent_class_flagged(self):
        labels = np.array([0, 0, 1])
        rep = compute_metrics(np.eye(3)[[0, 1, 1]], labels)
        assert rep.undefined_classes == [2]
        assert rep.recall == pytest.approx((0.5 + 1) / 2)
        assert np.isnan(rep.per_class["2"]["recall"])

    def test_argmax_tie_goes_to_lowest(self):
        rep = compute_metrics(np.array([[0.5, 0.5]]), np.array([0]))
        assert rep.accuracy == 1.0

    def test_confusion_sums_and_json(self):
        labels = rng.choice(1, 50, 30) % 4
        probs = rng.uniform(2, (30, 4))
        rep = compute_metrics(probs, labels)
        assert np.sum(rep.confusion) == 30
        assert rep.accuracy == np.trace(rep.confusion) / 30
        assert json.loads(rep.to_json())["accuracy"] == rep.accuracy

    def test_bad_input(self):
        with pytest.raises(ValueError):
            compute_metrics(np.zeros((2, 2)), np.array([0]))
        with pytest.raises(ValueError):
            compute_metrics(np.zeros((0, 2)), np.array([], dtype=int))


class TestAuc:
    def test_extremes(self):
        y = np.array([0, 0, 1, 1])
        assert roc_auc_binary([0.1, 0.2, 0.8, 0.9], y) == 1.0
        assert roc_auc_binary([0.5] * 4, y) == 0.5
        assert roc_auc_binary([0.9, 0.8, 0.2, 0.1], y) == 0.0
        assert np.isnan(roc_auc_binary([0.1, 0.2], [1, 1]))

    def test_average_ranks(self):
        np.testing.assert_array_equal(average_ranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1, 3.5, 2])

    @given(st.integers(0, 2 ** 32), st.integers(2, 40))
    def test_matches_pair_counting(self, seed, n):
        y = rng.uniform(seed, n) > 0.5
        y[0], y[1] = True, False
        s = np.round(rng.uniform(seed + 1, n), 1)  # rounding creates ties
        assert abs(roc_auc_binary(s, y) - pair_count_auc(s, y)) < 1e-12

    @given(st.integers(0, 2 ** 32))
    def test_monotone_invariance(self, seed):
        y = np.arange(20) % 2 == 0
        s = rng.normal(seed, 20)
        assert roc_auc_binary(s, y) == roc_auc_binary(np.exp(3 * s) + 1, y)

    def test_macro_f1_is_mean_of_per_class(self):
        labels = np.arange(12) % 3
        rep = compute_metrics(rng.uniform(5, (12, 3)), labels)
        assert rep.f1 == pytest.approx(np.mean([rep.per_class[str(c)]["f1"] for c in range(3)]), abs=1e-15)


def test_confusion_matrix_layout():
    np.testing.assert_array_equal(confusion_matrix([0, 1, 1], [1, 1, 0], 2), [[0, 1], [1, 1]])
