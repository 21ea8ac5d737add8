"""Evaluation protocol tests with a brute-force permutation oracle."""

import itertools

import numpy as np
import pytest

from unsupseg.containers import LabelMap
from unsupseg.errors import DataError
from unsupseg.evaluation import (
    ConfusionMatrix,
    accumulate_confusion,
    compute_metrics,
    format_report,
    hungarian_match,
    parse_report,
)


def lmap(arr, k):
    return LabelMap(np.asarray(arr, np.uint16), num_classes=k)


def brute_force_best(counts):
    """Maximum matched total over all permutations of the padded matrix."""
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    best = -1
    for perm in itertools.permutations(range(size)):
        total = sum(int(padded[r, perm[r]]) for r in range(size))
        best = max(best, total)
    return best


class TestAccumulate:
    def test_perfect_prediction_diagonal(self):
        arr = np.tile(np.array([0, 1], np.uint16), (10, 5))
        cm = accumulate_confusion(lmap(arr, 2), lmap(arr, 2))
        assert cm.total == 100
        assert np.trace(cm.counts) == 100

    def test_empty_is_zero_matrix(self):
        cm = ConfusionMatrix.zeros(3, 3)
        assert cm.total == 0

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        a_pred = lmap(rng.integers(0, 3, (4, 4)), 3)
        a_gt = lmap(rng.integers(0, 3, (4, 4)), 3)
        b_pred = lmap(rng.integers(0, 3, (4, 4)), 3)
        b_gt = lmap(rng.integers(0, 3, (4, 4)), 3)
        ab = accumulate_confusion(b_pred, b_gt, accumulate_confusion(a_pred, a_gt))
        ba = accumulate_confusion(a_pred, a_gt, accumulate_confusion(b_pred, b_gt))
        assert np.array_equal(ab.counts, ba.counts)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DataError):
            accumulate_confusion(lmap(np.zeros((2, 2)), 2), lmap(np.zeros((2, 3)), 2))


class TestHungarian:
    def test_identity_dominant(self):
        counts = np.eye(4, dtype=np.int64) * 50 + 1
        assert hungarian_match(ConfusionMatrix(counts)) == {0: 0, 1: 1, 2: 2, 3: 3}

    def test_recovers_inverse_permutation(self):
        base = np.eye(4, dtype=np.int64) * 50 + 1
        perm = [2, 0, 3, 1]
        shuffled = base[perm]
        match = hungarian_match(ConfusionMatrix(shuffled))
        for row, cls in match.items():
            assert cls == perm[row]

    def test_matches_brute_force_4x4(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            counts = rng.integers(0, 50, size=(4, 4)).astype(np.int64)
            cm = ConfusionMatrix(counts)
            match = hungarian_match(cm)
            total = sum(int(counts[r, c]) for r, c in match.items())
            assert total == brute_force_best(counts)

    def test_matches_brute_force_6x6(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            counts = rng.integers(0, 100, size=(6, 6)).astype(np.int64)
            match = hungarian_match(ConfusionMatrix(counts))
            total = sum(int(counts[r, c]) for r, c in match.items())
            assert total == brute_force_best(counts)

    def test_lexicographic_tie_break(self):
        # All-equal matrix: every permutation is optimal; the identity is
        # the lexicographically smallest assignment.
        counts = np.full((3, 3), 7, dtype=np.int64)
        assert hungarian_match(ConfusionMatrix(counts)) == {0: 0, 1: 1, 2: 2}

    def test_rectangular_more_clusters_than_classes(self):
        counts = np.array([[10, 0], [0, 10], [5, 5]], dtype=np.int64)
        match = hungarian_match(ConfusionMatrix(counts))
        assert match == {0: 0, 1: 1}  # cluster 2 unmatched


class TestMetrics:
    def test_perfect_prediction(self):
        arr = np.tile(np.array([0, 1, 2], np.uint16), (9, 3))
        cm = accumulate_confusion(lmap(arr, 3), lmap(arr, 3))
        report = compute_metrics(cm, hungarian_match(cm))
        assert report.miou == pytest.approx(100.0)
        assert report.accuracy == pytest.approx(100.0)

    def test_complement_prediction_still_perfect(self):
        gt = np.zeros((10, 10), np.uint16)
        gt[:, 5:] = 1
        pred = 1 - gt
        cm = accumulate_confusion(lmap(pred, 2), lmap(gt, 2))
        report = compute_metrics(cm, hungarian_match(cm))
        assert report.miou == pytest.approx(100.0)
        assert report.accuracy == pytest.approx(100.0)

    def test_all_one_class_prediction(self):
        # gt half 0 / half 1, prediction all 0 on 100 px:
        # Acc 50, IoU = (0.5, 0) -> mIoU 25.
        gt = np.zeros((10, 10), np.uint16)
        gt[5:] = 1
        pred = np.zeros((10, 10), np.uint16)
        cm = accumulate_confusion(lmap(pred, 2), lmap(gt, 2))
        report = compute_metrics(cm, hungarian_match(cm))
        assert report.accuracy == pytest.approx(50.0)
        assert report.iou[0] == pytest.approx(50.0)
        assert report.iou[1] == pytest.approx(0.0)
        assert report.miou == pytest.approx(25.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        gt = rng.integers(0, 4, size=(20, 20)).astype(np.uint16)
        pred = rng.integers(0, 4, size=(20, 20)).astype(np.uint16)
        perm = np.array([3, 0, 2, 1], np.uint16)
        cm1 = accumulate_confusion(lmap(pred, 4), lmap(gt, 4))
        cm2 = accumulate_confusion(lmap(perm[pred], 4), lmap(gt, 4))
        r1 = compute_metrics(cm1, hungarian_match(cm1))
        r2 = compute_metrics(cm2, hungarian_match(cm2))
        assert r1.miou == pytest.approx(r2.miou)
        assert r1.accuracy == pytest.approx(r2.accuracy)

    def test_tp_bounded_by_marginals(self):
        rng = np.random.default_rng(6)
        counts = rng.integers(0, 40, size=(5, 5)).astype(np.int64)
        cm = ConfusionMatrix(counts)
        match = hungarian_match(cm)
        for cluster, cls in match.items():
            tp = counts[cluster, cls]
            assert tp <= counts[cluster].sum()
            assert tp <= counts[:, cls].sum()

    def test_absent_class_excluded_from_mean(self):
        # class 2 absent from gt; only classes 0 and 1 enter the mean.
        counts = np.array([[50, 0, 0], [0, 50, 0], [0, 0, 0]], dtype=np.int64)
        cm = ConfusionMatrix(counts)
        report = compute_metrics(cm, hungarian_match(cm))
        assert np.isnan(report.iou[2])
        assert report.miou == pytest.approx(100.0)

    def test_zero_pixels_rejected(self):
        with pytest.raises(DataError):
            compute_metrics(ConfusionMatrix.zeros(2, 2), {0: 0, 1: 1})


def test_report_round_trip():
    gt = np.zeros((10, 10), np.uint16)
    gt[5:] = 1
    pred = np.zeros((10, 10), np.uint16)
    cm = accumulate_confusion(lmap(pred, 2), lmap(gt, 2))
    report = compute_metrics(cm, hungarian_match(cm))
    text = format_report(report)
    assert "miou=25.00" in text
    assert "accuracy=50.00" in text
    parsed = parse_report(text)
    assert parsed["miou"] == pytest.approx(25.0)
    assert parsed["pixel_count"] == 100
