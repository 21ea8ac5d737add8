"""Clustering and fusion tests, including the exhaustive-assignment oracle."""

import itertools

import numpy as np
import pytest

from unsupseg.clustering import (
    ClusterModel,
    _lloyd,
    assign_feature_map,
    fuse_labels,
    kmeans_fit,
    project_q_to_pixels,
)
from unsupseg.containers import FeatureMap, LabelMap, RegionMap
from unsupseg.errors import DataError


def brute_force_two_means(points):
    """Minimum SSE over all 2^n assignments to two clusters."""
    n = len(points)
    best = np.inf
    for bits in itertools.product([0, 1], repeat=n):
        sse = 0.0
        for side in (0, 1):
            members = points[[i for i in range(n) if bits[i] == side]]
            if len(members):
                centre = members.mean(axis=0)
                sse += float(((members - centre) ** 2).sum())
        best = min(best, sse)
    return best


class TestKMeans:
    def test_two_separated_clouds_split_exactly(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0, 0.1, size=(20, 2))
        b = rng.normal(10, 0.1, size=(20, 2))
        pts = np.vstack([a, b])
        model, q = kmeans_fit(pts, k=2, seed=3, restarts=5)
        labels = q.labels.ravel()
        assert len(set(labels[:20].tolist())) == 1
        assert len(set(labels[20:].tolist())) == 1
        assert labels[0] != labels[20]

    def test_n_equals_k_gives_zero_inertia(self):
        pts = np.array([[0.0, 0.0], [5.0, 1.0], [2.0, 9.0]])
        model, q = kmeans_fit(pts, k=3, seed=0, restarts=3)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)
        assert len(set(q.labels.ravel().tolist())) == 3

    def test_matches_exhaustive_optimum_small_instances(self):
        # Oracle: brute force over all 2^n assignments, n <= 8, d = 2, K = 2.
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            n = int(rng.integers(3, 9))
            pts = rng.normal(0, 2.0, size=(n, 2))
            model, _ = kmeans_fit(pts, k=2, seed=seed, restarts=10)
            oracle = brute_force_two_means(pts)
            assert model.inertia == pytest.approx(oracle, rel=1e-9, abs=1e-12)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(0, 1, size=(40, 3))
        m1, q1 = kmeans_fit(pts, k=4, seed=11)
        m2, q2 = kmeans_fit(pts, k=4, seed=11)
        assert np.array_equal(m1.centroids, m2.centroids)
        assert np.array_equal(q1.labels, q2.labels)
        assert m1.inertia == m2.inertia

    def test_fewer_points_than_k_rejected(self):
        with pytest.raises(DataError):
            kmeans_fit(np.zeros((2, 2)), k=3)

    def test_inertia_history_non_increasing(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(0, 1, size=(60, 4))
        init = pts[rng.choice(60, size=5, replace=False)]
        _, _, _, _, history = _lloyd(pts, init.astype(np.float64), max_iter=50, tol=0.0)
        diffs = np.diff(np.array(history))
        assert (diffs <= 1e-9).all()

    def test_accepts_feature_map(self):
        rng = np.random.default_rng(2)
        fm = FeatureMap(rng.normal(0, 1, size=(6, 7, 3)).astype(np.float32))
        model, q = kmeans_fit(fm, k=4, seed=1, restarts=3)
        assert q.labels.shape == (6, 7)
        assert q.num_classes == 4
        reassigned = assign_feature_map(fm, model)
        assert np.array_equal(reassigned.labels, q.labels)

    def test_duplicate_points_handled(self):
        pts = np.ones((10, 2))
        model, q = kmeans_fit(pts, k=2, seed=0, restarts=2)
        assert model.inertia == pytest.approx(0.0, abs=1e-12)


class TestProjectQ:
    def test_blocks_of_four(self):
        q = LabelMap(np.array([[0, 1], [2, 3]], np.uint16), num_classes=4)
        out = project_q_to_pixels(q, 8, 8, 4)
        assert out.labels.shape == (8, 8)
        assert (out.labels[:4, :4] == 0).all()
        assert (out.labels[:4, 4:] == 1).all()
        assert (out.labels[4:, :4] == 2).all()
        assert (out.labels[4:, 4:] == 3).all()

    def test_patch_one_identity(self):
        q = LabelMap(np.arange(12, dtype=np.uint16).reshape(3, 4), num_classes=12)
        out = project_q_to_pixels(q, 3, 4, 1)
        assert np.array_equal(out.labels, q.labels)

    def test_ceil_division_truncates_edges(self):
        q = LabelMap(np.arange(9, dtype=np.uint16).reshape(3, 3), num_classes=9)
        out = project_q_to_pixels(q, 13, 13, 5)
        assert out.labels.shape == (13, 13)
        assert (out.labels[10:, 10:] == 8).all()
        assert out.labels[10:, 10:].shape == (3, 3)

    def test_dim_mismatch_rejected(self):
        q = LabelMap(np.zeros((2, 2), np.uint16), num_classes=1)
        with pytest.raises(DataError):
            project_q_to_pixels(q, 16, 16, 4)


class TestFuseLabels:
    def _region(self, arr):
        return RegionMap(np.asarray(arr, np.uint32))

    def test_majority_wins(self):
        regions = self._region([[1, 1, 1, 0]])
        q = LabelMap(np.array([[3, 3, 1, 2]], np.uint16), num_classes=4)
        out = fuse_labels(regions, q)
        assert out.labels.tolist() == [[3, 3, 3, 2]]

    def test_tie_goes_to_smaller_class(self):
        regions = self._region([[1, 1, 1, 1]])
        q = LabelMap(np.array([[1, 1, 2, 2]], np.uint16), num_classes=3)
        out = fuse_labels(regions, q)
        assert (out.labels == 1).all()

    def test_all_zero_regions_copy_q(self):
        regions = self._region(np.zeros((3, 3)))
        q = LabelMap(np.arange(9, dtype=np.uint16).reshape(3, 3) % 4, num_classes=4)
        out = fuse_labels(regions, q)
        assert np.array_equal(out.labels, q.labels)

    def test_constant_within_regions(self):
        rng = np.random.default_rng(3)
        ids = np.repeat(np.arange(1, 5, dtype=np.uint32), 8).reshape(4, 8)
        regions = self._region(ids)
        q = LabelMap(rng.integers(0, 5, size=(4, 8)).astype(np.uint16), num_classes=5)
        out = fuse_labels(regions, q)
        for rid in range(1, 5):
            vals = np.unique(out.labels[ids == rid])
            assert vals.size == 1

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        ids = np.zeros((10, 10), np.uint32)
        ids[:5] = 1
        ids[5:, :5] = 2
        regions = self._region(ids)
        q_arr = rng.integers(0, 4, size=(10, 10)).astype(np.uint16)
        perm = np.array([2, 3, 1, 0], np.uint16)
        out_direct = fuse_labels(regions, LabelMap(q_arr, num_classes=4))
        out_permuted = fuse_labels(regions, LabelMap(perm[q_arr], num_classes=4))
        assert np.array_equal(perm[out_direct.labels], out_permuted.labels)
