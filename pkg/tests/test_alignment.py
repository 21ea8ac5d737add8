"""Confidence-aware alignment tests."""

import numpy as np
import pytest

from unsupseg.alignment import (
    AlignConfig,
    RegionStats,
    build_targets,
    region_stats,
    scale_check,
    tau_high,
)
from unsupseg.containers import LabelMap, RegionMap
from unsupseg.errors import DataError
from unsupseg.gridops import inner_border_removed


def rmap(arr):
    return RegionMap(np.asarray(arr, np.uint32))


def lmap(arr, k):
    return LabelMap(np.asarray(arr, np.uint16), num_classes=k)


def make_stats(entries, k):
    """entries: list of (region_id, proportions)."""
    out = []
    for rid, p in entries:
        p = np.asarray(p, dtype=np.float64)
        dom = int(np.argmax(p))
        out.append(
            RegionStats(
                region_id=rid, proportions=p, dominant=dom,
                confidence=float(p[dom]), area=1,
            )
        )
    return out


class TestTauHigh:
    @pytest.mark.parametrize(
        "b,k,expected", [(1, 5, 0.2), (4, 5, 0.5), (3, 2, 0.75)]
    )
    def test_formula(self, b, k, expected):
        assert tau_high(b, k) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_b_and_k(self):
        for k in range(2, 11):
            taus = [tau_high(b, k) for b in (0.5, 1, 2, 3, 4, 5)]
            assert all(t2 > t1 for t1, t2 in zip(taus, taus[1:]))
        for b in (0.5, 1, 2, 3, 4, 5):
            taus = [tau_high(b, k) for k in range(2, 11)]
            assert all(t2 < t1 for t1, t2 in zip(taus, taus[1:]))

    def test_nonpositive_strength_rejected(self):
        with pytest.raises(DataError):
            tau_high(0.0, 5)
        with pytest.raises(DataError):
            tau_high(-1.0, 5)


class TestRegionStats:
    def test_direct_count(self):
        regions = rmap([[1, 1, 1, 1]])
        labels = lmap([[1, 1, 2, 1]], 3)
        (s,) = region_stats(labels, regions, 3)
        assert np.array_equal(s.proportions, [0.0, 0.75, 0.25])
        assert s.dominant == 1
        assert s.confidence == 0.75
        assert s.area == 4

    def test_uniform_region_confidence_one(self):
        regions = rmap([[1, 1], [1, 1]])
        labels = lmap([[2, 2], [2, 2]], 4)
        (s,) = region_stats(labels, regions, 4)
        assert s.confidence == 1.0

    def test_tie_goes_to_smaller_class(self):
        regions = rmap([[1, 1, 1, 1]])
        labels = lmap([[0, 0, 1, 1]], 2)
        (s,) = region_stats(labels, regions, 2)
        assert s.dominant == 0
        assert np.array_equal(s.proportions, [0.5, 0.5])

    def test_requires_full_coverage(self):
        regions = rmap([[0, 1]])
        with pytest.raises(DataError):
            region_stats(lmap([[0, 0]], 2), regions, 2)


class TestScaleCheck:
    def _stats_for(self, labels_arr, regions_arr, k):
        return region_stats(lmap(labels_arr, k), rmap(regions_arr), k)

    def test_duplication_is_invariant(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 3, size=(6, 6))
        regions = np.repeat(np.arange(1, 4, dtype=np.uint32), 12).reshape(6, 6)
        before = self._stats_for(labels, regions, 3)
        up_labels = np.repeat(np.repeat(labels, 2, 0), 2, 1)
        up_regions = np.repeat(np.repeat(regions, 2, 0), 2, 1)
        after = self._stats_for(up_labels, up_regions, 3)
        assert scale_check(before, after)

    def test_flipped_label_detected(self):
        labels = np.zeros((4, 4), np.uint16)
        regions = np.ones((4, 4), np.uint32)
        before = self._stats_for(labels, regions, 2)
        labels2 = labels.copy()
        labels2[0, 0] = 1
        after = self._stats_for(np.repeat(np.repeat(labels2, 2, 0), 2, 1),
                                np.repeat(np.repeat(regions, 2, 0), 2, 1), 2)
        assert not scale_check(before, after)

    def test_empty_vs_empty(self):
        assert scale_check([], [])


class TestBuildTargets:
    def test_single_hard_region(self):
        regions = rmap(np.ones((8, 8)))
        stats = make_stats([(1, [0.9, 0.05, 0.05])], 3)
        cfg = AlignConfig(strength=3, num_classes=3, patch=4, erosion_band=False)
        # tau = 3/5 = 0.6 <= 0.9 -> hard everywhere
        tm = build_targets(stats, regions, cfg)
        assert tm.hard.all()
        assert (tm.y[..., 0] == 1.0).all()
        assert (tm.confidence == 0.9).all()

    def test_single_soft_region(self):
        regions = rmap(np.ones((8, 8)))
        p = [0.4, 0.35, 0.25]
        stats = make_stats([(1, p)], 3)
        cfg = AlignConfig(strength=3, num_classes=3, patch=4, erosion_band=False)
        # tau = 0.6 > 0.4 -> soft everywhere
        tm = build_targets(stats, regions, cfg)
        assert not tm.hard.any()
        assert np.allclose(tm.y, np.asarray(p)[None, None, :])
        assert np.allclose(tm.confidence, 0.4)

    def test_straddling_patch_majority_pooling(self):
        # One 4x4 patch: region A (12 px, class 2, conf 0.8) over rows 0-2,
        # region B (4 px, class 0, conf 1.0) on row 3. Both hard at tau 0.5.
        ids = np.full((4, 4), 1, np.uint32)
        ids[3, :] = 2
        stats = make_stats([(1, [0.1, 0.1, 0.8]), (2, [1.0, 0.0, 0.0])], 3)
        cfg = AlignConfig(strength=2, num_classes=3, patch=4, erosion_band=False)
        tm = build_targets(stats, rmap(ids), cfg)
        assert tm.hard[0, 0]
        assert tm.y[0, 0].tolist() == [0.0, 0.0, 1.0]
        assert tm.confidence[0, 0] == pytest.approx(0.8, abs=1e-12)

    def test_pixel_enumeration_oracle(self):
        # Independent oracle: expand stats to pixel-level targets, then pool
        # per the stated rules, averaging soft contributions pixel by pixel.
        rng = np.random.default_rng(12)
        h = w = 16
        patch = 4
        k = 4
        ids = (rng.integers(0, 3, size=(h, w)) + 1).astype(np.uint32)
        labels = rng.integers(0, k, size=(h, w)).astype(np.uint16)
        regions = rmap(ids)
        stats = region_stats(lmap(labels, k), regions, k)
        cfg = AlignConfig(strength=2.0, num_classes=k, patch=patch, erosion_band=False)
        tm = build_targets(stats, regions, cfg)

        tau = tau_high(2.0, k)
        conf = {s.region_id: s.confidence for s in stats}
        dom = {s.region_id: s.dominant for s in stats}
        props = {s.region_id: s.proportions for s in stats}
        for pr in range(h // patch):
            for pc in range(w // patch):
                pix = ids[pr * patch : (pr + 1) * patch, pc * patch : (pc + 1) * patch].ravel()
                hard_px = [p for p in pix if conf[p] >= tau]
                soft_px = [p for p in pix if conf[p] < tau]
                if len(hard_px) > len(soft_px):
                    votes = np.zeros(k)
                    for p in hard_px:
                        votes[dom[p]] += 1
                    winner = int(np.argmax(votes))
                    agreeing = [p for p in hard_px if dom[p] == winner]
                    c = float(np.mean([conf[p] for p in agreeing]))
                    assert tm.hard[pr, pc]
                    assert tm.y[pr, pc, winner] == 1.0
                    assert tm.confidence[pr, pc] == pytest.approx(c, abs=1e-12)
                else:
                    y = np.mean([props[p] for p in soft_px], axis=0)
                    c = float(np.mean([conf[p] for p in soft_px]))
                    assert not tm.hard[pr, pc]
                    assert np.allclose(tm.y[pr, pc], y, atol=1e-12)
                    assert tm.confidence[pr, pc] == pytest.approx(c, abs=1e-12)

    def test_gate_exactness(self):
        # hard flag <=> confidence >= tau, including the boundary case.
        k = 5
        strength = 4.0
        tau = tau_high(strength, k)  # 0.5
        p_exact = np.array([0.5, 0.2, 0.1, 0.1, 0.1])
        p_below = np.array([0.49, 0.21, 0.1, 0.1, 0.1])
        ids = np.ones((4, 8), np.uint32)
        ids[:, 4:] = 2
        stats = make_stats([(1, p_exact), (2, p_below)], k)
        cfg = AlignConfig(strength=strength, num_classes=k, patch=4, erosion_band=False)
        tm = build_targets(stats, rmap(ids), cfg)
        assert tm.hard[0, 0]  # conf 0.5 >= tau 0.5
        assert not tm.hard[0, 1]
        assert (tm.hard == (tm.confidence >= tau)).all()

    def test_dense_supervision(self):
        rng = np.random.default_rng(3)
        ids = (rng.integers(0, 4, size=(32, 32)) + 1).astype(np.uint32)
        labels = rng.integers(0, 5, size=(32, 32)).astype(np.uint16)
        regions = rmap(ids)
        stats = region_stats(lmap(labels, 5), regions, 5)
        for erosion in (False, True):
            cfg = AlignConfig(strength=3, num_classes=5, patch=8, erosion_band=erosion)
            tm = build_targets(stats, regions, cfg)
            assert np.allclose(tm.y.sum(axis=2), 1.0, atol=1e-9)
            assert (tm.confidence >= 1.0 / 5 - 1e-12).all()
            assert np.isfinite(tm.y).all()

    def test_raising_strength_never_hardens(self):
        rng = np.random.default_rng(6)
        ids = (rng.integers(0, 5, size=(24, 24)) + 1).astype(np.uint32)
        labels = rng.integers(0, 4, size=(24, 24)).astype(np.uint16)
        regions = rmap(ids)
        stats = region_stats(lmap(labels, 4), regions, 4)
        previous = None
        for b in (0.5, 1.0, 2.0, 4.0, 8.0):
            cfg = AlignConfig(strength=b, num_classes=4, patch=6, erosion_band=False)
            tm = build_targets(stats, regions, cfg)
            if previous is not None:
                newly_hard = tm.hard & ~previous
                assert not newly_hard.any()
            previous = tm.hard

    def test_duplication_leaves_targets_identical(self):
        rng = np.random.default_rng(9)
        ids = (rng.integers(0, 3, size=(16, 16)) + 1).astype(np.uint32)
        labels = rng.integers(0, 4, size=(16, 16)).astype(np.uint16)
        stats = region_stats(lmap(labels, 4), rmap(ids), 4)
        cfg = AlignConfig(strength=2, num_classes=4, patch=4, erosion_band=False)
        tm = build_targets(stats, rmap(ids), cfg)

        up_ids = np.repeat(np.repeat(ids, 2, 0), 2, 1)
        up_labels = np.repeat(np.repeat(labels, 2, 0), 2, 1)
        up_stats = region_stats(lmap(up_labels, 4), rmap(up_ids), 4)
        assert scale_check(stats, up_stats)
        cfg_up = AlignConfig(strength=2, num_classes=4, patch=8, erosion_band=False)
        tm_up = build_targets(up_stats, rmap(up_ids), cfg_up)
        assert np.array_equal(tm.y, tm_up.y)
        assert np.array_equal(tm.confidence, tm_up.confidence)
        assert np.array_equal(tm.hard, tm_up.hard)

    def test_erosion_band_excludes_boundaries(self):
        # Two vertical half-regions: with the band on, the two columns at
        # the shared boundary do not vote.
        ids = np.ones((8, 8), np.uint32)
        ids[:, 4:] = 2
        keep = inner_border_removed(ids)
        assert not keep[:, 3].any() and not keep[:, 4].any()
        assert keep[:, 0].all() and keep[:, 7].all()
        stats = make_stats([(1, [0.9, 0.1]), (2, [0.2, 0.8])], 2)
        cfg = AlignConfig(strength=1.5, num_classes=2, patch=4, erosion_band=True)
        tm = build_targets(stats, rmap(ids), cfg)
        assert tm.hard.all()
        assert (tm.y[:, 0, 0] == 1.0).all()
        assert (tm.y[:, 1, 1] == 1.0).all()

    def test_empty_patch_falls_back_to_nearest_region(self):
        # A patch interior to the boundary band: 2-px-wide region stripes
        # erode away entirely, so the patch takes the nearest surviving
        # region's stats.
        ids = np.ones((8, 8), np.uint32)
        ids[:, 2:4] = 2
        ids[:, 4:] = 3
        stats = make_stats([(1, [0.9, 0.1]), (2, [0.3, 0.7]), (3, [0.8, 0.2])], 2)
        cfg = AlignConfig(strength=1.5, num_classes=2, patch=2, erosion_band=True)
        tm = build_targets(stats, rmap(ids), cfg)
        # Patch at columns 2-3 has no surviving pixels; nearest survivors
        # are region 1 (left) at the same BFS distance as region 3 (right)
        # for its left column -> region 1 wins ties.
        assert tm.confidence[0, 1] == pytest.approx(0.9)
        assert tm.hard[0, 1]

    def test_force_soft_disables_gate(self):
        regions = rmap(np.ones((4, 4)))
        stats = make_stats([(1, [0.9, 0.05, 0.05])], 3)
        cfg = AlignConfig(strength=3, num_classes=3, patch=4, erosion_band=False, force_soft=True)
        tm = build_targets(stats, regions, cfg)
        assert not tm.hard.any()
        assert np.allclose(tm.y[0, 0], [0.9, 0.05, 0.05])
        assert tm.confidence[0, 0] == pytest.approx(0.9)

    def test_missing_stats_rejected(self):
        regions = rmap(np.ones((4, 4)))
        with pytest.raises(DataError, match="missing"):
            build_targets([], regions, AlignConfig(num_classes=3, patch=4))
