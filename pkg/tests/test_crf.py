"""Mean-field CRF refinement tests with a naive reference implementation."""

import numpy as np
import pytest

from unsupseg.containers import ImageTile, LabelMap
from unsupseg.crf import CrfConfig, crf_refine
from unsupseg.errors import DataError


def reference_mean_field(q0, image, cfg):
    """Direct per-pixel mean-field execution used as the oracle."""
    h, w, k = q0.shape
    radius = int(4 * cfg.spatial_sigma + 1)
    log_q0 = np.log(q0)
    q = q0.copy()
    img = image.astype(np.float64)
    for _ in range(cfg.iterations):
        new_q = np.zeros_like(q)
        for r in range(h):
            for c in range(w):
                msg = np.zeros(k)
                for rr in range(max(0, r - radius), min(h, r + radius + 1)):
                    for cc in range(max(0, c - radius), min(w, c + radius + 1)):
                        if rr == r and cc == c:
                            continue
                        d2 = (rr - r) ** 2 + (cc - c) ** 2
                        di = img[r, c] - img[rr, cc]
                        kernel = cfg.pairwise_weight * np.exp(
                            -d2 / (2 * cfg.spatial_sigma**2)
                            - di**2 / (2 * cfg.intensity_sigma**2)
                        )
                        msg += kernel * q[rr, cc]
                scores = log_q0[r, c] + msg
                scores -= scores.max()
                e = np.exp(scores)
                new_q[r, c] = e / e.sum()
        q = new_q
    return np.argmax(q, axis=2)


def labelled(arr, k):
    return LabelMap(np.asarray(arr, np.uint16), num_classes=k)


def flat_image(h, w, value=100):
    return ImageTile(np.full((h, w), value, np.uint8))


class TestCrfRefine:
    def test_zero_pairwise_is_unary_argmax(self):
        rng = np.random.default_rng(0)
        labels = labelled(rng.integers(0, 3, size=(9, 9)), 3)
        cfg = CrfConfig(pairwise_weight=0.0)
        out = crf_refine(labels, flat_image(9, 9), cfg)
        assert np.array_equal(out.labels, labels.labels)

    def test_peaked_unaries_dominate(self):
        rng = np.random.default_rng(1)
        labels_arr = rng.integers(0, 2, size=(8, 8)).astype(np.uint16)
        k = 2
        probs = np.full((8, 8, k), 1e-6)
        rows, cols = np.indices((8, 8))
        probs[rows, cols, labels_arr] = 1.0 - 1e-6 * (k - 1)
        cfg = CrfConfig(iterations=3, pairwise_weight=0.05, spatial_sigma=1.0)
        out = crf_refine(probs, flat_image(8, 8), cfg)
        assert np.array_equal(out.labels, labels_arr)

    def test_single_mislabeled_pixel_flips(self):
        # 11x11 uniform region of constant intensity with one bad pixel.
        labels_arr = np.zeros((11, 11), np.uint16)
        labels_arr[5, 5] = 1
        out = crf_refine(labelled(labels_arr, 2), flat_image(11, 11), CrfConfig())
        assert out.labels[5, 5] == 0
        assert (out.labels == 0).all()

    def test_matches_reference_execution(self):
        rng = np.random.default_rng(7)
        h = w = 9
        labels_arr = np.zeros((h, w), np.uint16)
        labels_arr[3:6, 2:7] = 1
        labels_arr[7, 1] = 2
        image = ImageTile(rng.integers(60, 200, size=(h, w)).astype(np.uint8))
        cfg = CrfConfig(iterations=3, spatial_sigma=1.5, intensity_sigma=12.0,
                        pairwise_weight=0.8, unary_confidence=0.7)
        out = crf_refine(labelled(labels_arr, 3), image, cfg)

        k = 3
        spread = (1 - 0.7) / (k - 1)
        q0 = np.full((h, w, k), spread)
        rows, cols = np.indices((h, w))
        q0[rows, cols, labels_arr] = 0.7
        expected = reference_mean_field(q0, image.pixels, cfg)
        assert np.array_equal(out.labels, expected.astype(np.uint16))

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        labels = labelled(rng.integers(0, 4, size=(16, 16)), 4)
        image = ImageTile(rng.integers(0, 255, size=(16, 16)).astype(np.uint8))
        cfg = CrfConfig(iterations=2)
        a = crf_refine(labels, image, cfg)
        b = crf_refine(labels, image, cfg)
        assert np.array_equal(a.labels, b.labels)

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        labels_arr = rng.integers(0, 3, size=(12, 12)).astype(np.uint16)
        image = ImageTile(rng.integers(0, 255, size=(12, 12)).astype(np.uint8))
        cfg = CrfConfig(iterations=2, spatial_sigma=1.0)
        perm = np.array([2, 0, 1], np.uint16)
        direct = crf_refine(labelled(labels_arr, 3), image, cfg)
        permuted = crf_refine(labelled(perm[labels_arr], 3), image, cfg)
        assert np.array_equal(perm[direct.labels], permuted.labels)

    def test_intensity_edges_block_smoothing(self):
        # Two constant-intensity halves far apart in gray level: the CRF
        # must not bleed labels across the edge.
        labels_arr = np.zeros((10, 10), np.uint16)
        labels_arr[:, 5:] = 1
        img = np.full((10, 10), 40, np.uint8)
        img[:, 5:] = 200
        out = crf_refine(labelled(labels_arr, 2), ImageTile(img), CrfConfig())
        assert np.array_equal(out.labels, labels_arr)

    def test_dim_mismatch_rejected(self):
        with pytest.raises(DataError):
            crf_refine(labelled(np.zeros((4, 4)), 2), flat_image(5, 5), CrfConfig())

    def test_bad_probability_stack_rejected(self):
        probs = np.full((4, 4, 3), 0.5)
        with pytest.raises(DataError):
            crf_refine(probs, flat_image(4, 4), CrfConfig())
