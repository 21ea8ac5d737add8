"""Mean-field label refinement on the pixel grid.

Potts-model updates with a Gaussian spatial/intensity pairwise kernel,
truncated to a square window. Messages use the previous iterate
(Jacobi-style), so the result is deterministic and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unsupseg.containers import ImageTile, LabelMap
from unsupseg.errors import DataError

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class CrfConfig:
    iterations: int = 5
    spatial_sigma: float = 3.0
    intensity_sigma: float = 10.0
    pairwise_weight: float = 1.0
    unary_confidence: float = 0.7

    def __post_init__(self):
        if self.iterations < 1:
            raise DataError("iterations must be >= 1")
        if self.spatial_sigma <= 0 or self.intensity_sigma <= 0:
            raise DataError("sigmas must be > 0")
        if self.pairwise_weight < 0:
            raise DataError("pairwise_weight must be >= 0")
        if not 0.0 < self.unary_confidence < 1.0:
            raise DataError("unary_confidence must be in (0, 1)")

    @property
    def window_radius(self) -> int:
        return int(4 * self.spatial_sigma + 1)


def _unaries_from_labels(labels: LabelMap, unary_confidence: float) -> np.ndarray:
    k = labels.num_classes
    if k < 2:
        raise DataError("CRF needs at least 2 classes")
    spread = (1.0 - unary_confidence) / (k - 1)
    q = np.full((labels.height, labels.width, k), spread, dtype=np.float64)
    rows, cols = np.indices((labels.height, labels.width))
    q[rows, cols, labels.labels.astype(np.int64)] = unary_confidence
    return q


if _HAVE_NUMBA:

    @njit(cache=True)
    def _message_pass(q, image, spatial, lut, radius):  # pragma: no cover - jitted
        h, w, k = q.shape
        out = np.zeros((h, w, k))
        for r in range(h):
            for c in range(w):
                base = image[r, c]
                for dr in range(-radius, radius + 1):
                    rr = r + dr
                    if rr < 0 or rr >= h:
                        continue
                    for dc in range(-radius, radius + 1):
                        if dr == 0 and dc == 0:
                            continue
                        cc = c + dc
                        if cc < 0 or cc >= w:
                            continue
                        weight = spatial[dr + radius, dc + radius] * lut[base - image[rr, cc] + 255]
                        for cls in range(k):
                            out[r, c, cls] += weight * q[rr, cc, cls]
        return out

else:

    def _message_pass(q, image, spatial, lut, radius):
        h, w, k = q.shape
        out = np.zeros((h, w, k))
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                if dr == 0 and dc == 0:
                    continue
                sr = slice(max(0, dr), min(h, h + dr))
                sc = slice(max(0, dc), min(w, w + dc))
                tr = slice(max(0, -dr), min(h, h - dr))
                tc = slice(max(0, -dc), min(w, w - dc))
                diff = image[tr, tc].astype(np.int64) - image[sr, sc]
                weight = spatial[dr + radius, dc + radius] * lut[diff + 255]
                out[tr, tc] += weight[..., None] * q[sr, sc]
        return out


def crf_refine(labels_or_probs, image: ImageTile, cfg: CrfConfig) -> LabelMap:
    """Refine a hard LabelMap or an (H, W, K) probability stack.

    Hard labels become unaries with unary_confidence on the label and the
    remaining mass spread uniformly. Each iteration recomputes
    Q_i(c) = softmax(log q0_i(c) + sum_j k(i, j) Q_j(c)) with
    k(i, j) = pairwise_weight * exp(-|pos_i - pos_j|^2 / 2 sigma_s^2
    - (I_i - I_j)^2 / 2 sigma_i^2) over a (4 sigma_s + 1)-radius window.
    Final decode is argmax with ties to the smaller class id.
    """
    if isinstance(labels_or_probs, LabelMap):
        if (labels_or_probs.height, labels_or_probs.width) != (image.height, image.width):
            raise DataError("label map and image dims differ")
        num_classes = labels_or_probs.num_classes
        q0 = _unaries_from_labels(labels_or_probs, cfg.unary_confidence)
    else:
        probs = np.asarray(labels_or_probs, dtype=np.float64)
        if probs.ndim != 3 or probs.shape[:2] != (image.height, image.width):
            raise DataError(f"probability stack shape {probs.shape} does not match the image")
        if (probs < 0).any() or not np.allclose(probs.sum(axis=2), 1.0, atol=1e-6):
            raise DataError("probabilities must be non-negative and sum to 1")
        num_classes = probs.shape[2]
        q0 = probs

    if cfg.pairwise_weight == 0.0:
        decoded = np.argmax(q0, axis=2).astype(np.uint16)
        return LabelMap(decoded, num_classes=num_classes)

    radius = cfg.window_radius
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    d2 = offsets[:, None] ** 2 + offsets[None, :] ** 2
    spatial = cfg.pairwise_weight * np.exp(-d2 / (2.0 * cfg.spatial_sigma**2))
    diffs = np.arange(-255, 256, dtype=np.float64)
    lut = np.exp(-(diffs**2) / (2.0 * cfg.intensity_sigma**2))

    log_q0 = np.log(np.clip(q0, 1e-300, None))
    img = image.pixels.astype(np.int64)
    q = q0.copy()
    for _ in range(cfg.iterations):
        msg = _message_pass(q, img, spatial, lut, radius)
        scores = log_q0 + msg
        scores -= scores.max(axis=2, keepdims=True)
        e = np.exp(scores)
        q = e / e.sum(axis=2, keepdims=True)

    decoded = np.argmax(q, axis=2).astype(np.uint16)
    return LabelMap(decoded, num_classes=num_classes)
