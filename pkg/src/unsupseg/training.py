"""Lightweight segmentation head over frozen features, trained with the
focal-confidence loss.

The head is a single affine layer decoded per patch-grid element. The
loss is cross-entropy modulated by a class-difficulty factor
(1 - pbar_y)^gamma, where pbar is the batch-mean predicted probability
per class (a stop-gradient statistic), and a reliability weight c^beta
from the target confidence. Features are inputs only and never updated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unsupseg.alignment import TargetMap
from unsupseg.containers import FeatureMap, LabelMap
from unsupseg.errors import DataError


@dataclass(frozen=True)
class HeadParams:
    weight: np.ndarray  # (K, dim)
    bias: np.ndarray  # (K,)
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DataError(f"inconsistent head shapes {w.shape}, {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DataError("head parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    gamma: float = 2.0
    beta: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 50
    batch: int = 8  # tiles per step

    def __post_init__(self):
        if self.alpha <= 0:
            raise DataError("alpha must be > 0")
        if self.gamma < 0 or self.beta < 0:
            raise DataError("gamma and beta must be >= 0")
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise DataError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise DataError("epochs and batch must be >= 1")


@dataclass(frozen=True)
class BatchStats:
    """Batch-mean predicted probability per class."""

    p_bar: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_bar, dtype=np.float64)
        if p.ndim != 1 or ((p < -1e-12) | (p > 1 + 1e-12)).any():
            raise DataError(f"p_bar must be a probability vector, got {p}")
        object.__setattr__(self, "p_bar", p)


def init_head(num_classes: int, dim: int, seed: int = 0) -> HeadParams:
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), 0x6EAD]))
    weight = rng.normal(0.0, 0.01, size=(num_classes, dim))
    return HeadParams(weight=weight, bias=np.zeros(num_classes), seed=seed)


def head_forward(head: HeadParams, features: FeatureMap) -> np.ndarray:
    """Per-element affine map: logits (grid_h, grid_w, K)."""
    if features.dim != head.dim:
        raise DataError(f"feature dim {features.dim} != head dim {head.dim}")
    return features.values.astype(np.float64) @ head.weight.T + head.bias


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def batch_class_means(probs: np.ndarray) -> BatchStats:
    """Mean predicted probability per class over all batch elements.

    Accepts any (..., K) stack of softmax outputs.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim < 1 or p.size == 0:
        raise DataError("batch_class_means needs a non-empty batch")
    flat = p.reshape(-1, p.shape[-1])
    return BatchStats(p_bar=flat.mean(axis=0))


def target_mean_probability(y: np.ndarray, stats: BatchStats) -> np.ndarray:
    """pbar_y per element: for a soft target, sum_c y_c * pbar_c."""
    return y @ stats.p_bar


def _loss_core(
    logits: np.ndarray,
    y: np.ndarray,
    conf: np.ndarray,
    stats: BatchStats,
    cfg: LossConfig,
) -> tuple[float, np.ndarray]:
    if not np.isfinite(logits).all():
        raise DataError("non-finite logits")
    n = int(np.prod(logits.shape[:-1]))
    p_bar_y = target_mean_probability(y, stats)
    focus = np.power(1.0 - p_bar_y, cfg.gamma)
    rel = np.power(conf, cfg.beta)
    ce = -(y * log_softmax(logits)).sum(axis=-1)
    weights = cfg.alpha * focus * rel
    loss = float((weights * ce).sum() / n)
    grad = (weights[..., None] * (softmax(logits) - y)) / n
    return loss, grad


def focal_confidence_loss(
    logits: np.ndarray,
    targets: TargetMap,
    stats: BatchStats,
    cfg: LossConfig,
) -> tuple[float, np.ndarray]:
    """Scalar loss and analytic gradient w.r.t. the logits.

    loss = mean_u alpha * (1 - pbar_{y_u})^gamma * CE(x_u, y_u) * c_u^beta
    with pbar held constant (no gradient through batch statistics).
    """
    if logits.shape != targets.y.shape:
        raise DataError(f"logits shape {logits.shape} != targets {targets.y.shape}")
    return _loss_core(np.asarray(logits, dtype=np.float64), targets.y, targets.confidence, stats, cfg)


def train(
    features_list: list[FeatureMap],
    targets_list: list[TargetMap],
    cfg: LossConfig,
    seed: int = 0,
) -> tuple[HeadParams, list[float]]:
    """Plain SGD on the affine head; deterministic per seed.

    Tiles are shuffled once per epoch from a seeded stream and consumed in
    batches of cfg.batch tiles; pbar is recomputed from the current head on
    each batch. Returns the head and the per-epoch mean loss history.
    """
    if not features_list:
        raise DataError("training needs at least one tile")
    if len(features_list) != len(targets_list):
        raise DataError("features/targets length mismatch")
    dim = features_list[0].dim
    k = targets_list[0].num_classes
    flat_x = []
    flat_y = []
    flat_c = []
    for fm, tm in zip(features_list, targets_list):
        if fm.dim != dim:
            raise DataError("inconsistent feature dims across tiles")
        if (fm.grid_h, fm.grid_w) != (tm.grid_h, tm.grid_w) or tm.num_classes != k:
            raise DataError("feature grid and target grid differ")
        flat_x.append(fm.values.reshape(-1, dim).astype(np.float64))
        flat_y.append(tm.y.reshape(-1, k))
        flat_c.append(tm.confidence.reshape(-1))

    head = init_head(k, dim, seed)
    weight = head.weight.copy()
    bias = head.bias.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), 0x5470]))
    n_tiles = len(flat_x)
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n_tiles)
        epoch_weighted = 0.0
        epoch_elements = 0
        for start in range(0, n_tiles, cfg.batch):
            chunk = order[start : start + cfg.batch]
            x = np.concatenate([flat_x[i] for i in chunk], axis=0)
            y = np.concatenate([flat_y[i] for i in chunk], axis=0)
            c = np.concatenate([flat_c[i] for i in chunk], axis=0)
            logits = x @ weight.T + bias
            stats = batch_class_means(softmax(logits))
            loss, grad = _loss_core(logits, y, c, stats, cfg)
            weight -= cfg.learning_rate * grad.T @ x
            bias -= cfg.learning_rate * grad.sum(axis=0)
            epoch_weighted += loss * x.shape[0]
            epoch_elements += x.shape[0]
        history.append(epoch_weighted / epoch_elements)
    return HeadParams(weight=weight, bias=bias, seed=seed), history


def predict(
    head: HeadParams, features: FeatureMap, height: int, width: int, patch: int
) -> LabelMap:
    """Argmax decode (ties to the smaller class) block-upsampled to pixels."""
    logits = head_forward(head, features)
    grid = np.argmax(logits, axis=-1).astype(np.uint16)
    up = np.repeat(np.repeat(grid, patch, axis=0), patch, axis=1)
    if up.shape[0] < height or up.shape[1] < width:
        raise DataError(
            f"feature grid {grid.shape} with patch {patch} cannot cover {(height, width)}"
        )
    return LabelMap(up[:height, :width], num_classes=head.num_classes)


def save_head(head: HeadParams) -> np.ndarray:
    """Pack the head as f32 (K, dim+1) with the bias in the last column."""
    packed = np.concatenate([head.weight, head.bias[:, None]], axis=1)
    return packed.astype(np.float32)


def load_head(packed: np.ndarray, seed: int = 0) -> HeadParams:
    arr = np.asarray(packed, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise DataError(f"packed head must be (K, dim+1), got {arr.shape}")
    return HeadParams(weight=arr[:, :-1], bias=arr[:, -1], seed=seed)
