"""Confidence-aware alignment: regional class evidence becomes dense
hard/soft training targets with per-element confidence.

A region whose dominant-class proportion clears the threshold
B/(B+K-1) supplies a hard one-hot target; the rest keep their full
proportion vector as a soft target. Either way the element's confidence
is the region's peak proportion, so every element of the patch grid is
supervised (no ignore state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unsupseg.containers import LabelMap, RegionMap
from unsupseg.errors import DataError
from unsupseg.gridops import inner_border_removed, nearest_labels


@dataclass(frozen=True)
class RegionStats:
    """Cached per-region tuple: dominant class, its proportion, and the
    full class distribution."""

    region_id: int
    proportions: np.ndarray  # length-K simplex vector
    dominant: int
    confidence: float
    area: int

    def __post_init__(self):
        p = np.asarray(self.proportions, dtype=np.float64)
        if abs(float(p.sum()) - 1.0) > 1e-9:
            raise DataError(f"region {self.region_id}: proportions sum to {p.sum()}")
        if self.confidence != float(p.max()):
            raise DataError(f"region {self.region_id}: confidence is not max(p)")
        if self.confidence < 1.0 / p.size - 1e-12:
            raise DataError(f"region {self.region_id}: confidence below 1/K")
        object.__setattr__(self, "proportions", p)


@dataclass(frozen=True)
class AlignConfig:
    strength: float = 4.0  # alignment strength B
    num_classes: int = 5
    patch: int = 8
    erosion_band: bool = True
    force_soft: bool = False  # ablation: drop the gate, every target soft
    force_hard: bool = False  # ablation: drop confidence, every target hard

    def __post_init__(self):
        if self.strength <= 0:
            raise DataError(f"alignment strength must be > 0, got {self.strength}")
        if self.num_classes < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.patch < 1:
            raise DataError(f"patch must be >= 1, got {self.patch}")
        if self.force_soft and self.force_hard:
            raise DataError("force_soft and force_hard are mutually exclusive")


@dataclass(frozen=True)
class TargetMap:
    """Per-element supervision on the patch grid: a distribution (one-hot
    when hard), a confidence in [1/K, 1], and the hard/soft flag."""

    y: np.ndarray  # (gh, gw, K)
    confidence: np.ndarray  # (gh, gw)
    hard: np.ndarray  # (gh, gw) bool

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        c = np.asarray(self.confidence, dtype=np.float64)
        h = np.asarray(self.hard, dtype=bool)
        if y.ndim != 3 or c.shape != y.shape[:2] or h.shape != y.shape[:2]:
            raise DataError(f"inconsistent target shapes {y.shape}, {c.shape}, {h.shape}")
        sums = y.sum(axis=2)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise DataError("target distributions must sum to 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "confidence", c)
        object.__setattr__(self, "hard", h)

    @property
    def grid_h(self) -> int:
        return self.y.shape[0]

    @property
    def grid_w(self) -> int:
        return self.y.shape[1]

    @property
    def num_classes(self) -> int:
        return self.y.shape[2]


def tau_high(strength: float, num_classes: int) -> float:
    """High-confidence threshold B/(B+K-1): increasing in B, decreasing in K."""
    if strength <= 0:
        raise DataError(f"alignment strength must be > 0, got {strength}")
    if num_classes < 2:
        raise DataError(f"num_classes must be >= 2, got {num_classes}")
    return strength / (strength + num_classes - 1)


def label_counts(labels: LabelMap, regions: RegionMap, num_classes: int) -> np.ndarray:
    """Per-region class histogram: rows 1..R of a (R+1, K) count matrix.

    Row 0 is unused (region id 0 means uncovered and is rejected here).
    Counts are the exact cacheable form of the region tuples: proportions
    rebuilt from them are bit-identical to a fresh computation.
    """
    if (regions.region_ids == 0).any():
        raise DataError("region stats require a full-coverage region map")
    if labels.num_classes > num_classes:
        raise DataError(
            f"label map declares {labels.num_classes} classes, stats asked for {num_classes}"
        )
    if (labels.height, labels.width) != (regions.height, regions.width):
        raise DataError("label and region map dims differ")
    ids = regions.region_ids.astype(np.int64)
    counts = np.zeros((regions.max_id + 1, num_classes), dtype=np.int64)
    np.add.at(counts, (ids.ravel(), labels.labels.ravel().astype(np.int64)), 1)
    return counts


def stats_from_counts(counts: np.ndarray) -> list[RegionStats]:
    """Region tuples (c*, p_{c*}, p) from a per-region class count matrix."""
    out = []
    for rid in range(1, counts.shape[0]):
        area = int(counts[rid].sum())
        if area == 0:
            raise DataError(f"region {rid} has no pixels in the count matrix")
        p = counts[rid] / area
        dom = int(np.argmax(p))
        out.append(
            RegionStats(
                region_id=rid,
                proportions=p,
                dominant=dom,
                confidence=float(p[dom]),
                area=area,
            )
        )
    return out


def region_stats(labels: LabelMap, regions: RegionMap, num_classes: int) -> list[RegionStats]:
    """Empirical class proportions per region of a full-coverage map.

    Dominant-class ties go to the smallest class id. `labels` is the
    pixel-wise label evidence (the projected cluster map in the pipeline,
    where labels still vary inside a region).
    """
    return stats_from_counts(label_counts(labels, regions, num_classes))


def _stats_arrays(stats: list[RegionStats], n_regions: int, num_classes: int):
    conf = np.zeros(n_regions + 1, dtype=np.float64)
    dom = np.zeros(n_regions + 1, dtype=np.int64)
    props = np.zeros((n_regions + 1, num_classes), dtype=np.float64)
    seen = set()
    for s in stats:
        if not 1 <= s.region_id <= n_regions:
            continue
        conf[s.region_id] = s.confidence
        dom[s.region_id] = s.dominant
        props[s.region_id] = s.proportions
        seen.add(s.region_id)
    missing = set(range(1, n_regions + 1)) - seen
    if missing:
        raise DataError(f"stats missing for region ids {sorted(missing)[:8]}")
    return conf, dom, props


def build_targets(
    stats: list[RegionStats], regions: RegionMap, cfg: AlignConfig
) -> TargetMap:
    """Assemble the patch-grid TargetMap from cached region stats.

    Pixel rule: hard one-hot of the dominant class when the region's
    confidence clears tau_high, else the full proportion vector; the pixel
    confidence is the region's peak proportion either way. Pixel-to-patch
    pooling follows the modal pixel regime: majority vote over hard labels
    (ties to the smaller class, confidence = mean over agreeing pixels),
    otherwise the soft pixels' distributions and confidences are averaged.
    With the erosion band on, each region's one-pixel boundary ring sits
    out of the vote, and patches left empty take the stats of the nearest
    region by BFS distance.

    All pooling is computed from per-region pixel counts, so duplicating
    every pixel (and the patch size) leaves the result bit-identical.
    """
    ids = regions.region_ids.astype(np.int64)
    if (ids == 0).any():
        raise DataError("build_targets requires a full-coverage region map")
    n_regions = regions.max_id
    k = cfg.num_classes
    conf, dom, props = _stats_arrays(stats, n_regions, k)
    tau = tau_high(cfg.strength, k)
    hard_region = np.zeros(n_regions + 1, dtype=bool)
    if cfg.force_hard:
        hard_region[1:] = True
    elif not cfg.force_soft:
        hard_region[1:] = conf[1:] >= tau

    contrib = np.where(inner_border_removed(ids), ids, 0) if cfg.erosion_band else ids
    if not (contrib > 0).any():
        contrib = ids  # erosion removed everything; fall back to the full map

    height, width = ids.shape
    patch = cfg.patch
    gh = -(-height // patch)
    gw = -(-width // patch)
    y = np.zeros((gh, gw, k), dtype=np.float64)
    confidence = np.zeros((gh, gw), dtype=np.float64)
    hard = np.zeros((gh, gw), dtype=bool)

    nearest = None  # computed lazily for empty patches
    for pr in range(gh):
        for pc in range(gw):
            sub = contrib[pr * patch : (pr + 1) * patch, pc * patch : (pc + 1) * patch]
            counts = np.bincount(sub.ravel(), minlength=n_regions + 1)
            counts[0] = 0
            present = np.nonzero(counts)[0]
            if present.size == 0:
                if nearest is None:
                    nearest = nearest_labels(contrib, connectivity=4)
                filled, dist = nearest
                d_sub = dist[pr * patch : (pr + 1) * patch, pc * patch : (pc + 1) * patch]
                f_sub = filled[pr * patch : (pr + 1) * patch, pc * patch : (pc + 1) * patch]
                rid = int(f_sub[d_sub == d_sub.min()].min())
                if hard_region[rid]:
                    y[pr, pc, dom[rid]] = 1.0
                    hard[pr, pc] = True
                else:
                    y[pr, pc] = props[rid]
                confidence[pr, pc] = conf[rid]
                continue

            n_hard = int(counts[present][hard_region[present]].sum())
            n_soft = int(counts[present][~hard_region[present]].sum())
            if n_hard > n_soft:
                hard_ids = present[hard_region[present]]
                votes = np.zeros(k, dtype=np.int64)
                np.add.at(votes, dom[hard_ids], counts[hard_ids])
                winner = int(np.argmax(votes))
                agree = hard_ids[dom[hard_ids] == winner]
                weight = counts[agree].astype(np.float64)
                confidence[pr, pc] = float((weight * conf[agree]).sum() / weight.sum())
                y[pr, pc, winner] = 1.0
                hard[pr, pc] = True
            else:
                soft_ids = present[~hard_region[present]]
                weight = counts[soft_ids].astype(np.float64)
                total = weight.sum()
                y[pr, pc] = (weight[:, None] * props[soft_ids]).sum(axis=0) / total
                confidence[pr, pc] = float((weight * conf[soft_ids]).sum() / total)

    return TargetMap(y=y, confidence=confidence, hard=hard)


def scale_check(
    stats_before: list[RegionStats], stats_after: list[RegionStats]
) -> bool:
    """True iff the (p, c*, confidence) tuples are identical across the
    pair; areas are excluded since pixel duplication scales them."""
    if len(stats_before) != len(stats_after):
        return False
    for a, b in zip(stats_before, stats_after):
        if a.region_id != b.region_id or a.dominant != b.dominant:
            return False
        if a.confidence != b.confidence:
            return False
        if not np.array_equal(a.proportions, b.proportions):
            return False
    return True
