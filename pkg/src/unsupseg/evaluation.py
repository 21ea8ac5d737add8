"""Unsupervised evaluation: confusion accumulation, optimal
cluster-to-class matching, and matched mIoU / overall accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from unsupseg.containers import LabelMap
from unsupseg.errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Prediction-by-ground-truth pixel counts."""

    counts: np.ndarray  # (K_pred, K_gt) int64

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or (c < 0).any():
            raise DataError(f"confusion counts must be a non-negative matrix, got {c.shape}")
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, k_pred: int, k_gt: int) -> "ConfusionMatrix":
        return cls(np.zeros((k_pred, k_gt), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricReport:
    iou: np.ndarray  # per gt class, percent; nan for absent classes
    miou: float  # percent
    accuracy: float  # percent
    matching: dict  # cluster -> class, injective
    pixel_count: int


def accumulate_confusion(
    pred: LabelMap, gt: LabelMap, existing: ConfusionMatrix | None = None
) -> ConfusionMatrix:
    """Add one tile's (pred, gt) pixel pairs; associative over tile order."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise DataError(
            f"prediction {(pred.height, pred.width)} and ground truth "
            f"{(gt.height, gt.width)} dims differ"
        )
    if existing is None:
        existing = ConfusionMatrix.zeros(pred.num_classes, gt.num_classes)
    counts = existing.counts
    if pred.num_classes > counts.shape[0] or gt.num_classes > counts.shape[1]:
        raise DataError(
            f"labels out of range for confusion shape {counts.shape}: "
            f"{pred.num_classes} x {gt.num_classes}"
        )
    out = counts.copy()
    np.add.at(out, (pred.labels.ravel().astype(np.int64), gt.labels.ravel().astype(np.int64)), 1)
    return ConfusionMatrix(out)


def _optimal_total(counts: np.ndarray) -> int:
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return int(counts[rows, cols].sum())


def hungarian_match(confusion: ConfusionMatrix) -> dict:
    """Injective cluster-to-class map maximizing the matched pixel count.

    The matrix is padded to square with zeros; among equally optimal
    assignments the lexicographically smallest one (by cluster order) is
    returned. Clusters assigned to padding columns are unmatched and
    omitted from the map.
    """
    counts = confusion.counts
    k_pred, k_gt = counts.shape
    size = max(k_pred, k_gt)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:k_pred, :k_gt] = counts

    best_total = _optimal_total(padded)
    # Fix rows in order, choosing the smallest column that still admits an
    # optimal completion; this pins the lexicographic tie-break exactly.
    available = list(range(size))
    assignment: list[int] = []
    remaining = padded
    fixed_value = 0
    for row in range(size):
        for col in sorted(available):
            rest_rows = [r for r in range(row + 1, size)]
            rest_cols = [c for c in available if c != col]
            sub = padded[np.ix_(rest_rows, rest_cols)] if rest_rows else np.zeros((0, 0), np.int64)
            total = fixed_value + int(padded[row, col]) + (_optimal_total(sub) if rest_rows else 0)
            if total == best_total:
                assignment.append(col)
                available.remove(col)
                fixed_value += int(padded[row, col])
                break
        else:  # pragma: no cover - an optimal column always exists
            raise DataError("no optimal assignment found")

    return {row: assignment[row] for row in range(k_pred) if assignment[row] < k_gt}


def compute_metrics(confusion: ConfusionMatrix, matching: dict) -> MetricReport:
    """Matched metrics: IoU_c = TP/(TP+FP+FN) over classes present in the
    ground truth, overall accuracy = matched TP / total.

    Unmatched prediction clusters count as errors for all their pixels.
    Classes absent from both prediction and ground truth are excluded from
    the mean.
    """
    counts = confusion.counts
    k_pred, k_gt = counts.shape
    total = confusion.total
    if total == 0:
        raise DataError("cannot compute metrics over zero pixels")
    values = list(matching.values())
    if len(set(values)) != len(values):
        raise DataError("matching must be injective")

    tp = np.zeros(k_gt, dtype=np.int64)
    fp = np.zeros(k_gt, dtype=np.int64)
    for cluster, cls in matching.items():
        tp[cls] += counts[cluster, cls]
        fp[cls] += counts[cluster].sum() - counts[cluster, cls]
    gt_totals = counts.sum(axis=0)
    fn = gt_totals - tp

    iou = np.full(k_gt, np.nan)
    for cls in range(k_gt):
        denom = tp[cls] + fp[cls] + fn[cls]
        if denom > 0:
            iou[cls] = 100.0 * tp[cls] / denom
    present = gt_totals > 0
    if not present.any():
        raise DataError("ground truth contains no labelled pixels")
    miou = float(np.mean(iou[present]))
    accuracy = 100.0 * float(tp.sum()) / total
    return MetricReport(
        iou=iou, miou=miou, accuracy=accuracy, matching=dict(matching), pixel_count=total
    )


def format_report(report: MetricReport) -> str:
    """Human-readable table followed by a machine-readable key=value block."""
    lines = ["class  iou%", "-----  ------"]
    for cls, value in enumerate(report.iou):
        cell = "   n/a" if np.isnan(value) else f"{value:6.2f}"
        lines.append(f"{cls:5d}  {cell}")
    lines.append("")
    lines.append(f"mIoU     {report.miou:.2f}")
    lines.append(f"Accuracy {report.accuracy:.2f}")
    lines.append("")
    lines.append(f"miou={report.miou:.2f}")
    lines.append(f"accuracy={report.accuracy:.2f}")
    for cls, value in enumerate(report.iou):
        if not np.isnan(value):
            lines.append(f"iou_{cls}={value:.2f}")
    for cluster in sorted(report.matching):
        lines.append(f"matching_{cluster}={report.matching[cluster]}")
    lines.append(f"pixel_count={report.pixel_count}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Read back the key=value block of :func:`format_report`."""
    out: dict = {}
    for line in text.splitlines():
        if "=" in line and " " not in line.split("=")[0]:
            key, value = line.split("=", 1)
            out[key] = float(value) if "." in value else int(value)
    return out
