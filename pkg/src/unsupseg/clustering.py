"""KMeans over frozen features and fusion with regions into pseudo-labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from unsupseg.containers import FeatureMap, LabelMap, RegionMap
from unsupseg.errors import DataError


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray  # (K, dim) float64
    inertia: float
    iterations_run: int
    seed: int

    def __post_init__(self):
        cent = np.asarray(self.centroids, dtype=np.float64)
        if cent.ndim != 2 or cent.shape[0] < 1:
            raise DataError(f"centroids must be (K, dim), got {cent.shape}")
        if not np.all(np.isfinite(cent)):
            raise DataError("centroids contain non-finite values")
        if self.inertia < 0:
            raise DataError("inertia must be >= 0")
        object.__setattr__(self, "centroids", cent)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def assign_clusters(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid assignment; ties go to the lower cluster index."""
    return np.argmin(_squared_distances(points, centroids), axis=1)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
        else:
            probs = np.full(n, 1.0 / n)
        idx = int(rng.choice(n, p=probs))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _lloyd(
    points: np.ndarray,
    centroids: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, float, int, list[float]]:
    """Lloyd iterations with farthest-point reseeding of empty clusters.

    Returns (centroids, labels, inertia, iterations, inertia history); the
    history is measured after each assignment step and is non-increasing.
    """
    k = centroids.shape[0]
    history: list[float] = []
    labels = assign_clusters(points, centroids)
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = _squared_distances(points, centroids)
        point_cost = d2[np.arange(points.shape[0]), labels]
        history.append(float(point_cost.sum()))

        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, points)
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty, None]

        # Reseed each empty cluster to the point farthest from its assigned
        # centroid; reuse of the same point is avoided by zeroing its cost.
        empty = np.nonzero(~nonempty)[0]
        if empty.size:
            cost = point_cost.copy()
            for cid in empty:
                far = int(np.argmax(cost))
                new_centroids[cid] = points[far]
                cost[far] = -1.0
        shift = ((new_centroids - centroids) ** 2).sum(axis=1).max()
        centroids = new_centroids
        labels = assign_clusters(points, centroids)
        if shift < tol:
            break
    final_d2 = _squared_distances(points, centroids)
    inertia = float(final_d2[np.arange(points.shape[0]), labels].sum())
    history.append(inertia)
    return centroids, labels, inertia, iterations, history


def kmeans_fit(
    features: FeatureMap | np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> tuple[ClusterModel, LabelMap]:
    """k-means++ / Lloyd clustering, best of `restarts` runs.

    Accepts a FeatureMap (clustered over its grid) or a raw (n, dim) point
    array. Deterministic per seed: restart r draws from the substream
    (seed, r), and the best-inertia restart wins with ties to the earlier
    restart. Returns the model and the assignment map Q at grid resolution
    (or a 1 x n map for raw points).
    """
    if isinstance(features, FeatureMap):
        grid_shape = (features.grid_h, features.grid_w)
        points = features.values.reshape(-1, features.dim).astype(np.float64)
    else:
        pts = np.asarray(features, dtype=np.float64)
        if pts.ndim != 2:
            raise DataError(f"expected (n, dim) points, got shape {pts.shape}")
        grid_shape = (1, pts.shape[0])
        points = pts
    n = points.shape[0]
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if n < k:
        raise DataError(f"cannot fit {k} clusters to {n} points")
    if restarts < 1 or max_iter < 1:
        raise DataError("restarts and max_iter must be >= 1")

    best: tuple[float, int] | None = None
    best_result = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), r]))
        init = _kmeans_pp_init(points, k, rng)
        centroids, labels, inertia, iters, _ = _lloyd(points, init, max_iter, tol)
        key = (inertia, r)
        if best is None or key < best:
            best = key
            best_result = (centroids, labels, inertia, iters)

    centroids, labels, inertia, iters = best_result
    model = ClusterModel(centroids=centroids, inertia=inertia, iterations_run=iters, seed=seed)
    q = LabelMap(labels.reshape(grid_shape).astype(np.uint16), num_classes=k)
    return model, q


def assign_feature_map(features: FeatureMap, model: ClusterModel) -> LabelMap:
    """Nearest-centroid cluster map for new features under a fitted model."""
    points = features.values.reshape(-1, features.dim).astype(np.float64)
    labels = assign_clusters(points, model.centroids)
    return LabelMap(
        labels.reshape(features.grid_h, features.grid_w).astype(np.uint16),
        num_classes=model.k,
    )


def project_q_to_pixels(q: LabelMap, height: int, width: int, patch: int) -> LabelMap:
    """Nearest-neighbour block upsampling: pixel (r, c) gets Q(r//patch, c//patch)."""
    if patch < 1:
        raise DataError(f"patch must be >= 1, got {patch}")
    expected = (-(-height // patch), -(-width // patch))
    if (q.height, q.width) != expected:
        raise DataError(
            f"grid dims {(q.height, q.width)} do not match ceil({height}/{patch}) x "
            f"ceil({width}/{patch}) = {expected}"
        )
    up = np.repeat(np.repeat(q.labels, patch, axis=0), patch, axis=1)
    return LabelMap(up[:height, :width], num_classes=q.num_classes)


def fuse_labels(regions: RegionMap, q_pixels: LabelMap) -> LabelMap:
    """Majority-vote the cluster map inside each region; uncovered pixels
    keep their cluster label. Vote ties go to the smallest class id."""
    if (regions.height, regions.width) != (q_pixels.height, q_pixels.width):
        raise DataError(
            f"region map {(regions.height, regions.width)} and cluster map "
            f"{(q_pixels.height, q_pixels.width)} dims differ"
        )
    ids = regions.region_ids.astype(np.int64)
    q = q_pixels.labels.astype(np.int64)
    k = q_pixels.num_classes
    votes = np.zeros((regions.max_id + 1, k), dtype=np.int64)
    np.add.at(votes, (ids.ravel(), q.ravel()), 1)
    winners = np.argmax(votes, axis=1)  # first max = smallest class id
    fused = np.where(ids > 0, winners[ids], q)
    return LabelMap(fused.astype(np.uint16), num_classes=k)
