"""Deterministic synthetic scenes: ground truth, degraded grayscale tiles,
oracle mask proposals, and class-conditional patch features.

Shape geometry is quantized to the patch grid so that in the noiseless
limit every patch is class-pure and the full pipeline reproduces the
ground truth exactly. Label noise is injected as contiguous blobs (a
fixed fraction of pixels reassigned to a wrong class) because i.i.d.
pixel flips almost never change a patch's modal class and would leave
the knob inert.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from unsupseg.containers import (
    FeatureMap,
    ImageTile,
    LabelMap,
    ManifestRecord,
    MaskSet,
    SplitManifest,
    save_manifest,
    write_container,
    write_maskset,
)
from unsupseg.errors import DataError
from unsupseg.gridops import EIGHT_CONN

# Fixed intensity ramp of the grayscale renderer.
_INTENSITY_LOW = 30.0
_INTENSITY_HIGH = 210.0
_BANDING_AMPLITUDE = 8.0


@dataclass(frozen=True)
class SceneConfig:
    size: int = 128
    num_classes: int = 5
    shapes_per_tile: int = 7
    mask_noise: int = 1  # boundary perturbation radius, px
    label_noise: float = 0.1  # fraction of pixels flipped for the feature path
    feature_dim: int = 16
    feature_sigma: float = 0.35
    image_noise: float = 12.0  # grayscale noise sigma, gray levels
    patch: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_noise <= 0.5:
            raise DataError(f"label_noise must be in [0, 0.5], got {self.label_noise}")
        if self.feature_sigma <= 0:
            raise DataError("feature_sigma must be > 0")
        if self.image_noise < 0:
            raise DataError("image_noise must be >= 0")
        if self.num_classes < 2 or self.feature_dim < self.num_classes:
            raise DataError("need num_classes >= 2 and feature_dim >= num_classes")
        if self.size % self.patch != 0:
            raise DataError(f"size {self.size} must be a multiple of patch {self.patch}")
        if self.mask_noise < 0:
            raise DataError("mask_noise must be >= 0")


def _paint_shapes(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Class map from patch-aligned rectangles and road bars over background 0.

    With four or more classes the scene carries two structured landmarks
    on top of the generic shapes: one mid-size host block of class 2 and
    one small square of the rare class 1. They give every tile a scarce
    class and a medium homogeneous zone, the configuration degraded
    imagery is least kind to (and the one the label corruption targets).
    """
    p = cfg.patch
    cells = cfg.size // p
    gt = np.zeros((cfg.size, cfg.size), dtype=np.int64)
    structured = cfg.num_classes >= 4
    general = range(3, cfg.num_classes) if structured else range(1, cfg.num_classes)
    n_roads = max(2, cfg.shapes_per_tile // 3)
    for i in range(cfg.shapes_per_tile):
        cls = int(rng.choice(list(general)))
        if i < n_roads:
            # Elongated bar: 1 patch wide, 8..min(14, cells) patches long.
            length = int(rng.integers(8, min(14, cells) + 1))
            horizontal = bool(rng.integers(0, 2))
            r0 = int(rng.integers(0, cells - 1))
            c0 = int(rng.integers(0, max(1, cells - length + 1)))
            if horizontal:
                gt[r0 * p : (r0 + 1) * p, c0 * p : (c0 + length) * p] = cls
            else:
                gt[c0 * p : (c0 + length) * p, r0 * p : (r0 + 1) * p] = cls
        else:
            h = int(rng.integers(2, 7))
            w = int(rng.integers(2, 7))
            r0 = int(rng.integers(0, max(1, cells - h + 1)))
            c0 = int(rng.integers(0, max(1, cells - w + 1)))
            gt[r0 * p : (r0 + h) * p, c0 * p : (c0 + w) * p] = cls
    if structured:
        hh = hw = 5
        # Host hugs the top or bottom edge so the rare square always has a
        # clear band to land in, even on the smallest 8x8 patch grid.
        hr = int(rng.choice([0, cells - hh]))
        hc = int(rng.integers(0, cells - hw + 1))
        gt[hr * p : (hr + hh) * p, hc * p : (hc + hw) * p] = 2
        valid = [
            (rr, rc)
            for rr in range(cells - 2)
            for rc in range(cells - 2)
            if rr + 3 <= hr or rr >= hr + hh or rc + 3 <= hc or rc >= hc + hw
        ]
        rr, rc = valid[int(rng.integers(0, len(valid)))]
        gt[rr * p : (rr + 3) * p, rc * p : (rc + 3) * p] = 1
    return gt


def _render_image(gt: np.ndarray, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    levels = np.linspace(_INTENSITY_LOW, _INTENSITY_HIGH, cfg.num_classes)
    base = levels[gt]
    phase = rng.uniform(0, 2 * np.pi)
    cols = np.arange(cfg.size)
    banding = _BANDING_AMPLITUDE * np.sin(2 * np.pi * cols / cfg.size + phase)
    noisy = base + banding[None, :] + rng.normal(0, cfg.image_noise, size=base.shape)
    return np.clip(np.round(noisy), 0, 255).astype(np.uint8)


def _oracle_masks(gt: np.ndarray, cfg: SceneConfig, rng: np.random.Generator) -> MaskSet:
    """One proposal per connected ground-truth segment, with boundaries
    dilated or eroded by mask_noise and saliency drawn from [0.6, 1]."""
    masks = []
    for cls in range(cfg.num_classes):
        comp, n = ndimage.label(gt == cls, structure=EIGHT_CONN)
        for cid in range(1, n + 1):
            mask = comp == cid
            if cfg.mask_noise > 0:
                se = np.ones((2 * cfg.mask_noise + 1,) * 2, dtype=bool)
                if rng.integers(0, 2):
                    mask = ndimage.binary_dilation(mask, structure=se)
                else:
                    mask = ndimage.binary_erosion(mask, structure=se, border_value=True)
            saliency = float(rng.uniform(0.6, 1.0))
            if mask.any():
                masks.append((mask, saliency))
    return MaskSet(masks=tuple(masks), height=gt.shape[0], width=gt.shape[1])


def _corrupt_labels(gt: np.ndarray, cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Flip ~label_noise of the pixels for the feature path.

    Two coherent corruption modes, mimicking how degraded imagery is
    misread:

    * a targeted confusion: the tile's rarest foreground class `a` gets
      impostor blobs planted inside segments of a bigger class `b`, with
      slightly more impostor area than genuine `a` area. The impostor
      patches look like `a` but sit in majority-`b` regions, so their
      (wrong) supervision carries visibly lower region confidence than
      the genuine evidence; and
    * scattered blobs flipped to random wrong classes with the leftover
      budget.

    i.i.d. pixel flips would almost never change a patch's modal class
    and would leave the noise knob inert.
    """
    noisy = gt.copy()
    if cfg.label_noise == 0:
        return noisy
    size = cfg.size
    p = cfg.patch
    budget = cfg.label_noise * size * size

    # Targeted confusion: plant whole impostor patches of the rare class 1
    # inside the class-2 host block, at ~1.25x the genuine class-1 mass
    # but at most ~42 percent of the host. The attacked region keeps its
    # dominant class while its confidence drops well below that of clean
    # evidence; the impostor-vs-genuine balance is what the confidence
    # machinery has to resolve. The pair is fixed so the confusion stays
    # coherent across every tile of a split.
    areas = np.bincount(gt.ravel(), minlength=cfg.num_classes)
    a, b = 1, 2
    if cfg.num_classes >= 4 and areas[a] > 0 and areas[b] > 0:
        cells = size // p
        patch_modal_a = (
            gt.reshape(cells, p, cells, p).transpose(0, 2, 1, 3).reshape(cells, cells, -1)
            == a
        ).mean(axis=2) > 0.5
        genuine_patches = int(patch_modal_a.sum())
        w_target = min(int(round(1.3 * genuine_patches)), int(budget) // (p * p))
        segments, n_seg = ndimage.label(gt == b, structure=EIGHT_CONN)
        order = sorted(range(1, n_seg + 1), key=lambda s: (-int((segments == s).sum()), s))
        remaining = w_target
        for seg_id in order:
            if remaining <= 0:
                break
            zone = segments == seg_id
            inside = np.transpose(
                np.nonzero(
                    zone.reshape(cells, p, cells, p).transpose(0, 2, 1, 3)
                    .reshape(cells, cells, -1)
                    .all(axis=2)
                )
            )
            if len(inside) < 3:
                continue
            k = min(remaining, max(1, int(round(0.45 * len(inside)))))
            chosen = inside[rng.choice(len(inside), size=k, replace=False)]
            for pr, pc in chosen:
                noisy[pr * p : (pr + 1) * p, pc * p : (pc + 1) * p] = a
            remaining -= k

    # Scattered wrong-class blobs with the remaining budget. They stay off
    # the two landmark classes (as flip targets and as terrain) so the
    # engineered impostor-vs-genuine balance is not perturbed, and they
    # never overwrite already corrupted pixels.
    rows, cols = np.indices((size, size))
    landmarks = (gt == 1) | (gt == 2) if cfg.num_classes >= 4 else np.zeros_like(gt, bool)
    scatter_classes = [c for c in range(cfg.num_classes) if cfg.num_classes < 4 or c not in (1, 2)]
    for _ in range(200):
        flipped = int((noisy != gt).sum())
        if flipped >= budget:
            break
        cr = int(rng.integers(0, size))
        cc = int(rng.integers(0, size))
        radius = int(rng.integers(4, 11))
        wrong = int(rng.choice(scatter_classes))
        if wrong == gt[cr, cc]:
            wrong = scatter_classes[(scatter_classes.index(wrong) + 1) % len(scatter_classes)]
        disc = (
            ((rows - cr) ** 2 + (cols - cc) ** 2 <= radius * radius)
            & (noisy == gt)
            & ~landmarks
        )
        noisy[disc] = wrong
    return noisy


def _patch_features(
    noisy_gt: np.ndarray, cfg: SceneConfig, rng: np.random.Generator
) -> np.ndarray:
    """Per-patch class centroid (unit basis vector) plus Gaussian noise.

    The patch's class is its modal label after the noise flips; modal ties
    go to the smaller class id.
    """
    p = cfg.patch
    cells = cfg.size // p
    blocks = noisy_gt.reshape(cells, p, cells, p).transpose(0, 2, 1, 3).reshape(cells, cells, -1)
    patch_class = np.zeros((cells, cells), dtype=np.int64)
    for r in range(cells):
        counts = np.zeros((cells, cfg.num_classes), dtype=np.int64)
        for c in range(cells):
            counts[c] = np.bincount(blocks[r, c], minlength=cfg.num_classes)
        patch_class[r] = np.argmax(counts, axis=1)
    centroids = np.eye(cfg.feature_dim, dtype=np.float64)[: cfg.num_classes]
    values = centroids[patch_class] + rng.normal(
        0.0, cfg.feature_sigma, size=(cells, cells, cfg.feature_dim)
    )
    return values.astype(np.float32)


def generate_scene(cfg: SceneConfig) -> tuple[ImageTile, LabelMap, MaskSet, FeatureMap]:
    """Fully deterministic per seed: (image, ground truth, masks, features)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & (2**63 - 1), 0x5CE7E]))
    gt = _paint_shapes(cfg, rng)
    image = _render_image(gt, cfg, rng)
    masks = _oracle_masks(gt, cfg, rng)
    noisy_gt = _corrupt_labels(gt, cfg, rng)
    features = _patch_features(noisy_gt, cfg, rng)
    return (
        ImageTile(image),
        LabelMap(gt.astype(np.uint16), num_classes=cfg.num_classes),
        masks,
        FeatureMap(features),
    )


def split_sizes(n_tiles: int) -> tuple[int, int, int]:
    """60/15/25 split. Floors, with val/test floored at one tile each and
    the remainder going to train."""
    if n_tiles < 3:
        raise DataError(f"need at least 3 tiles to split, got {n_tiles}")
    val = max(1, int(np.floor(0.15 * n_tiles)))
    test = max(1, int(np.floor(0.25 * n_tiles)))
    train = n_tiles - val - test
    return train, val, test


def generate_split(
    cfg: SceneConfig, n_tiles: int, seed: int, out_dir
) -> dict[str, SplitManifest]:
    """Write tile containers plus train/val/test manifests under out_dir.

    Tile i draws from scene seed = seed + i, so regeneration with the same
    arguments is byte-identical and tiles are independent of the split
    boundaries.
    """
    out = Path(out_dir)
    tiles_dir = out / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    n_train, n_val, n_test = split_sizes(n_tiles)
    boundaries = {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_tiles),
    }
    manifests: dict[str, SplitManifest] = {}
    for split, indices in boundaries.items():
        records = []
        for i in indices:
            tid = f"t{i:04d}"
            image, gt, masks, features = generate_scene(replace(cfg, seed=seed + i))
            write_container(image, tiles_dir / f"{tid}.image.wkt")
            write_container(features, tiles_dir / f"{tid}.feat.wkt")
            write_maskset(masks, tiles_dir / f"{tid}.masks.wkm")
            write_container(gt, tiles_dir / f"{tid}.gt.wkt")
            records.append(
                ManifestRecord(
                    id=tid,
                    image_path=f"tiles/{tid}.image.wkt",
                    feature_path=f"tiles/{tid}.feat.wkt",
                    maskset_path=f"tiles/{tid}.masks.wkm",
                    label_path=f"tiles/{tid}.gt.wkt",
                )
            )
        manifest = SplitManifest(records=tuple(records), split=split, root=out)
        save_manifest(manifest, out / f"{split}.tsv")
        manifests[split] = manifest
    return manifests
