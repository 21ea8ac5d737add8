"""Grid morphology and propagation primitives shared by several stages."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
EIGHT_CONN = np.ones((3, 3), dtype=bool)


def nearest_labels(labels: np.ndarray, connectivity: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Propagate nonzero labels to zero cells by multi-source BFS.

    Each zero cell receives the label of its nearest nonzero cell in grid
    hop distance; equidistant ties resolve to the smallest label. Returns
    (filled labels, hop distances); unreachable cells keep label 0 and
    distance -1 (cannot happen on a connected grid with >= 1 source).
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    lab = labels.astype(np.int64, copy=True)
    dist = np.where(lab > 0, 0, -1).astype(np.int64)
    if not (lab > 0).any():
        return lab, dist

    shifts = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        shifts += [(-1, -1), (-1, 1), (1, -1), (1, 1)]

    sentinel = np.iinfo(np.int64).max
    level = 0
    while True:
        unassigned = lab == 0
        if not unassigned.any():
            break
        best = np.full(lab.shape, sentinel, dtype=np.int64)
        for dr, dc in shifts:
            shifted = _shift(lab, dr, dc, fill=0)
            cand = np.where(shifted > 0, shifted, sentinel)
            np.minimum(best, cand, out=best)
        newly = unassigned & (best < sentinel)
        if not newly.any():
            break
        level += 1
        lab[newly] = best[newly]
        dist[newly] = level
    return lab, dist


def _shift(arr: np.ndarray, dr: int, dc: int, fill=0) -> np.ndarray:
    """Return arr translated by (dr, dc), padding with fill."""
    out = np.full_like(arr, fill)
    h, w = arr.shape
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def binary_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological closing with a (2r+1)^2 square structuring element.

    The grid is padded by the radius first so the closing is extensive
    (never removes foreground) even at the image border.
    """
    if radius <= 0:
        return mask.astype(bool, copy=True)
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    padded = np.pad(mask.astype(bool), radius, mode="constant", constant_values=False)
    dilated = ndimage.binary_dilation(padded, structure=se)
    eroded = ndimage.binary_erosion(dilated, structure=se, border_value=False)
    return eroded[radius:-radius, radius:-radius]


def inner_border_removed(region_ids: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels that survive a one-pixel erosion of their region.

    A pixel survives iff every 8-neighbour inside the grid carries the same
    region id; the image border itself does not count as a boundary.
    """
    keep = np.ones(region_ids.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            shifted = _shift(region_ids.astype(np.int64), dr, dc, fill=-1)
            keep &= (shifted == region_ids) | (shifted == -1)
    return keep


def connected_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    structure = EIGHT_CONN if connectivity == 8 else FOUR_CONN
    comp, n = ndimage.label(mask, structure=structure)
    return comp, int(n)


def _thin_pass(mask: np.ndarray, step: int) -> np.ndarray:
    """One Zhang-Suen subiteration; step 0 uses the S/E conditions, step 1 N/W."""
    padded = np.pad(mask, 1, mode="constant", constant_values=False).astype(np.uint8)
    p = padded[1:-1, 1:-1]
    # Neighbours in the conventional order P2..P9 (N, NE, E, SE, S, SW, W, NW).
    p2 = padded[:-2, 1:-1]
    p3 = padded[:-2, 2:]
    p4 = padded[1:-1, 2:]
    p5 = padded[2:, 2:]
    p6 = padded[2:, 1:-1]
    p7 = padded[2:, :-2]
    p8 = padded[1:-1, :-2]
    p9 = padded[:-2, :-2]
    ring = [p2, p3, p4, p5, p6, p7, p8, p9]
    b = sum(n.astype(np.int16) for n in ring)
    a = np.zeros(p.shape, dtype=np.int16)
    for i in range(8):
        a += ((ring[i] == 0) & (ring[(i + 1) % 8] == 1)).astype(np.int16)
    if step == 0:
        c1 = (p2 * p4 * p6) == 0
        c2 = (p4 * p6 * p8) == 0
    else:
        c1 = (p2 * p4 * p8) == 0
        c2 = (p2 * p6 * p8) == 0
    delete = (p == 1) & (b >= 2) & (b <= 6) & (a == 1) & c1 & c2
    out = mask.copy()
    out[delete] = False
    return out


def zhang_suen_thin(mask: np.ndarray) -> np.ndarray:
    """Iterative boundary peeling to a 1-pixel-wide skeleton.

    Pure Zhang-Suen can annihilate an isolated 2x2 block entirely; to keep
    the per-component count invariant, any 8-component of the input left
    without skeleton pixels gets back its most interior pixel (exact
    Euclidean distance transform argmax, ties by scan order).
    """
    skel = mask.astype(bool, copy=True)
    while True:
        after = _thin_pass(_thin_pass(skel, 0), 1)
        if np.array_equal(after, skel):
            break
        skel = after

    comp, n = connected_components(mask, connectivity=8)
    if n:
        lost = np.setdiff1d(np.arange(1, n + 1), np.unique(comp[skel]), assume_unique=True)
        if lost.size:
            edt = ndimage.distance_transform_edt(mask)
            for cid in lost:
                inside = comp == cid
                scores = np.where(inside, edt, -1.0)
                skel[np.unravel_index(int(np.argmax(scores)), mask.shape)] = True
    return skel
