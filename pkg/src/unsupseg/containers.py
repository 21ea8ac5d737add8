"""Core grid types, the WKT1 binary tensor container, and split manifests.

Container layout (all integers little-endian):

    bytes 0..3   magic b"WKT1"
    byte  4      format version, currently 1
    byte  5      dtype code: 1=u8, 2=u16, 3=u32, 4=f32
    byte  6      ndim
    next 4*ndim  dims as u32
    rest         row-major payload

Mask sets are a count-prefixed sequence: u32 count, u32 height, u32 width,
then per mask a f32 saliency followed by the mask's u8 grid in the same
container layout.

Manifests are UTF-8 text, LF line endings, one record per line with
tab-separated fields: id, image_path, feature_path, maskset_path and an
optional label_path.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from unsupseg.errors import FormatError, ManifestError

MAGIC = b"WKT1"
VERSION = 1

_DTYPE_BY_CODE = {
    1: np.dtype("<u1"),
    2: np.dtype("<u2"),
    3: np.dtype("<u4"),
    4: np.dtype("<f4"),
}
_CODE_BY_KIND = {
    np.dtype(np.uint8): 1,
    np.dtype(np.uint16): 2,
    np.dtype(np.uint32): 3,
    np.dtype(np.float32): 4,
}

MAX_NDIM = 4


# ---------------------------------------------------------------------------
# Grid types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageTile:
    """Grayscale tile, 8-bit intensities, row-major (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise FormatError(f"image tile must be a non-empty 2-D grid, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-patch feature grid, float32, channel-last (grid_h, grid_w, dim)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 3 or min(vals.shape) < 1:
            raise FormatError(f"feature map must have shape (grid_h, grid_w, dim), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise FormatError("feature map contains non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids, u16, with every label < num_classes.

    Plays several roles: pre-pseudo-label, projected cluster map,
    prediction, and ground truth.
    """

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if lab.ndim != 2 or lab.shape[0] < 1 or lab.shape[1] < 1:
            raise FormatError(f"label map must be a non-empty 2-D grid, got shape {lab.shape}")
        if self.num_classes < 1:
            raise FormatError("num_classes must be >= 1")
        if lab.size and int(lab.max()) >= self.num_classes:
            raise FormatError(
                f"label {int(lab.max())} out of range for num_classes={self.num_classes}"
            )
        object.__setattr__(self, "labels", lab)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class RegionMap:
    """Per-pixel region identifiers, u32; id 0 means uncovered.

    Nonzero ids form the contiguous range 1..max and each labels a
    nonempty pixel set.
    """

    region_ids: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.region_ids, dtype=np.uint32)
        if ids.ndim != 2 or ids.shape[0] < 1 or ids.shape[1] < 1:
            raise FormatError(f"region map must be a non-empty 2-D grid, got shape {ids.shape}")
        present = np.unique(ids)
        nonzero = present[present > 0]
        if nonzero.size:
            expected = np.arange(1, nonzero.size + 1, dtype=ids.dtype)
            if not np.array_equal(nonzero, expected):
                raise FormatError(
                    f"region ids must be contiguous 1..{nonzero.size}, got {nonzero.tolist()}"
                )
        object.__setattr__(self, "region_ids", ids)

    @property
    def height(self) -> int:
        return self.region_ids.shape[0]

    @property
    def width(self) -> int:
        return self.region_ids.shape[1]

    @property
    def max_id(self) -> int:
        return int(self.region_ids.max()) if self.region_ids.size else 0


@dataclass(frozen=True)
class MaskSet:
    """Binary mask proposals with saliency scores over one tile."""

    masks: tuple
    height: int
    width: int

    def __post_init__(self):
        norm = []
        for i, (bitmask, saliency) in enumerate(self.masks):
            bm = np.ascontiguousarray(bitmask).astype(bool)
            if bm.shape != (self.height, self.width):
                raise FormatError(
                    f"mask {i} has shape {bm.shape}, expected {(self.height, self.width)}"
                )
            sal = float(saliency)
            if not np.isfinite(sal) or not 0.0 <= sal <= 1.0:
                raise FormatError(f"mask {i} saliency {saliency!r} outside [0, 1]")
            norm.append((bm, sal))
        object.__setattr__(self, "masks", tuple(norm))

    def __len__(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class ManifestRecord:
    """One tile entry of a split manifest. Paths are kept verbatim."""

    id: str
    image_path: str
    feature_path: str
    maskset_path: str
    label_path: str | None = None

    def fields(self) -> list[str]:
        out = [self.id, self.image_path, self.feature_path, self.maskset_path]
        if self.label_path is not None:
            out.append(self.label_path)
        return out


@dataclass(frozen=True)
class SplitManifest:
    """Ordered tile records belonging to one of the train/val/test splits."""

    records: tuple
    split: str
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ManifestError(f"split must be train/val/test, got {self.split!r}")
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "root", Path(self.root))

    def __len__(self) -> int:
        return len(self.records)

    def resolve(self, rel_path: str) -> Path:
        return self.root / rel_path


# ---------------------------------------------------------------------------
# WKT1 container I/O
# ---------------------------------------------------------------------------


def _as_array(tensor) -> np.ndarray:
    if isinstance(tensor, ImageTile):
        return tensor.pixels
    if isinstance(tensor, FeatureMap):
        return tensor.values
    if isinstance(tensor, LabelMap):
        return tensor.labels
    if isinstance(tensor, RegionMap):
        return tensor.region_ids
    return np.asarray(tensor)


def container_bytes(tensor) -> bytes:
    """Serialize a grid (typed wrapper or ndarray) to WKT1 bytes."""
    arr = _as_array(tensor)
    dtype = np.dtype(arr.dtype)
    if dtype not in _CODE_BY_KIND:
        raise FormatError(f"unsupported dtype {dtype}; expected u8/u16/u32/f32")
    if arr.ndim < 1 or arr.ndim > MAX_NDIM:
        raise FormatError(f"tensor rank must be 1..{MAX_NDIM}, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise FormatError(f"tensor dims must all be >= 1, got {arr.shape}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<BBB", VERSION, _CODE_BY_KIND[dtype], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())
    return buf.getvalue()


def write_container(tensor, path) -> None:
    """Write a grid value to a WKT1 container file."""
    data = container_bytes(tensor)
    Path(path).write_bytes(data)


def container_from_bytes(data: bytes, source: str = "<bytes>") -> np.ndarray:
    """Parse WKT1 bytes back to an ndarray; inverse of :func:`container_bytes`."""
    if len(data) < 7:
        raise FormatError(f"{source}: container header truncated ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported container version {version}")
    if code not in _DTYPE_BY_CODE:
        raise FormatError(f"{source}: unknown dtype code {code}")
    if ndim < 1 or ndim > MAX_NDIM:
        raise FormatError(f"{source}: rank {ndim} outside 1..{MAX_NDIM}")
    header_end = 7 + 4 * ndim
    if len(data) < header_end:
        raise FormatError(f"{source}: dims truncated")
    dims = struct.unpack_from(f"<{ndim}I", data, 7)
    if any(d < 1 for d in dims):
        raise FormatError(f"{source}: zero-sized dim in {dims}")
    dtype = _DTYPE_BY_CODE[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = len(data) - header_end
    if actual != expected:
        raise FormatError(
            f"{source}: payload has {actual} bytes, expected {expected} for dims {dims}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=int(np.prod(dims)), offset=header_end)
    return arr.reshape(dims).copy()


def read_container(path) -> np.ndarray:
    """Read a WKT1 container file; validates magic, dtype, and dims."""
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"container file not found: {p}")
    return container_from_bytes(p.read_bytes(), source=str(p))


def maskset_bytes(maskset: MaskSet) -> bytes:
    """Serialize a MaskSet: u32 count, u32 height, u32 width, then per mask
    a f32 saliency followed by a WKT1 u8 grid."""
    buf = io.BytesIO()
    buf.write(struct.pack("<III", len(maskset), maskset.height, maskset.width))
    for bitmask, saliency in maskset.masks:
        buf.write(struct.pack("<f", saliency))
        buf.write(container_bytes(bitmask.astype(np.uint8)))
    return buf.getvalue()


def write_maskset(maskset: MaskSet, path) -> None:
    Path(path).write_bytes(maskset_bytes(maskset))


def maskset_from_bytes(data: bytes, source: str = "<bytes>") -> MaskSet:
    if len(data) < 12:
        raise FormatError(f"{source}: maskset header truncated")
    count, height, width = struct.unpack_from("<III", data, 0)
    offset = 12
    masks = []
    grid_bytes = 7 + 8 + height * width  # header + 2 dims + u8 payload
    for i in range(count):
        if len(data) < offset + 4 + grid_bytes:
            raise FormatError(f"{source}: mask {i} truncated")
        (saliency,) = struct.unpack_from("<f", data, offset)
        offset += 4
        grid = container_from_bytes(data[offset : offset + grid_bytes], source=f"{source}[{i}]")
        offset += grid_bytes
        if grid.shape != (height, width):
            raise FormatError(f"{source}: mask {i} dims {grid.shape} != ({height}, {width})")
        masks.append((grid.astype(bool), float(saliency)))
    if offset != len(data):
        raise FormatError(f"{source}: {len(data) - offset} trailing bytes after {count} masks")
    return MaskSet(masks=tuple(masks), height=height, width=width)


def read_maskset(path) -> MaskSet:
    p = Path(path)
    if not p.is_file():
        raise FormatError(f"maskset file not found: {p}")
    return maskset_from_bytes(p.read_bytes(), source=str(p))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def load_manifest(path, split: str | None = None, check_files: bool = True) -> SplitManifest:
    """Parse a tab-separated split manifest.

    Args:
        path: manifest file; relative record paths resolve against its parent.
        split: train/val/test; inferred from the file stem when omitted.
        check_files: verify that every referenced file exists.
    """
    p = Path(path)
    if split is None:
        stem = p.stem
        if stem not in ("train", "val", "test"):
            raise ManifestError(
                f"cannot infer split from manifest name {p.name!r}; pass split= explicitly"
            )
        split = stem
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {p}: {exc}") from exc

    records: list[ManifestRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "" and lineno == text.count("\n") + 1:
            break  # trailing newline
        parts = line.split("\t")
        if len(parts) < 4 or len(parts) > 5 or any(f == "" for f in parts):
            raise ManifestError(
                f"{p}:{lineno}: expected 4 or 5 non-empty tab-separated fields, got {len(parts)}"
            )
        rec_id = parts[0]
        if rec_id in seen:
            raise ManifestError(
                f"{p}:{lineno}: duplicate id {rec_id!r} (first seen on line {seen[rec_id]})"
            )
        seen[rec_id] = lineno
        records.append(
            ManifestRecord(
                id=rec_id,
                image_path=parts[1],
                feature_path=parts[2],
                maskset_path=parts[3],
                label_path=parts[4] if len(parts) == 5 else None,
            )
        )

    manifest = SplitManifest(records=tuple(records), split=split, root=p.parent)
    if check_files:
        missing = []
        for rec in manifest.records:
            for rel in rec.fields()[1:]:
                if not manifest.resolve(rel).is_file():
                    missing.append((rec.id, rel))
        if missing:
            details = "; ".join(f"{rid}: {rel}" for rid, rel in missing)
            raise ManifestError(f"{p}: missing referenced files: {details}")
    return manifest


def manifest_text(manifest: SplitManifest) -> str:
    return "".join("\t".join(rec.fields()) + "\n" for rec in manifest.records)


def save_manifest(manifest: SplitManifest, path) -> None:
    Path(path).write_text(manifest_text(manifest), encoding="utf-8", newline="")
