"""Raster data model: class-index masks, probability maps, connected components.

Pixel sets of components are stored as sorted coordinate runs
``(row, col_start, col_end)`` with an exclusive ``col_end``, which keeps
memory bounded on high-definition masks while still allowing fast
pixel-set algebra.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

GROUND_TRUTH = "ground_truth"
PREDICTION = "prediction"

# 8-neighborhood structuring element shared by all component operations.
EIGHT_CONN = np.ones((3, 3), dtype=bool)

PROBMAP_MAGIC = b"SAPM"
PROBMAP_VERSION = 1
# magic, version u16, height u32, width u32, classes u32, dtype code u16
_PROBMAP_HEADER = struct.Struct("<4sHIIIH")
_DTYPE_FLOAT32_LE = 0


class RasterError(ValueError):
    """Malformed raster input or mismatched raster dimensions."""


@dataclass(frozen=True)
class SegMask:
    """Per-pixel class-index raster. Index 0 is reserved for void/unlabeled."""

    data: np.ndarray  # (h, w) unsigned integer, values in 0..classes
    classes: int

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def validate(self) -> "SegMask":
        if self.data.ndim != 2:
            raise RasterError(f"mask must be 2D, got ndim={self.data.ndim}")
        if not np.issubdtype(self.data.dtype, np.integer):
            raise RasterError(f"mask dtype must be integer, got {self.data.dtype}")
        if self.data.size and (int(self.data.min()) < 0 or int(self.data.max()) > self.classes):
            raise RasterError(
                f"mask values must lie in 0..{self.classes}, "
                f"got range {int(self.data.min())}..{int(self.data.max())}"
            )
        return self


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel class probability tensor, float32, channel i = class i+1."""

    data: np.ndarray  # (h, w, c) float32

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def classes(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def validate(self) -> "ProbMap":
        if self.data.ndim != 3:
            raise RasterError(f"probability map must be 3D, got ndim={self.data.ndim}")
        if self.data.dtype != np.float32:
            raise RasterError(f"probability map dtype must be float32, got {self.data.dtype}")
        if self.data.size:
            if float(self.data.min()) < 0.0 or float(self.data.max()) > 1.0:
                raise RasterError("probability entries must lie in [0, 1]")
            sums = self.data.sum(axis=2, dtype=np.float64)
            worst = float(np.abs(sums - 1.0).max())
            if worst > 1e-4:
                raise RasterError(f"per-pixel probabilities must sum to 1 within 1e-4, worst {worst:g}")
        return self


@dataclass(frozen=True)
class Component:
    """A maximal 8-connected same-class pixel region of one raster."""

    id: int
    class_id: int
    runs: np.ndarray  # (n, 3) int32: row, col_start, col_end (exclusive)
    size: int
    bbox: tuple[int, int, int, int]  # inclusive (min_row, min_col, max_row, max_col)
    origin: str  # GROUND_TRUTH or PREDICTION
    raster_size: tuple[int, int]

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Decode runs to (rows, cols) arrays in raster-scan order."""
        lengths = self.runs[:, 2] - self.runs[:, 1]
        rows = np.repeat(self.runs[:, 0], lengths)
        cols = np.concatenate(
            [np.arange(s, e, dtype=np.int64) for _, s, e in self.runs]
        ) if len(self.runs) else np.empty(0, dtype=np.int64)
        return rows.astype(np.int64), cols

    def flat_indices(self) -> np.ndarray:
        """Row-major flat pixel indices, sorted ascending."""
        rows, cols = self.pixel_coords()
        return rows * self.raster_size[1] + cols

    def to_mask(self) -> np.ndarray:
        """Boolean raster of this component's pixels."""
        m = np.zeros(self.raster_size, dtype=bool)
        for r, s, e in self.runs:
            m[r, s:e] = True
        return m

    @property
    def first_pixel(self) -> tuple[int, int]:
        return (int(self.runs[0, 0]), int(self.runs[0, 1]))


@dataclass(frozen=True)
class ComponentMap:
    """All components of one mask plus the per-pixel component-id raster."""

    shape: tuple[int, int]
    components: list[Component] = field(default_factory=list)
    labels: np.ndarray = None  # (h, w) int32, 0 = no component
    origin: str = GROUND_TRUTH

    def by_id(self, component_id: int) -> Component:
        comp = self.components[component_id - 1]
        assert comp.id == component_id
        return comp

    def __len__(self) -> int:
        return len(self.components)


def mask_runs(mask: np.ndarray) -> np.ndarray:
    """Row runs (row, col_start, col_end-exclusive) of a boolean raster."""
    return _runs_by_label(mask.astype(np.int32))[0][1] if mask.any() else np.empty((0, 3), np.int32)


def _runs_by_label(labels: np.ndarray) -> dict[int, np.ndarray]:
    """Split a label raster into per-label run arrays, runs in raster-scan order.

    Label 0 is treated as background and omitted.
    """
    h, w = labels.shape
    # Sentinel column of -1 guarantees runs never span row boundaries.
    flat = np.column_stack([labels, np.full((h, 1), -1, dtype=labels.dtype)]).ravel()
    change = np.flatnonzero(np.diff(flat) != 0) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [flat.size]])
    vals = flat[starts]
    keep = vals > 0
    starts, ends, vals = starts[keep], ends[keep], vals[keep]
    rows = starts // (w + 1)
    col_start = starts % (w + 1)
    col_end = ends % (w + 1)
    run_table = np.column_stack([rows, col_start, col_end]).astype(np.int32)

    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    sorted_runs = run_table[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    groups = np.split(np.arange(len(sorted_vals)), boundaries)
    out: dict[int, np.ndarray] = {}
    for g in groups:
        if len(g) == 0:
            continue
        out[int(sorted_vals[g[0]])] = np.ascontiguousarray(sorted_runs[g])
    return out


def argmax_mask(probs: ProbMap) -> SegMask:
    """Predicted mask from a probability map.

    Ties break toward the lowest class index; channel i maps to class
    index i+1 so 0 stays reserved for void.
    """
    probs.validate()
    pred = probs.data.argmax(axis=2).astype(np.int32) + 1
    dtype = np.uint8 if probs.classes <= 255 else np.uint16
    return SegMask(data=pred.astype(dtype), classes=probs.classes)


def extract_components(mask: SegMask, ignore_void: bool = True,
                       origin: str = GROUND_TRUTH) -> ComponentMap:
    """Maximal 8-connected same-class regions of a mask.

    Component ids are 1-based and assigned in raster-scan order of each
    component's first pixel, so extraction is fully deterministic. With
    ignore_void the void class 0 forms no components; otherwise void
    regions become components with class_id 0.
    """
    mask.validate()
    h, w = mask.shape
    data = mask.data
    combined = np.zeros((h, w), dtype=np.int32)
    class_of_label: dict[int, int] = {}
    offset = 0
    class_values = np.unique(data)
    for cls in class_values:
        cls = int(cls)
        if cls == 0 and ignore_void:
            continue
        m = data == cls
        lab, n = ndimage.label(m, structure=EIGHT_CONN)
        if n == 0:
            continue
        combined[m] = lab[m] + offset
        for k in range(1, n + 1):
            class_of_label[offset + k] = cls
        offset += n

    # Renumber so ids follow raster-scan order of component first pixels.
    flat = combined.ravel()
    vals, first_idx = np.unique(flat, return_index=True)
    nonzero = vals > 0
    vals, first_idx = vals[nonzero], first_idx[nonzero]
    order = np.argsort(first_idx)
    remap = np.zeros(offset + 1, dtype=np.int32)
    remap[vals[order]] = np.arange(1, len(vals) + 1, dtype=np.int32)
    labels = remap[combined]
    class_by_new = {int(remap[v]): class_of_label[int(v)] for v in vals}

    runs_by_id = _runs_by_label(labels)
    components: list[Component] = []
    for cid in range(1, len(vals) + 1):
        runs = runs_by_id[cid]
        size = int((runs[:, 2] - runs[:, 1]).sum())
        bbox = (int(runs[:, 0].min()), int(runs[:, 1].min()),
                int(runs[:, 0].max()), int(runs[:, 2].max()) - 1)
        components.append(Component(
            id=cid, class_id=class_by_new[cid], runs=runs, size=size,
            bbox=bbox, origin=origin, raster_size=(h, w)))
    return ComponentMap(shape=(h, w), components=components, labels=labels, origin=origin)


def component_from_mask(mask: np.ndarray, class_id: int, component_id: int = 1,
                        origin: str = GROUND_TRUTH) -> Component:
    """Build a single Component from a boolean raster (mainly for tests/tools)."""
    runs = _runs_by_label(mask.astype(np.int32)).get(1)
    if runs is None:
        raise RasterError("empty component mask")
    size = int((runs[:, 2] - runs[:, 1]).sum())
    bbox = (int(runs[:, 0].min()), int(runs[:, 1].min()),
            int(runs[:, 0].max()), int(runs[:, 2].max()) - 1)
    return Component(id=component_id, class_id=class_id, runs=runs, size=size,
                     bbox=bbox, origin=origin, raster_size=mask.shape)


def intersect_size(a: Component, b: Component) -> int:
    """|a ∩ b| by pixel-coordinate identity."""
    if a.raster_size != b.raster_size:
        raise RasterError(f"raster dimensions differ: {a.raster_size} vs {b.raster_size}")
    if (a.bbox[2] < b.bbox[0] or b.bbox[2] < a.bbox[0]
            or a.bbox[3] < b.bbox[1] or b.bbox[3] < a.bbox[1]):
        return 0
    return runs_intersect_size(a.runs, b.runs)


def runs_intersect_size(ra: np.ndarray, rb: np.ndarray) -> int:
    """Intersection size of two run tables sorted in raster-scan order."""
    ia = ib = 0
    total = 0
    na, nb = len(ra), len(rb)
    while ia < na and ib < nb:
        rowa, sa, ea = int(ra[ia, 0]), int(ra[ia, 1]), int(ra[ia, 2])
        rowb, sb, eb = int(rb[ib, 0]), int(rb[ib, 1]), int(rb[ib, 2])
        if rowa < rowb:
            ia += 1
        elif rowb < rowa:
            ib += 1
        else:
            lo, hi = max(sa, sb), min(ea, eb)
            if lo < hi:
                total += hi - lo
            if ea <= eb:
                ia += 1
            else:
                ib += 1
    return total


def one_hot(mask: SegMask) -> ProbMap:
    """One-hot probability map of a void-free mask (class v -> channel v-1)."""
    if mask.data.min() < 1:
        raise RasterError("one_hot requires a void-free mask")
    data = np.zeros((mask.height, mask.width, mask.classes), dtype=np.float32)
    rows, cols = np.indices(mask.shape)
    data[rows, cols, mask.data.astype(np.int64) - 1] = 1.0
    return ProbMap(data=data)


# --------------------------------------------------------------------------
# File formats


def write_mask_png(mask: SegMask, path) -> None:
    """Single-channel indexed PNG, 8-bit when classes fit else 16-bit."""
    arr = mask.data
    if mask.classes <= 255:
        im = Image.fromarray(arr.astype(np.uint8))
    else:
        im = Image.fromarray(arr.astype(np.uint16))
    im.save(path, format="PNG")


def read_mask_png(path, classes: int) -> SegMask:
    im = Image.open(path)
    arr = np.asarray(im)
    if arr.ndim != 2:
        raise RasterError(f"mask PNG must be single-channel, got shape {arr.shape}")
    dtype = np.uint8 if classes <= 255 else np.uint16
    return SegMask(data=arr.astype(dtype), classes=classes).validate()


def write_probmap(probs: ProbMap, path) -> None:
    header = _PROBMAP_HEADER.pack(PROBMAP_MAGIC, PROBMAP_VERSION,
                                  probs.height, probs.width, probs.classes,
                                  _DTYPE_FLOAT32_LE)
    payload = np.ascontiguousarray(probs.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_probmap(path) -> ProbMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PROBMAP_HEADER.size:
        raise RasterError("probability map file truncated")
    magic, version, h, w, c, dtype_code = _PROBMAP_HEADER.unpack_from(raw)
    if magic != PROBMAP_MAGIC:
        raise RasterError(f"bad magic {magic!r}")
    if version != PROBMAP_VERSION:
        raise RasterError(f"unsupported version {version}")
    if dtype_code != _DTYPE_FLOAT32_LE:
        raise RasterError(f"unsupported dtype code {dtype_code}")
    expected = h * w * c * 4
    payload = raw[_PROBMAP_HEADER.size:]
    if len(payload) != expected:
        raise RasterError(f"payload size {len(payload)} != expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    return ProbMap(data=np.ascontiguousarray(data))
