"""Synthetic label-error construction.

Drops annotation polygons or raster components with a size-dependent
Bernoulli probability, records every drop as a label-error component,
and offers the depth-gated Gaussian annotation smoothing used to blur
object boundaries in rendered masks.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import (
    Component,
    GROUND_TRUTH,
    RasterError,
    SegMask,
    _runs_by_label,
    extract_components,
)


class PerturbError(ValueError):
    """Bad perturbation input or configuration."""


@dataclass(frozen=True)
class PerturbConfig:
    p_hat: float = 0.5
    size_min: int = 500
    size_max: int = 10000
    eligible_classes: "frozenset[int] | None" = None  # None = every non-void class
    seed: int = 0

    def validate(self) -> "PerturbConfig":
        if not (0.0 <= self.p_hat <= 1.0):
            raise PerturbError(f"p_hat must lie in [0,1], got {self.p_hat}")
        if not self.size_min < self.size_max:
            raise PerturbError(
                f"size_min must be < size_max, got {self.size_min} >= {self.size_max}")
        return self

    def eligible(self, class_id: int) -> bool:
        if class_id == 0:
            return False
        return self.eligible_classes is None or class_id in self.eligible_classes


def drop_probability(size: int, cfg: PerturbConfig) -> float:
    """Linear ramp from p_hat at size_min down to 0 at size_max, 0 outside."""
    if size < cfg.size_min or size > cfg.size_max:
        return 0.0
    return cfg.p_hat * (cfg.size_max - size) / (cfg.size_max - cfg.size_min)


def keyed_uniform(seed: int, image_id: str, component_key: str) -> float:
    """Deterministic uniform draw in [0,1) keyed by (seed, image, component).

    Counter-based so per-image results never depend on iteration order.
    """
    digest = hashlib.sha256(f"{seed}|{image_id}|{component_key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


# --------------------------------------------------------------------------
# Polygon annotations (Cityscapes-style)


@dataclass(frozen=True)
class PolyObject:
    label: str
    polygon: tuple[tuple[float, float], ...]  # (x, y) vertices


@dataclass(frozen=True)
class PolygonAnnotation:
    height: int
    width: int
    objects: tuple[PolyObject, ...]

    def to_json(self) -> str:
        return json.dumps({
            "imgHeight": self.height,
            "imgWidth": self.width,
            "objects": [{"label": o.label, "polygon": [[float(x), float(y)] for x, y in o.polygon]}
                        for o in self.objects],
        })

    @staticmethod
    def from_json(text: str) -> "PolygonAnnotation":
        obj = json.loads(text)
        return PolygonAnnotation(
            height=int(obj["imgHeight"]), width=int(obj["imgWidth"]),
            objects=tuple(
                PolyObject(label=o["label"],
                           polygon=tuple((float(x), float(y)) for x, y in o["polygon"]))
                for o in obj["objects"]))


def _bresenham(r0: int, c0: int, r1: int, c1: int):
    """Integer pixels of the line segment (r0,c0)-(r1,c1), inclusive."""
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 >= -dr:
            err -= dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr


def _polygon_pixels(vertices, h: int, w: int) -> "np.ndarray | None":
    """Boolean raster covered by one polygon: even-odd interior plus edges.

    Pixel centers strictly inside the polygon by the even-odd rule are
    filled, and every pixel touched by an edge (integer Bresenham walk)
    is included, so the outline itself always belongs to the polygon.
    Returns None for degenerate (zero-area) polygons.
    """
    if len(vertices) < 3:
        return None
    xs = np.array([v[0] for v in vertices], dtype=np.float64)
    ys = np.array([v[1] for v in vertices], dtype=np.float64)
    # shoelace formula; collinear or repeated vertices give zero area
    area = 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))
    if area == 0.0:
        return None
    out = np.zeros((h, w), dtype=bool)

    row_lo = max(0, int(math.floor(ys.min())))
    row_hi = min(h - 1, int(math.ceil(ys.max())))
    n = len(vertices)
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        crossings = []
        for i in range(n):
            x1, y1 = xs[i], ys[i]
            x2, y2 = xs[(i + 1) % n], ys[(i + 1) % n]
            if y1 == y2:
                continue
            if min(y1, y2) <= yc < max(y1, y2):
                crossings.append(x1 + (yc - y1) * (x2 - x1) / (y2 - y1))
        crossings.sort()
        for j in range(0, len(crossings) - 1, 2):
            lo, hi = crossings[j], crossings[j + 1]
            c_start = max(0, int(math.ceil(lo - 0.5)))
            c_end = min(w - 1, int(math.ceil(hi - 0.5)) - 1)
            if c_start <= c_end:
                out[row, c_start:c_end + 1] = True

    for i in range(n):
        r0, c0 = int(round(ys[i])), int(round(xs[i]))
        r1, c1 = int(round(ys[(i + 1) % n])), int(round(xs[(i + 1) % n]))
        for r, c in _bresenham(r0, c0, r1, c1):
            if 0 <= r < h and 0 <= c < w:
                out[r, c] = True
    return out


def _owner_raster(ann: PolygonAnnotation) -> np.ndarray:
    """Index of the top-most polygon covering each pixel, -1 where none."""
    owner = np.full((ann.height, ann.width), -1, dtype=np.int32)
    for idx, obj in enumerate(ann.objects):
        pix = _polygon_pixels(obj.polygon, ann.height, ann.width)
        if pix is None:
            warnings.warn(f"skipping degenerate polygon {idx} (label {obj.label!r})")
            continue
        owner[pix] = idx
    return owner


def rasterize(ann: PolygonAnnotation, class_table: dict[str, int]) -> SegMask:
    """Fill polygons in draw order; later objects overwrite earlier ones."""
    for obj in ann.objects:
        if obj.label not in class_table:
            raise PerturbError(f"unknown class name {obj.label!r}")
    owner = _owner_raster(ann)
    data = np.zeros((ann.height, ann.width), dtype=np.int32)
    for idx, obj in enumerate(ann.objects):
        data[owner == idx] = class_table[obj.label]
    classes = max(class_table.values()) if class_table else 0
    dtype = np.uint8 if classes <= 255 else np.uint16
    return SegMask(data=data.astype(dtype), classes=classes)


# --------------------------------------------------------------------------
# Error registry


@dataclass(frozen=True)
class RegistryEntry:
    image: str
    class_id: int
    size: int
    bbox: tuple[int, int, int, int]
    pixels_rle: np.ndarray  # (n, 3) int32 runs: row, col_start, col_end
    seed_key: str

    def to_component(self, raster_size: tuple[int, int], component_id: int = 1) -> Component:
        return Component(id=component_id, class_id=self.class_id,
                         runs=self.pixels_rle, size=self.size, bbox=self.bbox,
                         origin=GROUND_TRUTH, raster_size=raster_size)


@dataclass
class ErrorRegistry:
    """The set of injected label errors, one entry per dropped component."""

    entries: list[RegistryEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def by_image(self) -> dict[str, list[RegistryEntry]]:
        out: dict[str, list[RegistryEntry]] = {}
        for e in self.entries:
            out.setdefault(e.image, []).append(e)
        return out

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "image": e.image,
                    "class_id": e.class_id,
                    "size": e.size,
                    "bbox": list(e.bbox),
                    "pixels_rle": [[int(a), int(b), int(c)] for a, b, c in e.pixels_rle],
                    "seed_key": e.seed_key,
                }, sort_keys=True) + "\n")

    @staticmethod
    def load_jsonl(path) -> "ErrorRegistry":
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entries.append(RegistryEntry(
                    image=obj["image"], class_id=obj["class_id"], size=obj["size"],
                    bbox=tuple(obj["bbox"]),
                    pixels_rle=np.array(obj["pixels_rle"], dtype=np.int32).reshape(-1, 3),
                    seed_key=obj["seed_key"]))
        return ErrorRegistry(entries=entries)


def _entries_from_region(region: np.ndarray, image_id: str, class_id: int,
                         seed_key: str) -> list[RegistryEntry]:
    """One registry entry per 8-connected component of a boolean region."""
    lab, n = ndimage.label(region, structure=np.ones((3, 3), dtype=bool))
    runs_by_id = _runs_by_label(lab.astype(np.int32))
    entries = []
    for cid in range(1, n + 1):
        runs = runs_by_id[cid]
        size = int((runs[:, 2] - runs[:, 1]).sum())
        bbox = (int(runs[:, 0].min()), int(runs[:, 1].min()),
                int(runs[:, 0].max()), int(runs[:, 2].max()) - 1)
        entries.append(RegistryEntry(image=image_id, class_id=class_id, size=size,
                                     bbox=bbox, pixels_rle=runs, seed_key=seed_key))
    return entries


# --------------------------------------------------------------------------
# Perturbation


def perturb_polygons(ann: PolygonAnnotation, cfg: PerturbConfig,
                     class_table: dict[str, int], image_id: str = ""
                     ) -> tuple[PolygonAnnotation, ErrorRegistry]:
    """Drop whole polygons with probability driven by their visible size.

    Visible size is the polygon's pixel count in the clean rasterization
    after occlusion by later-drawn objects; exposing what lies beneath a
    dropped polygon is left to re-rasterization of the returned annotation.
    """
    cfg.validate()
    for obj in ann.objects:
        if obj.label not in class_table:
            raise PerturbError(f"unknown class name {obj.label!r}")
    owner = _owner_raster(ann)
    keep: list[PolyObject] = []
    registry = ErrorRegistry()
    for idx, obj in enumerate(ann.objects):
        region = owner == idx
        visible = int(region.sum())
        class_id = class_table[obj.label]
        key = f"poly{idx}"
        p = drop_probability(visible, cfg) if cfg.eligible(class_id) else 0.0
        if p > 0.0 and keyed_uniform(cfg.seed, image_id, key) < p:
            seed_key = f"{cfg.seed}|{image_id}|{key}"
            registry.entries.extend(
                _entries_from_region(region, image_id, class_id, seed_key))
        else:
            keep.append(obj)
    return PolygonAnnotation(height=ann.height, width=ann.width,
                             objects=tuple(keep)), registry


def _nearest_label_fill(data: np.ndarray, fill_mask: np.ndarray) -> np.ndarray:
    """Replace fill_mask pixels by the nearest non-void source label.

    Distance ties resolve to the lower class id; pixels with no source
    anywhere stay void.
    """
    out = data.copy()
    source = (data > 0) & ~fill_mask
    classes = np.unique(data[source])
    if len(classes) == 0:
        out[fill_mask] = 0
        return out
    dist = np.empty((len(classes),) + data.shape, dtype=np.float64)
    for i, cls in enumerate(classes):
        dist[i] = ndimage.distance_transform_edt(~(source & (data == cls)))
    choice = classes[np.argmin(dist, axis=0)]
    out[fill_mask] = choice[fill_mask]
    return out


def perturb_raster(clean: SegMask, cfg: PerturbConfig,
                   background: "SegMask | None" = None, image_id: str = ""
                   ) -> tuple[SegMask, ErrorRegistry]:
    """Drop eligible connected components straight from a raster mask.

    Dropped pixels take the background mask value when one is supplied
    (the recorded empty-scene mask), else the nearest remaining label.
    """
    cfg.validate()
    clean.validate()
    if background is not None and background.shape != clean.shape:
        raise RasterError(
            f"background dimensions {background.shape} != mask {clean.shape}")
    cm = extract_components(clean)
    drop_mask = np.zeros(clean.shape, dtype=bool)
    registry = ErrorRegistry()
    for comp in cm.components:
        if not cfg.eligible(comp.class_id):
            continue
        p = drop_probability(comp.size, cfg)
        key = f"comp{comp.id}"
        if p > 0.0 and keyed_uniform(cfg.seed, image_id, key) < p:
            for r, s, e in comp.runs:
                drop_mask[r, s:e] = True
            registry.entries.append(RegistryEntry(
                image=image_id, class_id=comp.class_id, size=comp.size,
                bbox=comp.bbox, pixels_rle=comp.runs,
                seed_key=f"{cfg.seed}|{image_id}|{key}"))
    if not registry.entries:
        return SegMask(data=clean.data.copy(), classes=clean.classes), registry
    data = clean.data.astype(np.int32)
    if background is not None:
        data[drop_mask] = background.data[drop_mask]
    else:
        data = _nearest_label_fill(data, drop_mask)
    return SegMask(data=data.astype(clean.data.dtype), classes=clean.classes), registry


# --------------------------------------------------------------------------
# Annotation smoothing


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma)) if sigma > 0 else 0
    if radius == 0:
        return np.array([1.0])
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def smooth_annotation(mask: SegMask, depth: "np.ndarray | None",
                      smooth_classes: list[int], intensity: float = 10.0,
                      kernel_sigma: float = 2.0) -> SegMask:
    """Diffuse the listed classes outward, gated by depth ordering.

    Per class, in order: paint its pixels with value `intensity`, blur with
    a truncated separable Gaussian (radius 3 sigma, zero padding), and take
    every pixel whose smoothed value exceeds half the intensity as a
    candidate. A candidate is overwritten only when the depth of its
    nearest class pixel does not exceed the candidate's own depth, so
    objects diffuse over what lies behind them, never over what is in
    front.
    """
    mask.validate()
    if intensity <= 0:
        raise PerturbError(f"intensity must be > 0, got {intensity}")
    if smooth_classes and depth is None:
        raise PerturbError("depth raster required when smooth_classes is nonempty")
    if depth is not None and depth.shape != mask.shape:
        raise RasterError(f"depth dimensions {depth.shape} != mask {mask.shape}")
    data = mask.data.copy()
    kernel = _gaussian_kernel(kernel_sigma)
    for cls in smooth_classes:
        binary = (data == cls).astype(np.float64) * intensity
        if not binary.any():
            continue
        smoothed = ndimage.convolve1d(binary, kernel, axis=0, mode="constant", cval=0.0)
        smoothed = ndimage.convolve1d(smoothed, kernel, axis=1, mode="constant", cval=0.0)
        candidates = smoothed > 0.5 * intensity
        if not candidates.any():
            continue
        _, (nr, nc) = ndimage.distance_transform_edt(
            data != cls, return_indices=True)
        nearest_depth = depth[nr, nc]
        overwrite = candidates & (nearest_depth <= depth)
        data[overwrite] = cls
    return SegMask(data=data, classes=mask.classes)


def read_depth_png(path) -> np.ndarray:
    """16-bit grayscale depth raster as raw integer values."""
    from PIL import Image
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2:
        raise RasterError(f"depth PNG must be single-channel, got shape {arr.shape}")
    return arr.astype(np.float64)


def write_depth_png(depth: np.ndarray, path) -> None:
    from PIL import Image
    Image.fromarray(np.round(depth).astype(np.uint16)).save(path, format="PNG")
