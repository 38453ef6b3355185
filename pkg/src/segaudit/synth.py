"""Synthetic segmentation scenes with a controllable imperfect predictor.

Each scene is a two-band background with isolated foreground objects. The
fake predictor reproduces the ground truth up to small boundary jitter and
adds a few low-confidence hallucinated components, so prediction components
fall into three behaviors: confident matches, confident components over
regions a perturbation later deletes, and shaky hallucinations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .manifest import Manifest, Record, SEARCH, TRAIN_META
from .raster import EIGHT_CONN, ProbMap, SegMask, write_mask_png, write_probmap

CLASS_TABLE = {"sky": 1, "ground": 2, "crate": 3, "disc": 4, "slab": 5}
OBJECT_CLASSES = (3, 4, 5)


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 200
    height: int = 256
    width: int = 256
    seed: int = 7
    margin: int = 12  # min pixel gap between shapes and to the border
    object_area: tuple = (500, 9000)  # keeps objects inside the default drop band
    small_area: tuple = (60, 250)
    halluc_area: tuple = (300, 2500)


def _rect_mask(rng, lo: int, hi: int) -> np.ndarray:
    while True:
        h = int(rng.integers(8, 80))
        w = int(rng.integers(8, 80))
        if lo <= h * w <= hi:
            return np.ones((h, w), dtype=bool)


def _small_rect_mask(rng, lo: int, hi: int) -> np.ndarray:
    while True:
        h = int(rng.integers(5, 17))
        w = int(rng.integers(5, 17))
        if lo <= h * w <= hi:
            return np.ones((h, w), dtype=bool)


def _ellipse_mask(rng, lo: int, hi: int) -> np.ndarray:
    while True:
        ry = int(rng.integers(7, 38))
        rx = int(rng.integers(7, 38))
        rr, cc = np.mgrid[-ry:ry + 1, -rx:rx + 1]
        m = (rr / ry) ** 2 + (cc / rx) ** 2 <= 1.0
        if lo <= int(m.sum()) <= hi:
            return m


def _place(rng, occupied: np.ndarray, shape_mask: np.ndarray,
           margin: int) -> "tuple[int, int] | None":
    """Top-left anchor keeping the shape margin pixels from everything."""
    height, width = occupied.shape
    h, w = shape_mask.shape
    if height - h - 2 * margin <= 0 or width - w - 2 * margin <= 0:
        return None
    for _ in range(200):
        r0 = int(rng.integers(margin, height - h - margin + 1))
        c0 = int(rng.integers(margin, width - w - margin + 1))
        window = occupied[r0 - margin:r0 + h + margin,
                          c0 - margin:c0 + w + margin]
        if not window.any():
            occupied[r0:r0 + h, c0:c0 + w] |= shape_mask
            return r0, c0
    return None


@dataclass(frozen=True)
class _Shape:
    mask: np.ndarray
    anchor: tuple
    class_id: int
    peak: float  # softmax confidence painted over the shape


def _paint(canvas: np.ndarray, shape: _Shape, mask=None, anchor=None) -> None:
    m = shape.mask if mask is None else mask
    r0, c0 = shape.anchor if anchor is None else anchor
    h, w = m.shape
    region = canvas[r0:r0 + h, c0:c0 + w]
    region[m] = shape.class_id


def _corrupt(rng, shape: _Shape) -> tuple:
    """Jittered copy of the shape: grown, shrunk, or shifted by one pixel."""
    mode = int(rng.integers(0, 4))
    padded = np.pad(shape.mask, 2)
    r0, c0 = shape.anchor
    anchor = (r0 - 2, c0 - 2)
    if mode == 1:
        padded = ndimage.binary_dilation(padded, structure=EIGHT_CONN)
    elif mode == 2:
        eroded = ndimage.binary_erosion(padded, structure=EIGHT_CONN,
                                        border_value=0)
        if eroded.any():
            padded = eroded
    elif mode == 3:
        dr, dc = (int(v) for v in rng.integers(-1, 2, size=2))
        padded = np.roll(np.roll(padded, dr, axis=0), dc, axis=1)
    return padded, anchor


def build_scene(cfg: SynthConfig, scene_idx: int) -> tuple:
    """One scene: (clean ground truth SegMask, predictor ProbMap)."""
    rng = np.random.default_rng([cfg.seed, scene_idx])
    height, width = cfg.height, cfg.width
    horizon = int(rng.integers(height * 2 // 5, height * 3 // 5))
    background = np.full((height, width), 2, dtype=np.int32)
    background[:horizon, :] = 1

    occupied = np.zeros((height, width), dtype=bool)
    objects: list[_Shape] = []
    hallucinations: list[_Shape] = []

    lo, hi = cfg.object_area
    for _ in range(int(rng.integers(3, 6))):
        mask = _rect_mask(rng, lo, hi) if rng.integers(0, 2) == 0 \
            else _ellipse_mask(rng, lo, hi)
        anchor = _place(rng, occupied, mask, cfg.margin)
        if anchor is not None:
            objects.append(_Shape(mask, anchor,
                                  int(rng.choice(OBJECT_CLASSES)),
                                  float(rng.uniform(0.90, 0.97))))
    lo, hi = cfg.small_area
    for _ in range(int(rng.integers(1, 3))):
        mask = _small_rect_mask(rng, lo, hi)
        anchor = _place(rng, occupied, mask, cfg.margin)
        if anchor is not None:
            objects.append(_Shape(mask, anchor,
                                  int(rng.choice(OBJECT_CLASSES)),
                                  float(rng.uniform(0.90, 0.97))))
    lo, hi = cfg.halluc_area
    for _ in range(int(rng.integers(1, 4))):
        mask = _rect_mask(rng, lo, hi) if rng.integers(0, 2) == 0 \
            else _ellipse_mask(rng, lo, hi)
        anchor = _place(rng, occupied, mask, cfg.margin)
        if anchor is not None:
            hallucinations.append(_Shape(mask, anchor,
                                         int(rng.choice(OBJECT_CLASSES)),
                                         float(rng.uniform(0.50, 0.62))))

    gt = background.copy()
    for shape in objects:
        _paint(gt, shape)

    pred = background.copy()
    peak = np.full((height, width), 0.95, dtype=np.float64)
    for shape in objects:
        mask, anchor = _corrupt(rng, shape)
        _paint(pred, shape, mask=mask, anchor=anchor)
        r0, c0 = anchor
        peak[r0:r0 + mask.shape[0], c0:c0 + mask.shape[1]][mask] = shape.peak
    for shape in hallucinations:
        _paint(pred, shape)
        r0, c0 = shape.anchor
        peak[r0:r0 + shape.mask.shape[0], c0:c0 + shape.mask.shape[1]][shape.mask] \
            = shape.peak

    n_classes = len(CLASS_TABLE)
    probs = np.empty((height, width, n_classes), dtype=np.float32)
    probs[:] = ((1.0 - peak) / (n_classes - 1))[:, :, None].astype(np.float32)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    probs[rows, cols, pred - 1] = peak.astype(np.float32)

    gt_mask = SegMask(data=gt.astype(np.uint8), classes=n_classes)
    return gt_mask, ProbMap(data=probs)


def build_synthetic(out_dir, cfg: SynthConfig = SynthConfig()) -> Path:
    """Materialize the dataset and return the manifest path.

    Scenes alternate between the train-meta and search splits so every
    split mode has material to work with.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(cfg.n_scenes):
        gt_mask, probs = build_scene(cfg, i)
        image_id = f"scene{i:03d}"
        write_mask_png(gt_mask, out_dir / f"{image_id}_gt.png")
        write_probmap(probs, out_dir / f"{image_id}_probs.bin")
        records.append(Record(
            image_id=image_id,
            gt_mask=f"{image_id}_gt.png",
            probmap=f"{image_id}_probs.bin",
            split=TRAIN_META if i % 2 == 0 else SEARCH))
    manifest = Manifest(dataset="synthetic", classes=dict(CLASS_TABLE),
                        records=tuple(records))
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="Generate the synthetic benchmark scenes.")
    parser.add_argument("--out", required=True)
    parser.add_argument("--scenes", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    path = build_synthetic(args.out, SynthConfig(n_scenes=args.scenes,
                                                 seed=args.seed))
    print(json.dumps({"manifest": str(path)}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
