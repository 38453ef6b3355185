"""Review-crop rendering: side-by-side prediction/ground-truth overlays."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .detect import Candidate
from .raster import SegMask

# Fixed class palette; class id indexes it modulo the length. Index 0 (void)
# stays dark gray so unlabeled regions remain visibly distinct.
PALETTE: tuple[tuple[int, int, int], ...] = (
    (60, 60, 60),
    (128, 64, 128), (244, 35, 232), (70, 70, 70), (102, 102, 156),
    (190, 153, 153), (153, 153, 153), (250, 170, 30), (220, 220, 0),
    (107, 142, 35), (152, 251, 152), (70, 130, 180), (220, 20, 60),
    (255, 0, 0), (0, 0, 142), (0, 0, 70), (0, 60, 100), (0, 80, 100),
    (0, 0, 230), (119, 11, 32), (255, 127, 80), (46, 139, 87),
    (186, 85, 211), (255, 215, 0), (0, 191, 255), (205, 92, 92),
    (143, 188, 143), (72, 61, 139), (210, 105, 30), (176, 196, 222),
    (154, 205, 50), (233, 150, 122),
)

HIGHLIGHT = (255, 64, 64)
SEPARATOR_WIDTH = 2


def class_color(class_id: int) -> tuple[int, int, int]:
    return PALETTE[class_id % len(PALETTE)]


def colorize_mask(mask: np.ndarray) -> np.ndarray:
    """(h, w) class indices to (h, w, 3) uint8 palette colors."""
    lut = np.array([class_color(c) for c in range(int(mask.max()) + 1)],
                   dtype=np.uint8)
    return lut[mask]


def render_crop(candidate: Candidate, gt_mask: SegMask,
                rgb: "np.ndarray | None" = None, upscale: int = 2) -> bytes:
    """PNG bytes of the padded candidate crop, prediction | ground truth.

    The left pane shows the candidate component highlighted over the base
    image (RGB when available, otherwise a flat gray canvas); the right
    pane shows the ground-truth classes in palette colors over the same
    base.
    """
    r0, c0, r1, c1 = candidate.crop_bbox
    h = r1 - r0 + 1
    w = c1 - c0 + 1
    if rgb is not None:
        if rgb.shape[:2] != gt_mask.shape:
            raise ValueError(f"rgb dimensions {rgb.shape[:2]} != mask {gt_mask.shape}")
        base = rgb[r0:r1 + 1, c0:c1 + 1].astype(np.float64)
        if base.ndim == 2:
            base = np.stack([base] * 3, axis=2)
    else:
        base = np.full((h, w, 3), 96.0)

    comp_mask = np.zeros((h, w), dtype=bool)
    for row, s, e in candidate.component.runs:
        if r0 <= row <= r1:
            s2, e2 = max(s, c0), min(e, c1 + 1)
            if s2 < e2:
                comp_mask[row - r0, s2 - c0:e2 - c0] = True

    left = base.copy()
    color = np.array(class_color(candidate.class_id), dtype=np.float64)
    left[comp_mask] = 0.35 * left[comp_mask] + 0.65 * color
    edge = comp_mask & ~_erode(comp_mask)
    left[edge] = HIGHLIGHT

    gt_crop = gt_mask.data[r0:r1 + 1, c0:c1 + 1]
    gt_color = colorize_mask(np.asarray(gt_crop)).astype(np.float64)
    right = 0.4 * base + 0.6 * gt_color

    sep = np.zeros((h, SEPARATOR_WIDTH, 3))
    sep[:, :] = (255, 255, 255)
    panel = np.concatenate([left, sep, right], axis=1)
    img = Image.fromarray(np.clip(panel, 0, 255).astype(np.uint8))
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale),
                         resample=Image.NEAREST)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def _erode(mask: np.ndarray) -> np.ndarray:
    """8-neighborhood erosion with outside-of-raster treated as background."""
    padded = np.pad(mask, 1)
    out = padded[1:-1, 1:-1].copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out &= padded[1 + dr:padded.shape[0] - 1 + dr,
                          1 + dc:padded.shape[1] - 1 + dc]
    return out
