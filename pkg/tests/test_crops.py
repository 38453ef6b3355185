"""Crop rendering: geometry, highlight, determinism."""

import io

import numpy as np
from PIL import Image

from segaudit.crops import (
    HIGHLIGHT,
    PALETTE,
    SEPARATOR_WIDTH,
    class_color,
    colorize_mask,
    render_crop,
)
from segaudit.detect import Candidate, _crop_bbox
from segaudit.raster import PREDICTION, SegMask, component_from_mask


def make_candidate(comp_mask, class_id=2, padding=4, score=0.9):
    comp = component_from_mask(comp_mask, class_id, component_id=1,
                               origin=PREDICTION)
    return Candidate(image="im0", component=comp, class_id=class_id,
                     size=comp.size, score=score,
                     crop_bbox=_crop_bbox(comp, padding=padding))


def decode(png_bytes):
    return np.asarray(Image.open(io.BytesIO(png_bytes)).convert("RGB"))


def test_palette_lookup_wraps():
    assert class_color(1) == PALETTE[1]
    assert class_color(len(PALETTE) + 3) == PALETTE[3]


def test_colorize_mask_maps_ids():
    mask = np.array([[0, 1], [2, 1]])
    out = colorize_mask(mask)
    assert out.shape == (2, 2, 3)
    assert tuple(out[0, 0]) == PALETTE[0]
    assert tuple(out[0, 1]) == PALETTE[1]
    assert tuple(out[1, 0]) == PALETTE[2]


def test_interior_bbox_dimensions():
    comp_mask = np.zeros((40, 40), dtype=bool)
    comp_mask[15:20, 12:18] = True
    cand = make_candidate(comp_mask, padding=4)
    gt = SegMask(data=np.zeros((40, 40), dtype=np.uint8), classes=3)
    arr = decode(render_crop(cand, gt, upscale=2))
    r0, c0, r1, c1 = cand.crop_bbox
    h, w = r1 - r0 + 1, c1 - c0 + 1
    assert arr.shape == (h * 2, (2 * w + SEPARATOR_WIDTH) * 2, 3)


def test_corner_bbox_clamped():
    comp_mask = np.zeros((20, 20), dtype=bool)
    comp_mask[0:3, 0:3] = True
    cand = make_candidate(comp_mask, padding=8)
    assert cand.crop_bbox == (0, 0, 10, 10)
    gt = SegMask(data=np.zeros((20, 20), dtype=np.uint8), classes=3)
    arr = decode(render_crop(cand, gt, upscale=1))
    assert arr.shape == (11, 2 * 11 + SEPARATOR_WIDTH, 3)


def test_component_edge_highlighted():
    comp_mask = np.zeros((30, 30), dtype=bool)
    comp_mask[10:16, 10:16] = True
    cand = make_candidate(comp_mask, padding=2)
    gt = SegMask(data=np.zeros((30, 30), dtype=np.uint8), classes=3)
    arr = decode(render_crop(cand, gt, upscale=1))
    r0, c0 = cand.crop_bbox[:2]
    # top-left corner pixel of the component sits on the highlight ring
    assert tuple(arr[10 - r0, 10 - c0]) == HIGHLIGHT
    # interior pixel blends toward the class color instead
    assert tuple(arr[12 - r0, 12 - c0]) != HIGHLIGHT


def test_separator_column_white():
    comp_mask = np.zeros((20, 20), dtype=bool)
    comp_mask[8:12, 8:12] = True
    cand = make_candidate(comp_mask, padding=2)
    gt = SegMask(data=np.zeros((20, 20), dtype=np.uint8), classes=3)
    arr = decode(render_crop(cand, gt, upscale=1))
    w = cand.crop_bbox[3] - cand.crop_bbox[1] + 1
    assert np.all(arr[:, w:w + SEPARATOR_WIDTH] == 255)


def test_rgb_base_used_when_given():
    comp_mask = np.zeros((16, 16), dtype=bool)
    comp_mask[6:10, 6:10] = True
    cand = make_candidate(comp_mask, padding=1)
    gt = SegMask(data=np.zeros((16, 16), dtype=np.uint8), classes=3)
    rgb = np.full((16, 16, 3), 200, dtype=np.uint8)
    with_rgb = render_crop(cand, gt, rgb=rgb, upscale=1)
    without = render_crop(cand, gt, upscale=1)
    assert with_rgb != without
    arr = decode(with_rgb)
    # a pixel outside the component on the left pane shows the RGB base
    assert tuple(arr[0, 0]) == (200, 200, 200)


def test_byte_identical_rerender():
    comp_mask = np.zeros((25, 25), dtype=bool)
    comp_mask[5:12, 4:15] = True
    cand = make_candidate(comp_mask, padding=3)
    gt_data = np.zeros((25, 25), dtype=np.uint8)
    gt_data[0:10, 0:10] = 1
    gt = SegMask(data=gt_data, classes=3)
    assert render_crop(cand, gt) == render_crop(cand, gt)


def test_runs_clipped_to_crop():
    # component wider than the crop window must not wrap or overflow
    comp_mask = np.zeros((10, 40), dtype=bool)
    comp_mask[4, 0:40] = True
    comp = component_from_mask(comp_mask, 1, origin=PREDICTION)
    cand = Candidate(image="im0", component=comp, class_id=1, size=comp.size,
                     score=0.5, crop_bbox=(2, 10, 6, 20))
    gt = SegMask(data=np.zeros((10, 40), dtype=np.uint8), classes=3)
    arr = decode(render_crop(cand, gt, upscale=1))
    assert arr.shape == (5, 2 * 11 + SEPARATOR_WIDTH, 3)
