"""Synthetic scene invariants the end-to-end benchmark relies on."""

import numpy as np

from segaudit.manifest import Manifest, SEARCH, TRAIN_META
from segaudit.matching import pi
from segaudit.raster import (
    GROUND_TRUTH,
    PREDICTION,
    argmax_mask,
    extract_components,
    read_mask_png,
    read_probmap,
)
from segaudit.synth import CLASS_TABLE, OBJECT_CLASSES, SynthConfig, build_scene, build_synthetic

CFG = SynthConfig(seed=7)


def test_scene_deterministic():
    gt_a, probs_a = build_scene(CFG, 3)
    gt_b, probs_b = build_scene(CFG, 3)
    assert np.array_equal(gt_a.data, gt_b.data)
    assert np.array_equal(probs_a.data, probs_b.data)


def test_object_sizes_avoid_dead_zone():
    # foreground components are either clearly small or inside the default
    # drop band; nothing lands between 250 and 500 pixels or above 9000
    for idx in range(6):
        gt, _ = build_scene(CFG, idx)
        cm = extract_components(gt, origin=GROUND_TRUTH)
        for comp in cm.components:
            if comp.class_id in OBJECT_CLASSES:
                assert 60 <= comp.size <= 250 or 500 <= comp.size <= 9000
            else:
                assert comp.size > 10000


def test_backgrounds_are_two_bands():
    gt, _ = build_scene(CFG, 0)
    cm = extract_components(gt, origin=GROUND_TRUTH)
    background = [c for c in cm.components if c.class_id in (1, 2)]
    assert len(background) == 2
    assert {c.class_id for c in background} == {1, 2}


def test_prediction_components_match_or_miss_cleanly():
    # every foreground prediction component either overlaps its object
    # heavily (jittered copy) or not at all (hallucination); the margin
    # rule leaves no middle ground
    halluc_seen = 0
    for idx in range(6):
        gt, probs = build_scene(CFG, idx)
        pred = argmax_mask(probs)
        gt_cm = extract_components(gt, origin=GROUND_TRUTH)
        pred_cm = extract_components(pred, origin=PREDICTION)
        for comp in pred_cm.components:
            if comp.class_id not in OBJECT_CLASSES:
                continue
            cover = pi(comp, gt_cm)
            assert cover == 0.0 or cover > 0.5
            if cover == 0.0:
                halluc_seen += 1
    assert halluc_seen >= 6  # hallucinations occur regularly


def test_hallucinations_low_confidence():
    gt, probs = build_scene(CFG, 1)
    pred = argmax_mask(probs)
    gt_cm = extract_components(gt, origin=GROUND_TRUTH)
    pred_cm = extract_components(pred, origin=PREDICTION)
    peak = probs.data.max(axis=2)
    for comp in pred_cm.components:
        if comp.class_id not in OBJECT_CLASSES:
            continue
        rows, cols = comp.pixel_coords()
        mean_peak = float(peak[rows, cols].mean())
        if pi(comp, gt_cm) == 0.0:
            assert mean_peak < 0.65
        else:
            assert mean_peak > 0.85


def test_build_synthetic_manifest(tmp_path):
    path = build_synthetic(tmp_path, SynthConfig(n_scenes=4, seed=7))
    manifest = Manifest.load(path)
    assert manifest.classes == CLASS_TABLE
    assert len(manifest.records) == 4
    assert [r.split for r in manifest.records] == [TRAIN_META, SEARCH] * 2
    r = manifest.records[0]
    mask = read_mask_png(tmp_path / r.gt_mask, classes=5)
    probs = read_probmap(tmp_path / r.probmap)
    assert probs.shape == mask.shape
    gt_direct, probs_direct = build_scene(SynthConfig(n_scenes=4, seed=7), 0)
    assert np.array_equal(mask.data, gt_direct.data)
    assert np.array_equal(probs.data, probs_direct.data)
