"""End-to-end command behavior: perturb, pipeline, export."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from segaudit.detect import load_candidates
from segaudit.manifest import Manifest, ManifestError, Record, SEARCH, TRAIN_META
from segaudit.metaseg import MetaError, MetaModel
from segaudit.perturb import ErrorRegistry, PerturbConfig, drop_probability
from segaudit.pipeline import (
    ClassGroup,
    PipelineConfig,
    PipelineError,
    cmd_perturb,
    cmd_pipeline,
    cmd_topn_export,
)
from segaudit.raster import (
    GROUND_TRUTH,
    ProbMap,
    SegMask,
    extract_components,
    read_mask_png,
    write_mask_png,
    write_probmap,
)
from segaudit.synth import SynthConfig, build_synthetic


def write_tiny_dataset(tmp_path, train_extra_blob=True, search_extra_blob=False):
    """Four 16x16 two-class scenes with optional spurious prediction blobs."""
    records = []
    for i in range(4):
        gt = np.ones((16, 16), dtype=np.uint8)
        gt[4:8, 4:8] = 2
        pred = gt.copy()
        split = TRAIN_META if i < 2 else SEARCH
        if split == TRAIN_META and train_extra_blob:
            pred[10:13, 10:13] = 2
        if split == SEARCH and search_extra_blob:
            pred[10:14, 10:14] = 2
        probs = np.full((16, 16, 2), 0.1, dtype=np.float32)
        rows, cols = np.mgrid[0:16, 0:16]
        probs[rows, cols, pred - 1] = 0.9
        image_id = f"im{i}"
        write_mask_png(SegMask(data=gt, classes=2), tmp_path / f"{image_id}_gt.png")
        write_probmap(ProbMap(data=probs), tmp_path / f"{image_id}_probs.bin")
        records.append(Record(image_id=image_id, gt_mask=f"{image_id}_gt.png",
                              probmap=f"{image_id}_probs.bin", split=split))
    manifest = Manifest(dataset="tiny", classes={"bg": 1, "obj": 2},
                        records=tuple(records))
    path = tmp_path / "manifest.json"
    manifest.save(path)
    return path


def tree_hash(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


# --------------------------------------------------------------------------
# cmd_perturb


def test_perturb_p_zero_copies_masks(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path)
    out = cmd_perturb(manifest_path, PerturbConfig(p_hat=0.0, seed=1),
                      tmp_path / "bench")
    registry = ErrorRegistry.load_jsonl(tmp_path / "bench" / "registry.jsonl")
    assert len(registry) == 0
    for i in range(4):
        a = (tmp_path / f"im{i}_gt.png").read_bytes()
        b = (tmp_path / "bench" / f"im{i}_gt.png").read_bytes()
        assert a == b
    perturbed = Manifest.load(out)
    assert perturbed.records[0].clean_mask == str(tmp_path / "im0_gt.png")


def test_perturb_rerun_byte_identical(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=4, seed=11))
    cfg = PerturbConfig(p_hat=0.8, seed=2,
                        eligible_classes=frozenset({3, 4, 5}))
    cmd_perturb(manifest_path, cfg, tmp_path / "bench")
    first = tree_hash(tmp_path / "bench")
    cmd_perturb(manifest_path, cfg, tmp_path / "bench")
    assert tree_hash(tmp_path / "bench") == first
    assert len(first) == 4 + 2  # four masks, registry, manifest


def test_perturb_relative_manifest_path_yields_loadable_output(tmp_path, monkeypatch):
    # Upstream references must come out absolute even when the input
    # manifest is given relative to the invoking directory.
    write_tiny_dataset(tmp_path)
    monkeypatch.chdir(tmp_path)
    out = cmd_perturb(Path("manifest.json"), PerturbConfig(p_hat=0.0, seed=1),
                      Path("bench")).resolve()
    monkeypatch.chdir(tmp_path / "bench")
    perturbed = Manifest.load(out)
    for record in perturbed.records:
        assert Path(record.probmap).is_absolute()
        assert Path(record.clean_mask).is_absolute()


def test_perturb_registry_count_within_3_sigma(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=20, seed=3))
    cfg = PerturbConfig(p_hat=0.7, seed=5,
                        eligible_classes=frozenset({3, 4, 5}))
    manifest = Manifest.load(manifest_path)
    mean = 0.0
    var = 0.0
    for record in manifest.records:
        mask = read_mask_png(tmp_path / "clean" / record.gt_mask, classes=5)
        for comp in extract_components(mask, origin=GROUND_TRUTH).components:
            if comp.class_id in (3, 4, 5):
                p = drop_probability(comp.size, cfg)
                mean += p
                var += p * (1.0 - p)
    cmd_perturb(manifest_path, cfg, tmp_path / "bench")
    registry = ErrorRegistry.load_jsonl(tmp_path / "bench" / "registry.jsonl")
    assert abs(len(registry) - mean) <= 3.0 * np.sqrt(var)
    assert len(registry) > 0


def test_perturb_cleanup_on_failure(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path)
    (tmp_path / "im2_gt.png").write_bytes(b"not a png")
    with pytest.raises(Exception):
        cmd_perturb(manifest_path, PerturbConfig(p_hat=0.0, seed=1),
                    tmp_path / "bench")
    assert list((tmp_path / "bench").iterdir()) == []


def test_perturb_polygon_records(tmp_path):
    ann = {
        "imgHeight": 32,
        "imgWidth": 32,
        "objects": [{"label": "obj",
                     "polygon": [[4.0, 4.0], [20.0, 4.0], [20.0, 20.0],
                                 [4.0, 20.0]]}],
    }
    (tmp_path / "im0_polygons.json").write_text(json.dumps(ann))
    manifest = Manifest(dataset="poly", classes={"bg": 1, "obj": 2},
                        records=(Record(image_id="im0",
                                        polygons="im0_polygons.json"),))
    manifest_path = tmp_path / "manifest.json"
    manifest.save(manifest_path)
    cfg = PerturbConfig(p_hat=1.0, size_min=1, size_max=10000,
                        eligible_classes=frozenset({2}), seed=0)
    out = cmd_perturb(manifest_path, cfg, tmp_path / "bench")
    registry = ErrorRegistry.load_jsonl(tmp_path / "bench" / "registry.jsonl")
    assert len(registry) == 1
    assert registry.entries[0].class_id == 2
    perturbed_ann = json.loads(
        (tmp_path / "bench" / "im0_polygons.json").read_text())
    assert perturbed_ann["objects"] == []
    mask = read_mask_png(tmp_path / "bench" / "im0_gt.png", classes=2)
    assert not mask.data.any()
    loaded = Manifest.load(out)
    assert loaded.records[0].polygons == "im0_polygons.json"


# --------------------------------------------------------------------------
# cmd_pipeline


def test_pipeline_perfect_search_split_zero_candidates(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path, train_extra_blob=True,
                                       search_extra_blob=False)
    empty_registry = tmp_path / "registry.jsonl"
    ErrorRegistry().save_jsonl(empty_registry)
    report = cmd_pipeline(manifest_path,
                          PipelineConfig(split_mode="manifest", epochs=50,
                                         registry=str(empty_registry)),
                          tmp_path / "run")
    assert report["n_candidates"] == 0
    assert report["method"]["tp"] == 0
    assert report["method"]["fp"] == 0
    assert report["method"]["fn"] == 0
    assert report["method"]["precision"] == 0.0
    assert report["method"]["ap"] == 0.0
    assert (tmp_path / "run" / "candidates.jsonl").read_text() == ""


def test_pipeline_single_class_training_fails(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path, train_extra_blob=False)
    with pytest.raises(MetaError):
        cmd_pipeline(manifest_path,
                     PipelineConfig(split_mode="manifest", epochs=50),
                     tmp_path / "run")


def test_pipeline_requires_split_in_manifest_mode(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path)
    manifest = Manifest.load(manifest_path)
    from dataclasses import replace
    stripped = Manifest(dataset=manifest.dataset, classes=manifest.classes,
                        records=tuple(replace(r, split=None)
                                      for r in manifest.records))
    stripped_path = tmp_path / "nosplit.json"
    stripped.save(stripped_path)
    with pytest.raises(ManifestError):
        cmd_pipeline(stripped_path, PipelineConfig(split_mode="manifest"),
                     tmp_path / "run")


def test_pipeline_unknown_split_mode(tmp_path):
    manifest_path = write_tiny_dataset(tmp_path)
    with pytest.raises(PipelineError):
        cmd_pipeline(manifest_path, PipelineConfig(split_mode="thirds"),
                     tmp_path / "run")


def test_pipeline_kfold_searches_every_image_once(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=6, seed=11))
    cmd_perturb(manifest_path,
                PerturbConfig(p_hat=0.8, seed=2,
                              eligible_classes=frozenset({3, 4, 5})),
                tmp_path / "bench")
    report = cmd_pipeline(tmp_path / "bench" / "manifest.json",
                          PipelineConfig(split_mode="kfold:3", epochs=100),
                          tmp_path / "run")
    assert report["searched_images"] == [f"scene{i:03d}" for i in range(6)]


def test_pipeline_report_artifacts(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=6, seed=11))
    cmd_perturb(manifest_path,
                PerturbConfig(p_hat=0.8, seed=2,
                              eligible_classes=frozenset({3, 4, 5})),
                tmp_path / "bench")
    config = PipelineConfig(split_mode="kfold:2", epochs=150,
                            registry=str(tmp_path / "bench" / "registry.jsonl"))
    report = cmd_pipeline(tmp_path / "bench" / "manifest.json", config,
                          tmp_path / "run")
    on_disk = json.loads((tmp_path / "run" / "report.json").read_text())
    assert on_disk == report
    assert report["config"] == config.to_dict()  # defaults echoed
    assert report["registry_entries"] == report["registry_entries_total"]
    model = MetaModel.from_json((tmp_path / "run" / "model.json").read_text())
    assert len(model.weights) == 17
    candidates = load_candidates(tmp_path / "run" / "candidates.jsonl")
    assert candidates
    scores = [c.score for c in candidates]
    assert scores == sorted(scores, reverse=True)
    assert "method@t*" in report["table"]
    assert 0.0 <= report["miou"] <= 1.0


def test_pipeline_rerun_byte_identical(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=4, seed=11))
    cmd_perturb(manifest_path,
                PerturbConfig(p_hat=0.8, seed=2,
                              eligible_classes=frozenset({3, 4, 5})),
                tmp_path / "bench")
    config = PipelineConfig(split_mode="kfold:2", epochs=100,
                            registry=str(tmp_path / "bench" / "registry.jsonl"))
    cmd_pipeline(tmp_path / "bench" / "manifest.json", config, tmp_path / "run")
    first = tree_hash(tmp_path / "run")
    cmd_pipeline(tmp_path / "bench" / "manifest.json", config, tmp_path / "run")
    assert tree_hash(tmp_path / "run") == first


# --------------------------------------------------------------------------
# cmd_topn_export


def run_small_pipeline(tmp_path):
    manifest_path = build_synthetic(tmp_path / "clean",
                                    SynthConfig(n_scenes=6, seed=11))
    perturbed = cmd_perturb(
        manifest_path,
        PerturbConfig(p_hat=0.8, seed=2, eligible_classes=frozenset({3, 4, 5})),
        tmp_path / "bench")
    cmd_pipeline(perturbed, PipelineConfig(split_mode="kfold:2", epochs=100),
                 tmp_path / "run")
    return tmp_path / "run" / "candidates.jsonl", perturbed


def test_export_top_one(tmp_path):
    candidates_path, manifest_path = run_small_pipeline(tmp_path)
    all_candidates = load_candidates(candidates_path)
    cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle", n=1)
    exported = load_candidates(tmp_path / "bundle" / "candidates.jsonl")
    assert len(exported) == 1
    assert exported[0].score == all_candidates[0].score
    assert exported[0].image == all_candidates[0].image
    crop = (tmp_path / "bundle" / "crops"
            / f"{exported[0].image}_{exported[0].component.id}.png")
    assert crop.is_file()
    assert crop.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_export_group_quotas(tmp_path):
    candidates_path, manifest_path = run_small_pipeline(tmp_path)
    pool = load_candidates(candidates_path)
    groups = [ClassGroup("a", frozenset({3, 4}), 3),
              ClassGroup("b", frozenset({5}), 1)]
    cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle",
                    n=4, groups=groups)
    exported = load_candidates(tmp_path / "bundle" / "candidates.jsonl")
    assert len(exported) == 4
    assert sum(1 for c in exported if c.class_id in (3, 4)) == 3
    assert sum(1 for c in exported if c.class_id == 5) == 1
    # each group keeps its own top scorers
    best_a = [c.score for c in pool if c.class_id in (3, 4)][:3]
    assert sorted((c.score for c in exported if c.class_id in (3, 4)),
                  reverse=True) == best_a


def test_export_quota_mismatch_rejected(tmp_path):
    candidates_path, manifest_path = run_small_pipeline(tmp_path)
    with pytest.raises(PipelineError):
        cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle",
                        n=5, groups=[ClassGroup("a", frozenset({3}), 3)])


def test_export_warns_when_short(tmp_path):
    candidates_path, manifest_path = run_small_pipeline(tmp_path)
    available = len(load_candidates(candidates_path))
    with pytest.warns(UserWarning):
        cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle",
                        n=available + 50)
    exported = load_candidates(tmp_path / "bundle" / "candidates.jsonl")
    assert len(exported) == available


def test_export_bundle_reload_order_stable(tmp_path):
    candidates_path, manifest_path = run_small_pipeline(tmp_path)
    cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle", n=5)
    first = (tmp_path / "bundle" / "candidates.jsonl").read_text()
    cmd_topn_export(candidates_path, manifest_path, tmp_path / "bundle", n=5)
    assert (tmp_path / "bundle" / "candidates.jsonl").read_text() == first
    keys = [(c.image, c.component.id)
            for c in load_candidates(tmp_path / "bundle" / "candidates.jsonl")]
    assert len(set(keys)) == 5
