"""End-to-end commands: benchmark construction, detection pipeline, export."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .detect import (
    Candidate,
    baseline1,
    baseline2,
    propose,
    save_candidates,
    sort_candidates,
)
from .evaluate import (
    average_precision,
    best_f1_threshold,
    evaluate_detection,
    evaluate_region_review,
    format_report,
    per_class_report,
)
from .manifest import (
    Manifest,
    ManifestError,
    Record,
    SEARCH,
    SPLITS,
    TRAIN_META,
    assign_halves,
    kfold_rounds,
)
from .matching import assign
from .metaseg import MetaModel, TrainConfig, build_dataset, train_meta
from .perturb import (
    ErrorRegistry,
    PerturbConfig,
    PolygonAnnotation,
    perturb_polygons,
    perturb_raster,
    rasterize,
)
from .raster import (
    GROUND_TRUTH,
    PREDICTION,
    ProbMap,
    SegMask,
    argmax_mask,
    extract_components,
    read_mask_png,
    read_probmap,
    write_mask_png,
)


class PipelineError(RuntimeError):
    """Pipeline-level input or state failure."""


def _load_gt_mask(manifest: Manifest, record: Record, base_dir: Path) -> SegMask:
    if record.gt_mask is not None:
        return read_mask_png(Manifest.resolve(record.gt_mask, base_dir),
                             classes=manifest.n_classes)
    ann = PolygonAnnotation.from_json(
        Manifest.resolve(record.polygons, base_dir).read_text())
    return rasterize(ann, manifest.classes)


def _abs(rel: "str | None", base_dir: Path) -> "str | None":
    return str(Manifest.resolve(rel, base_dir)) if rel is not None else None


# --------------------------------------------------------------------------
# cmd_perturb


def cmd_perturb(manifest_path, cfg: PerturbConfig, out_dir) -> Path:
    """Materialize a perturbed copy of the dataset plus its error registry.

    Writes perturbed masks (and annotations in polygon mode), a global
    registry JSONL, and a manifest pointing at the new ground truth.
    Outputs are byte-identical across reruns with the same seed; on
    failure every file written so far is removed.
    """
    cfg.validate()
    # The new manifest persists upstream references; resolve() keeps them
    # valid even when the input manifest was given relative to the cwd.
    manifest_path = Path(manifest_path).resolve()
    manifest = Manifest.load(manifest_path)
    base_dir = manifest_path.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    registry = ErrorRegistry()
    try:
        new_records = []
        for record in manifest.records:
            # Files written into out_dir are referenced by bare filename so
            # the bundle stays relocatable; upstream inputs go absolute.
            if record.polygons is not None:
                ann = PolygonAnnotation.from_json(
                    Manifest.resolve(record.polygons, base_dir).read_text())
                pert_ann, reg = perturb_polygons(ann, cfg, manifest.classes,
                                                 image_id=record.image_id)
                ann_path = out_dir / f"{record.image_id}_polygons.json"
                ann_path.write_text(pert_ann.to_json() + "\n")
                written.append(ann_path)
                mask = rasterize(pert_ann, manifest.classes)
                mask_path = out_dir / f"{record.image_id}_gt.png"
                write_mask_png(mask, mask_path)
                written.append(mask_path)
                clean = _abs(record.gt_mask, base_dir) or _abs(record.clean_mask,
                                                               base_dir)
                new_records.append(replace(
                    record, polygons=ann_path.name, gt_mask=mask_path.name,
                    clean_mask=clean))
            else:
                clean_mask = _load_gt_mask(manifest, record, base_dir)
                mask, reg = perturb_raster(clean_mask, cfg,
                                           image_id=record.image_id)
                mask_path = out_dir / f"{record.image_id}_gt.png"
                write_mask_png(mask, mask_path)
                written.append(mask_path)
                new_records.append(replace(record, gt_mask=mask_path.name,
                                           clean_mask=_abs(record.gt_mask,
                                                           base_dir)))
            registry.entries.extend(reg.entries)

        registry_path = out_dir / "registry.jsonl"
        registry.save_jsonl(registry_path)
        written.append(registry_path)

        abs_records = tuple(
            replace(r, probmap=_abs(r.probmap, base_dir),
                    rgb=_abs(r.rgb, base_dir), depth=_abs(r.depth, base_dir))
            for r in new_records)
        out_manifest = Manifest(dataset=manifest.dataset, classes=manifest.classes,
                                records=abs_records)
        out_manifest_path = out_dir / "manifest.json"
        out_manifest.save(out_manifest_path)
        written.append(out_manifest_path)
        return out_manifest_path
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise


# --------------------------------------------------------------------------
# cmd_pipeline


@dataclass(frozen=True)
class PipelineConfig:
    tau: float = 0.25
    seed: int = 0
    split_mode: str = "half"  # half | kfold:K | manifest
    registry: "str | None" = None
    balance_classes: bool = False
    epochs: int = 2000
    learning_rate: float = 0.1
    l2: float = 1e-3

    def to_dict(self) -> dict:
        return {"tau": self.tau, "seed": self.seed, "split_mode": self.split_mode,
                "registry": self.registry, "balance_classes": self.balance_classes,
                "epochs": self.epochs, "learning_rate": self.learning_rate,
                "l2": self.l2}


@dataclass
class _ImageData:
    record: Record
    gt_mask: SegMask
    probs: ProbMap
    pred_mask: SegMask
    gt_cm: object
    pred_cm: object


def _load_images(manifest: Manifest, base_dir: Path) -> dict[str, _ImageData]:
    out = {}
    for record in manifest.records:
        if record.probmap is None:
            raise PipelineError(f"record {record.image_id}: probability map required")
        gt = _load_gt_mask(manifest, record, base_dir)
        probs = read_probmap(Manifest.resolve(record.probmap, base_dir))
        if probs.shape != gt.shape:
            raise PipelineError(
                f"record {record.image_id}: prob map {probs.shape} != mask {gt.shape}")
        pred = argmax_mask(probs)
        out[record.image_id] = _ImageData(
            record=record, gt_mask=gt, probs=probs, pred_mask=pred,
            gt_cm=extract_components(gt, origin=GROUND_TRUTH),
            pred_cm=extract_components(pred, origin=PREDICTION))
    return out


def _global_miou(images: dict[str, _ImageData], n_classes: int) -> float:
    """Dataset-global mean IoU from summed per-class pixel counts, void excluded."""
    tp = np.zeros(n_classes + 1, dtype=np.int64)
    fp = np.zeros(n_classes + 1, dtype=np.int64)
    fn = np.zeros(n_classes + 1, dtype=np.int64)
    for data in images.values():
        g = data.gt_mask.data
        p = data.pred_mask.data
        for cls in range(1, n_classes + 1):
            gm = g == cls
            pm = p == cls
            tp[cls] += int(np.count_nonzero(gm & pm))
            fp[cls] += int(np.count_nonzero(pm & ~gm))
            fn[cls] += int(np.count_nonzero(gm & ~pm))
    ious = [tp[c] / (tp[c] + fp[c] + fn[c])
            for c in range(1, n_classes + 1) if tp[c] + fp[c] + fn[c] > 0]
    return float(np.mean(ious)) if ious else 0.0


def _run_split(images: dict[str, _ImageData], manifest: Manifest,
               config: PipelineConfig) -> tuple[list[Candidate], MetaModel]:
    """Train the meta model on one split, propose candidates on the other."""
    train_ids = [r.image_id for r in manifest.split_records(TRAIN_META)]
    search_ids = [r.image_id for r in manifest.split_records(SEARCH)]
    if not train_ids or not search_ids:
        raise PipelineError(
            f"both splits need records: train-meta={len(train_ids)}, "
            f"search={len(search_ids)}")
    entries = []
    for image_id in sorted(train_ids):
        d = images[image_id]
        match = assign(d.gt_cm, d.pred_cm, config.tau)
        entries.append((d.probs, d.pred_cm, match))
    dataset = build_dataset(entries, image_ids=sorted(train_ids))
    model = train_meta(dataset, TrainConfig(
        epochs=config.epochs, learning_rate=config.learning_rate, l2=config.l2,
        seed=config.seed, balance_classes=config.balance_classes))
    candidates: list[Candidate] = []
    for image_id in sorted(search_ids):
        d = images[image_id]
        candidates.extend(propose(d.gt_cm, d.pred_cm, d.probs, model,
                                  config.tau, image_id=image_id))
    return sort_candidates(candidates), model


def cmd_pipeline(manifest_path, config: PipelineConfig, out_dir) -> dict:
    """Detect label-error candidates over a manifest and write the report.

    Trains the meta classifier on the train-meta split, proposes on the
    search split (k-fold mode rotates the roles so every image is searched
    exactly once), and, when a registry is supplied, scores the proposals
    and both baselines against it.
    """
    manifest_path = Path(manifest_path)
    manifest = Manifest.load(manifest_path)
    base_dir = manifest_path.parent
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    images = _load_images(manifest, base_dir)

    mode = config.split_mode
    if mode == "half":
        rounds = [assign_halves(manifest, config.seed)]
    elif mode.startswith("kfold:"):
        rounds = kfold_rounds(manifest, int(mode.split(":", 1)[1]), config.seed)
    elif mode == "manifest":
        for r in manifest.records:
            if r.split not in SPLITS:
                raise ManifestError(
                    f"record {r.image_id} has no split; set one or use half/kfold")
        rounds = [manifest]
    else:
        raise PipelineError(f"unknown split mode {mode!r}")

    all_candidates: list[Candidate] = []
    models = []
    searched: set[str] = set()
    for round_manifest in rounds:
        cands, model = _run_split(images, round_manifest, config)
        round_search = {r.image_id for r in round_manifest.split_records(SEARCH)}
        overlap = searched & round_search
        if overlap:
            raise PipelineError(f"images searched twice across folds: {sorted(overlap)}")
        searched |= round_search
        all_candidates.extend(cands)
        models.append(model)
    all_candidates = sort_candidates(all_candidates)

    candidates_path = out_dir / "candidates.jsonl"
    save_candidates(all_candidates, candidates_path)
    model_path = out_dir / "model.json"
    model_path.write_text(models[0].to_json() + "\n")

    report: dict = {
        "dataset": manifest.dataset,
        "config": config.to_dict(),
        "n_images": len(images),
        "n_candidates": len(all_candidates),
        "searched_images": sorted(searched),
        "miou": _global_miou(images, manifest.n_classes),
    }

    if config.registry is not None:
        full_registry = ErrorRegistry.load_jsonl(config.registry)
        # Score only what the method was asked to search; errors on pure
        # training images are out of scope for recall (kfold mode searches
        # everything, so nothing is excluded there).
        registry = ErrorRegistry(entries=[e for e in full_registry.entries
                                          if e.image in searched])
        image_ids = set(searched)
        rows = []
        if all_candidates:
            t_star, best = best_f1_threshold(all_candidates, registry,
                                             config.tau, image_ids)
            curve = average_precision(all_candidates, registry, config.tau,
                                      image_ids)
            per_class = per_class_report(all_candidates, registry, t_star,
                                         config.tau, image_ids)
        else:
            t_star = 1.0
            best = evaluate_detection([], registry, t_star, config.tau, image_ids)
            curve = average_precision([], registry, config.tau, image_ids)
            per_class = per_class_report([], registry, t_star, config.tau,
                                         image_ids)
        rows.append(_method_row("method@t*", best, curve.ap))

        b1_cands: list[Candidate] = []
        b2_cands: list[Candidate] = []
        for image_id in sorted(searched):
            d = images[image_id]
            b1_cands.extend(baseline1(d.gt_cm, image_id=image_id))
            b2_cands.extend(baseline2(d.gt_cm, d.pred_cm, config.tau,
                                      image_id=image_id))
        b1_out = evaluate_region_review(b1_cands, registry, image_ids)
        b2_out = evaluate_detection(b2_cands, registry, 1.0, config.tau, image_ids)
        rows.append(_method_row("baseline1", b1_out, None))
        rows.append(_method_row("baseline2", b2_out, None))

        report["t_star"] = t_star
        report["registry_entries"] = len(registry)
        report["registry_entries_total"] = len(full_registry)
        report["method"] = _outcome_dict(best, curve.ap)
        report["baseline1"] = _outcome_dict(b1_out, None)
        report["baseline2"] = _outcome_dict(b2_out, None)
        report["per_class"] = {
            str(cls): _outcome_dict(out, None)
            for cls, out in sorted(per_class.rows.items())}
        report["pr_curve"] = {"thresholds": list(curve.thresholds),
                              "points": [list(p) for p in curve.points]}
        table_rows = [{"name": r.pop("name"), "mIoU": report["miou"], **r}
                      for r in rows]
        report["table"] = format_report(table_rows)

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    if "table" in report:
        (out_dir / "report.txt").write_text(report["table"] + "\n")
    return report


def _method_row(name: str, outcome, ap) -> dict:
    return {"name": name, "TP": outcome.tp, "FN": outcome.fn, "FP": outcome.fp,
            "AP": ap if ap is not None else "", "Prec": outcome.precision,
            "Rec": outcome.recall, "F1": outcome.f1}


def _outcome_dict(outcome, ap) -> dict:
    out = {"t": outcome.t, "tp": outcome.tp, "fp": outcome.fp, "fn": outcome.fn,
           "precision": outcome.precision, "recall": outcome.recall,
           "f1": outcome.f1}
    if ap is not None:
        out["ap"] = ap
    return out


# --------------------------------------------------------------------------
# cmd_topn_export


@dataclass(frozen=True)
class ClassGroup:
    name: str
    classes: frozenset[int]
    quota: int


def cmd_topn_export(candidates_path, manifest_path, out_dir, n: int = 100,
                    groups: "list[ClassGroup] | None" = None) -> Path:
    """Write a self-contained review bundle of the top-ranked candidates.

    With class groups, each group contributes its quota of top candidates
    (quotas must sum to n); without, the top n overall are taken. Crops
    are rendered into the bundle so the review service and UI need only
    this directory.
    """
    from .crops import render_crop
    from .detect import load_candidates

    if n < 1:
        raise PipelineError(f"n must be >= 1, got {n}")
    manifest_path = Path(manifest_path)
    manifest = Manifest.load(manifest_path)
    base_dir = manifest_path.parent
    candidates = load_candidates(candidates_path)

    if groups:
        total = sum(g.quota for g in groups)
        if total != n:
            raise PipelineError(f"group quotas sum to {total}, expected n={n}")
        chosen: list[Candidate] = []
        for g in groups:
            pool = [c for c in candidates if c.class_id in g.classes]
            if len(pool) < g.quota:
                warnings.warn(f"group {g.name!r}: only {len(pool)} of "
                              f"{g.quota} requested candidates available")
            chosen.extend(pool[:g.quota])
    else:
        if len(candidates) < n:
            warnings.warn(f"only {len(candidates)} of {n} requested candidates available")
        chosen = candidates[:n]
    chosen = sort_candidates(chosen)

    out_dir = Path(out_dir)
    crops_dir = out_dir / "crops"
    crops_dir.mkdir(parents=True, exist_ok=True)
    save_candidates(chosen, out_dir / "candidates.jsonl")
    for c in chosen:
        record = manifest.record(c.image)
        gt = _load_gt_mask(manifest, record, base_dir)
        rgb = None
        if record.rgb is not None:
            from PIL import Image
            rgb = np.asarray(Image.open(Manifest.resolve(record.rgb, base_dir)))
        png = render_crop(c, gt, rgb)
        (crops_dir / f"{c.image}_{c.component.id}.png").write_bytes(png)
    meta = {
        "n": n,
        "groups": [{"name": g.name, "classes": sorted(g.classes), "quota": g.quota}
                   for g in (groups or [])],
        "classes": manifest.classes,
        "dataset": manifest.dataset,
    }
    (out_dir / "bundle.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return out_dir
