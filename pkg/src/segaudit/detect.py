"""Label-error candidate generation, ranking, and the two review baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .matching import assign
from .metaseg import MetaModel, featurize_image, score
from .raster import Component, ComponentMap, PREDICTION, ProbMap

CROP_PADDING = 32


@dataclass(frozen=True)
class Candidate:
    """A prediction component proposed for human review."""

    image: str
    component: Component
    class_id: int
    size: int
    score: float
    crop_bbox: tuple[int, int, int, int]

    @property
    def component_id(self) -> int:
        return self.component.id

    def sort_key(self):
        # descending score, then stable provenance order
        return (-self.score, self.image, self.component.id)


def _crop_bbox(comp: Component, padding: int = CROP_PADDING) -> tuple[int, int, int, int]:
    h, w = comp.raster_size
    r0, c0, r1, c1 = comp.bbox
    return (max(0, r0 - padding), max(0, c0 - padding),
            min(h - 1, r1 + padding), min(w - 1, c1 + padding))


def _fp_components(gt: ComponentMap, pred: ComponentMap, tau: float) -> list[Component]:
    """FP_o prediction components with zero same-class ground-truth overlap.

    Both conditions are checked explicitly even though zero overlap implies
    pi = 0 <= tau; the redundancy guards the filter against regressions.
    """
    result = assign(gt, pred, tau)
    out = []
    for s in result.pred_scores:
        is_fp = s.value <= tau
        no_same_class_overlap = len(s.matched_ids) == 0
        if is_fp and no_same_class_overlap:
            assert s.value == 0.0
            out.append(pred.by_id(s.component_id))
    return out


def propose(gt: ComponentMap, pred: ComponentMap, probs: ProbMap,
            model: MetaModel, tau: float = 0.25, image_id: str = "") -> list[Candidate]:
    """Score and rank the label-error proposals of one image.

    Keeps every FP_o prediction component that has no same-class
    intersection with the ground-truth mask, scored by the meta model.
    """
    feats = featurize_image(probs, pred)  # also validates raster agreement
    by_id = {c.id: f for c, f in zip(pred.components, feats)}
    out = []
    for comp in _fp_components(gt, pred, tau):
        out.append(Candidate(image=image_id, component=comp,
                             class_id=comp.class_id, size=comp.size,
                             score=score(model, by_id[comp.id]),
                             crop_bbox=_crop_bbox(comp)))
    return sort_candidates(out)


def sort_candidates(candidates: list[Candidate]) -> list[Candidate]:
    return sorted(candidates, key=Candidate.sort_key)


def select(candidates: list[Candidate], t: float) -> list[Candidate]:
    """Candidates at or above the review threshold, order preserved."""
    return [c for c in candidates if c.score >= t]


def baseline1(gt_perturbed: ComponentMap, min_size: int = 250,
              image_id: str = "") -> list[Candidate]:
    """Review queue of every perturbed-ground-truth component above min_size."""
    out = []
    for comp in gt_perturbed.components:
        if comp.size > min_size:
            out.append(Candidate(image=image_id, component=comp,
                                 class_id=comp.class_id, size=comp.size,
                                 score=1.0, crop_bbox=_crop_bbox(comp)))
    return sort_candidates(out)


def baseline2(gt: ComponentMap, pred: ComponentMap, tau: float = 0.25,
              image_id: str = "") -> list[Candidate]:
    """Every filtered FP_o component, reviewed without ranking (score 1)."""
    out = []
    for comp in _fp_components(gt, pred, tau):
        out.append(Candidate(image=image_id, component=comp,
                             class_id=comp.class_id, size=comp.size,
                             score=1.0, crop_bbox=_crop_bbox(comp)))
    return sort_candidates(out)


# --------------------------------------------------------------------------
# Persistence


def save_candidates(candidates: list[Candidate], path) -> None:
    """JSON lines sorted by descending score, one candidate each."""
    ordered = sort_candidates(candidates)
    with open(path, "w") as fh:
        for c in ordered:
            fh.write(json.dumps({
                "image": c.image,
                "component_id": c.component.id,
                "class_id": c.class_id,
                "size": c.size,
                "bbox": list(c.component.bbox),
                "score": c.score,
                "pixels_rle": [[int(a), int(b), int(e)] for a, b, e in c.component.runs],
                "crop_bbox": list(c.crop_bbox),
                "raster_size": list(c.component.raster_size),
            }, sort_keys=True) + "\n")


def load_candidates(path) -> list[Candidate]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            runs = np.array(obj["pixels_rle"], dtype=np.int32).reshape(-1, 3)
            comp = Component(id=obj["component_id"], class_id=obj["class_id"],
                             runs=runs, size=obj["size"], bbox=tuple(obj["bbox"]),
                             origin=PREDICTION,
                             raster_size=tuple(obj["raster_size"]))
            out.append(Candidate(image=obj["image"], component=comp,
                                 class_id=obj["class_id"], size=obj["size"],
                                 score=float(obj["score"]),
                                 crop_bbox=tuple(obj["crop_bbox"])))
    return out
