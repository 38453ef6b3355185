"""Component-level matching of predictions against ground truth.

A ground-truth component k is compared against pr(k), the union of all
same-class prediction components that touch it, with an adjustment term
that excludes pixels belonging to *other* ground-truth components of the
same class:

    sIoU(k) = |k ∩ pr(k)| / |(k ∪ pr(k)) \\ A(k)|

where A(k) is the set of pixels covered by same-class ground-truth
components other than k. A prediction component k̂ is judged by the
fraction of its pixels covered by same-class ground truth:

    pi(k̂) = |k̂ ∩ g(k̂)| / |k̂|

k counts as detected (TP) when sIoU(k) > tau; k̂ counts as a false
positive when pi(k̂) <= tau.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .raster import (
    Component,
    ComponentMap,
    RasterError,
    runs_intersect_size,
)


@dataclass(frozen=True)
class ComponentScore:
    component_id: int
    class_id: int
    size: int
    value: float  # sIoU for ground truth, pi for predictions
    matched_ids: tuple[int, ...]  # opposing same-class components with overlap


@dataclass(frozen=True)
class MatchResult:
    """Per-image matching outcome at a fixed threshold tau."""

    tau: float
    gt_scores: list[ComponentScore] = field(default_factory=list)
    pred_scores: list[ComponentScore] = field(default_factory=list)

    @property
    def tp_gt_ids(self) -> list[int]:
        return [s.component_id for s in self.gt_scores if s.value > self.tau]

    @property
    def fn_gt_ids(self) -> list[int]:
        return [s.component_id for s in self.gt_scores if s.value <= self.tau]

    @property
    def fp_pred_ids(self) -> list[int]:
        return [s.component_id for s in self.pred_scores if s.value <= self.tau]

    @property
    def tp_pred_ids(self) -> list[int]:
        return [s.component_id for s in self.pred_scores if s.value > self.tau]

    def to_json(self) -> str:
        def enc(scores):
            return [
                {
                    "component_id": s.component_id,
                    "class_id": s.class_id,
                    "size": s.size,
                    "value": s.value,
                    "matched_ids": list(s.matched_ids),
                }
                for s in scores
            ]

        return json.dumps({
            "tau": self.tau,
            "gt": enc(self.gt_scores),
            "pred": enc(self.pred_scores),
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MatchResult":
        obj = json.loads(text)

        def dec(rows):
            return [
                ComponentScore(
                    component_id=r["component_id"], class_id=r["class_id"],
                    size=r["size"], value=r["value"],
                    matched_ids=tuple(r["matched_ids"]))
                for r in rows
            ]

        return MatchResult(tau=obj["tau"], gt_scores=dec(obj["gt"]),
                           pred_scores=dec(obj["pred"]))


def _validate_tau(tau: float) -> None:
    if not (0.0 <= tau < 1.0):
        raise ValueError(f"tau must lie in [0, 1), got {tau}")


def _overlap_table(gt: list[Component], pred: list[Component]) -> dict[tuple[int, int], int]:
    """Pairwise same-class intersection sizes keyed by (gt index, pred index).

    Only nonzero entries appear. Pure run-table arithmetic, no full rasters,
    so it also serves collections of bare components.
    """
    table: dict[tuple[int, int], int] = {}
    by_class: dict[int, list[int]] = {}
    for j, p in enumerate(pred):
        by_class.setdefault(p.class_id, []).append(j)
    for i, g in enumerate(gt):
        for j in by_class.get(g.class_id, ()):
            p = pred[j]
            if (g.bbox[2] < p.bbox[0] or p.bbox[2] < g.bbox[0]
                    or g.bbox[3] < p.bbox[1] or p.bbox[3] < g.bbox[1]):
                continue
            n = runs_intersect_size(g.runs, p.runs)
            if n:
                table[(i, j)] = n
    return table


def _overlap_table_raster(gt: ComponentMap, pred: ComponentMap) -> dict[tuple[int, int], int]:
    """Same contingency table computed from full label rasters in one pass."""
    ga = gt.labels.ravel().astype(np.int64)
    pa = pred.labels.ravel().astype(np.int64)
    both = (ga > 0) & (pa > 0)
    if not both.any():
        return {}
    paired = ga[both] * (len(pred.components) + 1) + pa[both]
    vals, counts = np.unique(paired, return_counts=True)
    table: dict[tuple[int, int], int] = {}
    for v, n in zip(vals, counts):
        gi = int(v // (len(pred.components) + 1)) - 1
        pj = int(v % (len(pred.components) + 1)) - 1
        if gt.components[gi].class_id == pred.components[pj].class_id:
            table[(gi, pj)] = int(n)
    return table


def assign(gt: "ComponentMap | list[Component]",
           pred: "ComponentMap | list[Component]",
           tau: float = 0.25) -> MatchResult:
    """Score every component of both rasters and classify at threshold tau.

    Accepts full ComponentMaps (fast raster contingency path) or bare
    component lists (run-table path), which must share raster dimensions.
    """
    _validate_tau(tau)
    if isinstance(gt, ComponentMap) and isinstance(pred, ComponentMap):
        if gt.shape != pred.shape:
            raise RasterError(f"raster dimensions differ: {gt.shape} vs {pred.shape}")
        gt_comps, pred_comps = gt.components, pred.components
        table = _overlap_table_raster(gt, pred)
    else:
        gt_comps = gt.components if isinstance(gt, ComponentMap) else list(gt)
        pred_comps = pred.components if isinstance(pred, ComponentMap) else list(pred)
        sizes = {c.raster_size for c in gt_comps} | {c.raster_size for c in pred_comps}
        if len(sizes) > 1:
            raise RasterError(f"raster dimensions differ across components: {sorted(sizes)}")
        table = _overlap_table(gt_comps, pred_comps)

    # Total same-class ground-truth coverage of each prediction component.
    pred_gt_cover = np.zeros(len(pred_comps), dtype=np.int64)
    gt_partners: dict[int, list[int]] = {i: [] for i in range(len(gt_comps))}
    pred_partners: dict[int, list[int]] = {j: [] for j in range(len(pred_comps))}
    for (i, j), n in table.items():
        pred_gt_cover[j] += n
        gt_partners[i].append(j)
        pred_partners[j].append(i)

    gt_scores: list[ComponentScore] = []
    for i, g in enumerate(gt_comps):
        partners = sorted(gt_partners[i])
        inter = sum(table[(i, j)] for j in partners)
        if not partners:
            value = 0.0
        else:
            # |k ∪ pr(k)| − |pixels of other same-class GT inside the union|.
            # Other-GT pixels inside pr(k) are exactly the same-class cover of
            # those predictions not contributed by k; other-GT pixels inside k
            # itself are impossible since components of one class are disjoint.
            union = g.size + sum(pred_comps[j].size for j in partners) - inter
            adjust = sum(int(pred_gt_cover[j]) for j in partners) - inter
            denom = union - adjust
            value = inter / denom if denom > 0 else 0.0
        gt_scores.append(ComponentScore(
            component_id=g.id, class_id=g.class_id, size=g.size,
            value=float(value),
            matched_ids=tuple(pred_comps[j].id for j in partners)))

    pred_scores: list[ComponentScore] = []
    for j, p in enumerate(pred_comps):
        partners = sorted(pred_partners[j])
        value = float(pred_gt_cover[j] / p.size)
        pred_scores.append(ComponentScore(
            component_id=p.id, class_id=p.class_id, size=p.size,
            value=value,
            matched_ids=tuple(gt_comps[i].id for i in partners)))

    return MatchResult(tau=tau, gt_scores=gt_scores, pred_scores=pred_scores)


def siou(k: Component, gt: "ComponentMap | list[Component]",
         pred: "ComponentMap | list[Component]") -> float:
    """Adjusted intersection over union of one ground-truth component.

    k must be a member of gt; the other same-class members define the
    exclusion set A(k).
    """
    result = assign(gt, pred, tau=0.0)
    for s in result.gt_scores:
        if s.component_id == k.id:
            return s.value
    raise ValueError(f"component {k.id} not found among ground-truth components")


def pi(k_hat: Component, gt: "ComponentMap | list[Component]") -> float:
    """Fraction of a prediction component covered by same-class ground truth."""
    comps = gt.components if isinstance(gt, ComponentMap) else gt
    total = 0
    for g in comps:
        if g.class_id == k_hat.class_id:
            if g.raster_size != k_hat.raster_size:
                raise RasterError(
                    f"raster dimensions differ: {g.raster_size} vs {k_hat.raster_size}")
            total += runs_intersect_size(k_hat.runs, g.runs)
    return total / k_hat.size


@dataclass(frozen=True)
class PixelConfusion:
    """Per-class pixel counters against ground truth."""

    tp: int
    fp: int
    fn: int

    @property
    def iou(self) -> float:
        denom = self.tp + self.fp + self.fn
        return self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class MiouReport:
    per_class: dict[int, PixelConfusion]
    mean: float


def miou(gt_mask, pred_mask, include_void: bool = False) -> MiouReport:
    """Per-class pixel IoU and its mean.

    Void (0) is excluded unless include_void; classes absent from both
    masks (tp + fp + fn = 0) are excluded from the mean.
    """
    if gt_mask.shape != pred_mask.shape:
        raise RasterError(f"raster dimensions differ: {gt_mask.shape} vs {pred_mask.shape}")
    if gt_mask.classes != pred_mask.classes:
        raise RasterError(f"class counts differ: {gt_mask.classes} vs {pred_mask.classes}")
    start = 0 if include_void else 1
    per_class: dict[int, PixelConfusion] = {}
    ious = []
    for cls in range(start, gt_mask.classes + 1):
        g = gt_mask.data == cls
        p = pred_mask.data == cls
        tp = int(np.count_nonzero(g & p))
        fp = int(np.count_nonzero(p & ~g))
        fn = int(np.count_nonzero(g & ~p))
        if tp + fp + fn == 0:
            continue
        conf = PixelConfusion(tp=tp, fp=fp, fn=fn)
        per_class[cls] = conf
        ious.append(conf.iou)
    return MiouReport(per_class=per_class, mean=float(np.mean(ious)) if ious else 0.0)
