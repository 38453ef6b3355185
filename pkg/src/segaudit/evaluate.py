"""Detection scoring against the injected-error registry.

The protocol reuses the component matching machinery with the roles
recast: registry components play ground truth, selected candidates play
predictions, and the same threshold tau decides matches. Counts are
dataset-global sums over images.
"""

from __future__ import annotations

from dataclasses import dataclass

from .detect import Candidate, select
from .matching import assign
from .perturb import ErrorRegistry
from .raster import Component, intersect_size


class EvaluationError(ValueError):
    """Inconsistent candidate/registry inputs."""


@dataclass(frozen=True)
class DetectionOutcome:
    t: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class PRCurve:
    thresholds: tuple[float, ...]  # decreasing
    points: tuple[tuple[float, float], ...]  # (recall, precision) per threshold
    ap: float


def _registry_components(registry: ErrorRegistry,
                         raster_sizes: dict[str, tuple[int, int]]
                         ) -> dict[str, list[Component]]:
    out: dict[str, list[Component]] = {}
    for image, entries in registry.by_image().items():
        size = raster_sizes.get(image)
        comps = []
        for i, e in enumerate(entries):
            comps.append(e.to_component(size or (e.bbox[2] + 1, e.bbox[3] + 1),
                                        component_id=i + 1))
        out[image] = comps
    return out


def _check_image_sets(candidates: list[Candidate], registry: ErrorRegistry,
                      image_ids: "set[str] | None") -> None:
    if image_ids is None:
        return
    extra_c = {c.image for c in candidates} - image_ids
    extra_r = {e.image for e in registry.entries} - image_ids
    if extra_c or extra_r:
        raise EvaluationError(
            f"images outside the evaluation set: candidates {sorted(extra_c)}, "
            f"registry {sorted(extra_r)}")


def evaluate_detection(candidates: list[Candidate], registry: ErrorRegistry,
                       t: float, tau: float = 0.25,
                       image_ids: "set[str] | None" = None) -> DetectionOutcome:
    """Count detected/missed registry components and spurious proposals at t.

    A registry component counts as found when its sIoU against the
    selected candidates exceeds tau; a selected candidate counts as a
    false positive when its same-class registry coverage pi stays at or
    below tau.
    """
    _check_image_sets(candidates, registry, image_ids)
    chosen = select(candidates, t)
    by_image_cand: dict[str, list[Candidate]] = {}
    for c in chosen:
        by_image_cand.setdefault(c.image, []).append(c)
    sizes = {c.image: c.component.raster_size for c in chosen}
    reg_comps = _registry_components(registry, sizes)

    tp = fp = fn = 0
    for image in sorted(set(by_image_cand) | set(reg_comps)):
        gt_comps = reg_comps.get(image, [])
        pred_comps = [c.component for c in by_image_cand.get(image, [])]
        if not pred_comps:
            fn += len(gt_comps)
            continue
        if not gt_comps:
            fp += len(pred_comps)
            continue
        result = assign(gt_comps, pred_comps, tau)
        tp += sum(1 for s in result.gt_scores if s.value > tau)
        fn += sum(1 for s in result.gt_scores if s.value <= tau)
        fp += sum(1 for s in result.pred_scores if s.value <= tau)
    return DetectionOutcome(t=t, tp=tp, fp=fp, fn=fn)


def _distinct_scores(candidates: list[Candidate]) -> list[float]:
    return sorted({c.score for c in candidates}, reverse=True)


def best_f1_threshold(candidates: list[Candidate], registry: ErrorRegistry,
                      tau: float = 0.25,
                      image_ids: "set[str] | None" = None
                      ) -> tuple[float, DetectionOutcome]:
    """The score threshold maximizing F1; ties resolve to the largest t."""
    if not candidates:
        raise EvaluationError("cannot sweep thresholds without candidates")
    best = None
    for t in _distinct_scores(candidates):  # decreasing: ties keep largest t
        outcome = evaluate_detection(candidates, registry, t, tau, image_ids)
        if best is None or outcome.f1 > best.f1:
            best = outcome
    return best.t, best


def average_precision(candidates: list[Candidate], registry: ErrorRegistry,
                      tau: float = 0.25,
                      image_ids: "set[str] | None" = None) -> PRCurve:
    """Precision-recall staircase over all distinct scores, integrated stepwise.

    AP accumulates (r_i - r_{i-1}) * p_i along decreasing thresholds with
    r_0 = 0; no interpolation.
    """
    thresholds = _distinct_scores(candidates)
    points = []
    ap = 0.0
    r_prev = 0.0
    for t in thresholds:
        outcome = evaluate_detection(candidates, registry, t, tau, image_ids)
        r, p = outcome.recall, outcome.precision
        points.append((r, p))
        ap += (r - r_prev) * p
        r_prev = r
    return PRCurve(thresholds=tuple(thresholds), points=tuple(points), ap=ap)


@dataclass(frozen=True)
class PerClassReport:
    rows: dict[int, DetectionOutcome]
    overall: DetectionOutcome


def per_class_report(candidates: list[Candidate], registry: ErrorRegistry,
                     t: float, tau: float = 0.25,
                     image_ids: "set[str] | None" = None) -> PerClassReport:
    """evaluate_detection restricted to each class, plus the overall row."""
    classes = sorted({c.class_id for c in candidates}
                     | {e.class_id for e in registry.entries})
    rows = {}
    for cls in classes:
        sub_c = [c for c in candidates if c.class_id == cls]
        sub_r = ErrorRegistry(entries=[e for e in registry.entries
                                       if e.class_id == cls])
        rows[cls] = evaluate_detection(sub_c, sub_r, t, tau, image_ids)
    overall = evaluate_detection(candidates, registry, t, tau, image_ids)
    return PerClassReport(rows=rows, overall=overall)


def evaluate_region_review(candidates: list[Candidate], registry: ErrorRegistry,
                           image_ids: "set[str] | None" = None) -> DetectionOutcome:
    """Class-agnostic region-overlap counting for exhaustive review queues.

    A registry entry counts as found when any reviewed component overlaps
    it by at least one pixel, whatever its class; a reviewed component
    with no overlap against any entry is a wasted review (FP). This is the
    scoring that fits review queues built from the perturbed mask itself,
    where dropped regions surface under some other class.
    """
    _check_image_sets(candidates, registry, image_ids)
    by_image_cand: dict[str, list[Candidate]] = {}
    for c in candidates:
        by_image_cand.setdefault(c.image, []).append(c)
    tp = fp = fn = 0
    for image, entries in registry.by_image().items():
        cands = by_image_cand.get(image, [])
        hit = [False] * len(cands)
        for e in entries:
            comp = e.to_component(cands[0].component.raster_size if cands
                                  else (e.bbox[2] + 1, e.bbox[3] + 1))
            found = False
            for i, c in enumerate(cands):
                if intersect_size(comp, c.component) > 0:
                    hit[i] = True
                    found = True
            tp += found
            fn += not found
        fp += hit.count(False)
    for image, cands in by_image_cand.items():
        if image not in registry.by_image():
            fp += len(cands)
    return DetectionOutcome(t=0.0, tp=tp, fp=fp, fn=fn)


def format_report(rows: list[dict]) -> str:
    """Aligned plain-text table; keys of the first row define the columns."""
    if not rows:
        return ""
    columns = list(rows[0].keys())
    rendered = [[_fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in rendered))
              for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(widths[i]) for i, c in enumerate(columns))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rendered:
        lines.append("  ".join(v.rjust(widths[i]) if _numeric(v) else v.ljust(widths[i])
                               for i, v in enumerate(row)))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _numeric(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False
