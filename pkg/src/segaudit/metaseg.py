"""Per-component features and the logistic meta classifier estimating P(TP_o).

Each prediction component gets a fixed-length vector of geometry and
softmax-dispersion features. A logistic regression on standardized
features, fit by full-batch gradient descent, turns them into a
calibrated confidence that the component matches ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .matching import MatchResult
from .raster import EIGHT_CONN, Component, ComponentMap, ProbMap, RasterError

FEATURE_NAMES: tuple[str, ...] = (
    "size",
    "boundary_size",
    "interior_size",
    "rel_boundary",
    "entropy_mean_interior",
    "entropy_var_interior",
    "entropy_mean_boundary",
    "entropy_var_boundary",
    "margin_mean_interior",
    "margin_var_interior",
    "margin_mean_boundary",
    "margin_var_boundary",
    "max_softmax_mean",
    "centroid_row_rel",
    "centroid_col_rel",
    "class_id",
)

N_FEATURES = len(FEATURE_NAMES)

SCHEMA_VERSION = 1


class MetaError(ValueError):
    """Bad dataset or model input."""


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # (N_FEATURES,) float64

    def validate(self) -> "FeatureVector":
        if self.values.shape != (N_FEATURES,):
            raise MetaError(f"feature vector must have length {N_FEATURES}, "
                            f"got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise MetaError("feature vector contains NaN or Inf")
        return self

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])


@dataclass
class MetaDataset:
    """Feature rows with TP_o targets and (image, component) provenance."""

    rows: np.ndarray  # (n, N_FEATURES) float64
    targets: np.ndarray  # (n,) int, 1 = TP_o-style match, 0 = FP_o
    image_ids: list[str]
    component_ids: list[int]

    def __len__(self) -> int:
        return len(self.targets)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(FEATURE_NAMES) + ["target", "image_id", "component_id"])
            for i in range(len(self)):
                w.writerow([repr(float(v)) for v in self.rows[i]]
                           + [int(self.targets[i]), self.image_ids[i],
                              self.component_ids[i]])

    @staticmethod
    def load_csv(path) -> "MetaDataset":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:N_FEATURES] != list(FEATURE_NAMES):
                raise MetaError("CSV feature columns do not match the schema")
            rows, targets, image_ids, component_ids = [], [], [], []
            for rec in r:
                rows.append([float(v) for v in rec[:N_FEATURES]])
                targets.append(int(rec[N_FEATURES]))
                image_ids.append(rec[N_FEATURES + 1])
                component_ids.append(int(rec[N_FEATURES + 2]))
        return MetaDataset(rows=np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES),
                           targets=np.array(targets, dtype=np.int64),
                           image_ids=image_ids, component_ids=component_ids)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.1
    l2: float = 1e-3
    seed: int = 42
    balance_classes: bool = False

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "l2": self.l2, "seed": self.seed,
                "balance_classes": self.balance_classes}


@dataclass(frozen=True)
class MetaModel:
    weights: np.ndarray  # (N_FEATURES + 1,), bias last
    feature_means: np.ndarray
    feature_stds: np.ndarray
    config: TrainConfig
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "feature_names": list(FEATURE_NAMES),
            "weights": [float(v) for v in self.weights],
            "means": [float(v) for v in self.feature_means],
            "stds": [float(v) for v in self.feature_stds],
            "config": self.config.to_dict(),
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MetaModel":
        obj = json.loads(text)
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise MetaError(f"unsupported model schema version {obj.get('schema_version')}")
        if obj.get("feature_names") != list(FEATURE_NAMES):
            raise MetaError("model feature names do not match the schema")
        return MetaModel(
            weights=np.array(obj["weights"], dtype=np.float64),
            feature_means=np.array(obj["means"], dtype=np.float64),
            feature_stds=np.array(obj["stds"], dtype=np.float64),
            config=TrainConfig(**obj["config"]))


def _pixel_stats(probs: ProbMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel normalized entropy, top-1/top-2 margin, and max softmax."""
    p = probs.data.astype(np.float64)
    c = probs.classes
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    entropy = -plogp.sum(axis=2)
    if c > 1:
        entropy = entropy / np.log(c)
        part = np.partition(p, c - 2, axis=2)
        top1 = part[..., c - 1]
        top2 = part[..., c - 2]
        margin = top1 - top2
    else:
        entropy = np.zeros_like(entropy)
        top1 = p[..., 0]
        margin = np.ones_like(top1)
    return entropy, margin, top1


def _interior_mask(local: np.ndarray) -> np.ndarray:
    """Pixels of a local component window with all 8 neighbors inside it."""
    return ndimage.binary_erosion(local, structure=EIGHT_CONN, border_value=0)


def _mean_var(values: np.ndarray) -> tuple[float, float]:
    return float(values.mean()), float(values.var())


def featurize_image(probs: ProbMap, pred: ComponentMap) -> list[FeatureVector]:
    """Feature vectors for every component of one prediction map."""
    if probs.shape != pred.shape:
        raise RasterError(f"raster dimensions differ: {probs.shape} vs {pred.shape}")
    entropy, margin, top1 = _pixel_stats(probs)
    h, w = pred.shape
    out = []
    for comp in pred.components:
        out.append(_featurize_one(comp, entropy, margin, top1, h, w))
    return out


def featurize(k_hat: Component, probs: ProbMap, pred: ComponentMap) -> FeatureVector:
    """Feature vector of a single prediction component."""
    if probs.shape != pred.shape or k_hat.raster_size != probs.shape:
        raise RasterError("raster dimensions differ between component, probs, pred")
    if not (1 <= k_hat.id <= len(pred.components)) or pred.by_id(k_hat.id).size != k_hat.size:
        raise MetaError(f"component {k_hat.id} does not belong to the given map")
    entropy, margin, top1 = _pixel_stats(probs)
    return _featurize_one(k_hat, entropy, margin, top1, *probs.shape)


def _featurize_one(comp: Component, entropy: np.ndarray, margin: np.ndarray,
                   top1: np.ndarray, h: int, w: int) -> FeatureVector:
    if comp.size == 0:
        raise MetaError("empty component")
    rows, cols = comp.pixel_coords()
    r0, c0, r1, c1 = comp.bbox
    local = np.zeros((r1 - r0 + 1, c1 - c0 + 1), dtype=bool)
    local[rows - r0, cols - c0] = True
    interior_local = _interior_mask(local)
    is_interior = interior_local[rows - r0, cols - c0]

    ent = entropy[rows, cols]
    mar = margin[rows, cols]
    boundary_n = int((~is_interior).sum())
    interior_n = comp.size - boundary_n

    e_b = _mean_var(ent[~is_interior]) if boundary_n else (0.0, 0.0)
    m_b = _mean_var(mar[~is_interior]) if boundary_n else (0.0, 0.0)
    if interior_n:
        e_i = _mean_var(ent[is_interior])
        m_i = _mean_var(mar[is_interior])
    else:
        # thin component: no interior pixels, reuse boundary aggregates
        e_i, m_i = e_b, m_b

    values = np.array([
        comp.size,
        boundary_n,
        interior_n,
        boundary_n / comp.size,
        e_i[0], e_i[1], e_b[0], e_b[1],
        m_i[0], m_i[1], m_b[0], m_b[1],
        float(top1[rows, cols].mean()),
        float(rows.mean()) / h,
        float(cols.mean()) / w,
        comp.class_id,
    ], dtype=np.float64)
    return FeatureVector(values=values).validate()


def build_dataset(entries: list[tuple[ProbMap, ComponentMap, MatchResult]],
                  image_ids: "list[str] | None" = None) -> MetaDataset:
    """One feature row per prediction component; target 1 iff not FP_o.

    All MatchResults must share one tau.
    """
    if image_ids is None:
        image_ids = [f"img{i:05d}" for i in range(len(entries))]
    if len(image_ids) != len(entries):
        raise MetaError("image_ids length does not match entries")
    taus = {m.tau for _, _, m in entries}
    if len(taus) > 1:
        raise MetaError(f"inconsistent tau across inputs: {sorted(taus)}")
    rows, targets, imgs, comps = [], [], [], []
    for image_id, (probs, pred, match) in zip(image_ids, entries):
        feats = featurize_image(probs, pred)
        by_id = {s.component_id: s for s in match.pred_scores}
        for comp, fv in zip(pred.components, feats):
            score = by_id.get(comp.id)
            if score is None:
                raise MetaError(f"component {comp.id} missing from match result")
            rows.append(fv.values)
            targets.append(0 if score.value <= match.tau else 1)
            imgs.append(image_id)
            comps.append(comp.id)
    data = np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES)
    return MetaDataset(rows=data, targets=np.array(targets, dtype=np.int64),
                       image_ids=imgs, component_ids=comps)


def _standardize(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    degenerate = stds < 1e-12
    stds = np.where(degenerate, 1.0, stds)
    return (rows - means) / stds, means, stds, degenerate


def loss_and_grad(weights: np.ndarray, x: np.ndarray, y: np.ndarray,
                  l2: float, row_weights: "np.ndarray | None" = None
                  ) -> tuple[float, np.ndarray]:
    """Weighted mean cross-entropy with L2 on the non-bias weights.

    x must already carry the bias column of ones as its last column.
    """
    n = len(y)
    z = x @ weights
    if row_weights is None:
        row_weights = np.ones(n)
    ce = row_weights * (y * np.logaddexp(0.0, -z) + (1 - y) * np.logaddexp(0.0, z))
    w_no_bias = weights[:-1]
    loss = float(ce.sum() / n + 0.5 * l2 * (w_no_bias @ w_no_bias))
    p = expit(z)
    grad = x.T @ (row_weights * (p - y)) / n
    grad[:-1] += l2 * w_no_bias
    return loss, grad


def train_meta(data: MetaDataset, config: TrainConfig = TrainConfig()) -> MetaModel:
    """Fit the logistic meta classifier by full-batch gradient descent.

    Deterministic for fixed inputs; features standardized internally,
    constant features get std 1 and their weight pinned to 0.
    """
    if len(data) == 0:
        raise MetaError("empty dataset")
    if not np.all(np.isfinite(data.rows)):
        raise MetaError("dataset contains NaN or Inf features")
    classes = set(np.unique(data.targets).tolist())
    if not classes <= {0, 1}:
        raise MetaError(f"targets must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        raise MetaError("training requires both target classes")

    x_std, means, stds, degenerate = _standardize(data.rows)
    x = np.column_stack([x_std, np.ones(len(data))])
    y = data.targets.astype(np.float64)

    row_weights = None
    if config.balance_classes:
        n = len(y)
        n_pos = float(y.sum())
        n_neg = n - n_pos
        row_weights = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))

    # full-batch descent from zeros is deterministic; the recorded seed only
    # matters for stochastic variants and for provenance in saved models
    weights = np.zeros(N_FEATURES + 1)
    pin = np.concatenate([degenerate, [False]])
    history = []
    for epoch in range(1, config.epochs + 1):
        loss, grad = loss_and_grad(weights, x, y, config.l2, row_weights)
        history.append(loss)
        grad[pin] = 0.0
        weights = weights - (config.learning_rate / np.sqrt(epoch)) * grad
        weights[pin] = 0.0
    return MetaModel(weights=weights, feature_means=means, feature_stds=stds,
                     config=config, loss_history=tuple(history))


def score(model: MetaModel, row: "FeatureVector | np.ndarray") -> float:
    """Estimated P(TP_o) of one component: sigmoid of the standardized affine form."""
    values = row.values if isinstance(row, FeatureVector) else np.asarray(row, dtype=np.float64)
    if values.shape != (N_FEATURES,):
        raise MetaError(f"expected {N_FEATURES} features, got shape {values.shape}")
    z = (values - model.feature_means) / model.feature_stds @ model.weights[:-1] \
        + model.weights[-1]
    return float(expit(z))


def score_many(model: MetaModel, rows: np.ndarray) -> np.ndarray:
    x = (rows - model.feature_means) / model.feature_stds
    return expit(x @ model.weights[:-1] + model.weights[-1])


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_score: float
    accuracy: float


def reliability(model: MetaModel, data: MetaDataset, bins: int = 10) -> list[ReliabilityBin]:
    """Equal-width calibration bins over [0,1] with empirical TP_o frequency."""
    if bins < 2:
        raise MetaError("bins must be >= 2")
    if len(data) == 0:
        raise MetaError("empty dataset")
    scores = score_many(model, data.rows)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(scores, edges[1:-1]), 0, bins - 1)
    out = []
    for b in range(bins):
        sel = idx == b
        n = int(sel.sum())
        if n:
            out.append(ReliabilityBin(
                lo=float(edges[b]), hi=float(edges[b + 1]), count=n,
                mean_score=float(scores[sel].mean()),
                accuracy=float(data.targets[sel].mean())))
        else:
            out.append(ReliabilityBin(lo=float(edges[b]), hi=float(edges[b + 1]),
                                      count=0, mean_score=float("nan"),
                                      accuracy=float("nan")))
    return out
