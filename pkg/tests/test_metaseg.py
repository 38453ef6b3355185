import numpy as np
import pytest

from segaudit.matching import assign
from segaudit.metaseg import (
    FEATURE_NAMES,
    N_FEATURES,
    FeatureVector,
    MetaDataset,
    MetaError,
    MetaModel,
    TrainConfig,
    build_dataset,
    featurize,
    featurize_image,
    loss_and_grad,
    reliability,
    score,
    score_many,
    train_meta,
)
from segaudit.raster import PREDICTION, ProbMap, SegMask, extract_components, one_hot

from oracles import binomial_sigma


def uniform_probmap(h, w, c):
    return ProbMap(data=np.full((h, w, c), 1.0 / c, dtype=np.float32))


def square_component_map(h=5, w=5, c=3):
    data = np.ones((h, w), dtype=np.uint8)
    data[1:4, 1:4] = 2
    mask = SegMask(data=data, classes=c)
    return extract_components(mask, origin=PREDICTION)


def toy_dataset(n=60, seed=0, sep=3.0):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=(n, N_FEATURES)) * 0.1
    targets = (np.arange(n) % 2).astype(np.int64)
    rows[:, 0] = np.where(targets == 1, sep, -sep) + rng.normal(scale=0.1, size=n)
    return MetaDataset(rows=rows, targets=targets,
                       image_ids=[f"im{i}" for i in range(n)],
                       component_ids=list(range(1, n + 1)))


def test_one_hot_softmax_features():
    # every pixel carries the one-hot vector of its predicted class
    pred = square_component_map()
    grid = np.ones((5, 5), dtype=np.uint8)
    grid[1:4, 1:4] = 2
    pm = one_hot(SegMask(data=grid, classes=3))
    fv = featurize(pred.components[1], pm, pred)
    assert fv["entropy_mean_interior"] == 0.0
    assert fv["entropy_mean_boundary"] == 0.0
    assert fv["margin_mean_interior"] == 1.0
    assert fv["max_softmax_mean"] == 1.0


def test_uniform_softmax_features():
    pred = square_component_map(c=4)
    pm = uniform_probmap(5, 5, 4)
    fv = featurize(pred.components[1], pm, pred)
    assert fv["entropy_mean_boundary"] == pytest.approx(1.0)
    assert fv["margin_mean_boundary"] == 0.0
    assert fv["max_softmax_mean"] == pytest.approx(0.25)


def test_square_geometry_features():
    pred = square_component_map()
    fv = featurize(pred.components[1], uniform_probmap(5, 5, 3), pred)
    assert fv["size"] == 9
    assert fv["boundary_size"] == 8
    assert fv["interior_size"] == 1
    assert fv["rel_boundary"] == pytest.approx(8 / 9)
    assert fv["class_id"] == 2
    assert fv["centroid_row_rel"] == pytest.approx(2 / 5)
    assert fv["centroid_col_rel"] == pytest.approx(2 / 5)


def test_thin_component_copies_boundary_aggregates():
    data = np.ones((1, 4), dtype=np.uint8)
    pred = extract_components(SegMask(data=data, classes=2), origin=PREDICTION)
    rng = np.random.default_rng(2)
    raw = rng.random((1, 4, 2)).astype(np.float32)
    raw /= raw.sum(axis=2, keepdims=True)
    fv = featurize(pred.components[0], ProbMap(data=raw), pred)
    assert fv["interior_size"] == 0
    assert fv["entropy_mean_interior"] == fv["entropy_mean_boundary"]
    assert fv["margin_var_interior"] == fv["margin_var_boundary"]


def test_featurize_image_matches_single_calls():
    rng = np.random.default_rng(3)
    data = rng.integers(1, 4, size=(12, 12)).astype(np.uint8)
    pred = extract_components(SegMask(data=data, classes=3), origin=PREDICTION)
    raw = rng.random((12, 12, 3)).astype(np.float32) + 1e-3
    raw /= raw.sum(axis=2, keepdims=True)
    pm = ProbMap(data=raw)
    batch = featurize_image(pm, pred)
    for comp, fv in zip(pred.components, batch):
        single = featurize(comp, pm, pred)
        assert np.array_equal(single.values, fv.values)


def test_build_dataset_counts_and_targets():
    rng = np.random.default_rng(5)
    entries = []
    expected = 0
    for _ in range(2):
        g = rng.integers(0, 3, size=(10, 10)).astype(np.uint8)
        p = rng.integers(1, 3, size=(10, 10)).astype(np.uint8)
        gt = extract_components(SegMask(data=g, classes=2))
        pred = extract_components(SegMask(data=p, classes=2), origin=PREDICTION)
        raw = rng.random((10, 10, 2)).astype(np.float32) + 1e-3
        raw /= raw.sum(axis=2, keepdims=True)
        match = assign(gt, pred, tau=0.25)
        entries.append((ProbMap(data=raw), pred, match))
        expected += len(pred.components)
    data = build_dataset(entries)
    assert len(data) == expected
    # target bit must mirror the FP_o rule
    i = 0
    for probs, pred, match in entries:
        by_id = {s.component_id: s.value for s in match.pred_scores}
        for comp in pred.components:
            assert data.targets[i] == (0 if by_id[comp.id] <= 0.25 else 1)
            i += 1


def test_build_dataset_rejects_mixed_tau():
    g = np.ones((4, 4), dtype=np.uint8)
    gt = extract_components(SegMask(data=g, classes=1))
    pred = extract_components(SegMask(data=g, classes=1), origin=PREDICTION)
    pm = one_hot(SegMask(data=g, classes=1))
    entries = [(pm, pred, assign(gt, pred, tau=0.25)),
               (pm, pred, assign(gt, pred, tau=0.5))]
    with pytest.raises(MetaError):
        build_dataset(entries)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(7)
    x = np.column_stack([rng.normal(size=(10, N_FEATURES)), np.ones(10)])
    y = rng.integers(0, 2, size=10).astype(np.float64)
    w = rng.normal(scale=0.5, size=N_FEATURES + 1)
    _, grad = loss_and_grad(w, x, y, l2=1e-3)
    h = 1e-5
    worst = 0.0
    for i in range(len(w)):
        wp = w.copy()
        wm = w.copy()
        wp[i] += h
        wm[i] -= h
        lp, _ = loss_and_grad(wp, x, y, l2=1e-3)
        lm, _ = loss_and_grad(wm, x, y, l2=1e-3)
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(grad[i] - fd) / max(1e-3, abs(fd)))
    assert worst <= 1e-5


def test_separable_toy_reaches_full_accuracy():
    data = toy_dataset()
    model = train_meta(data)
    preds = (score_many(model, data.rows) > 0.5).astype(int)
    assert np.array_equal(preds, data.targets)


def test_loss_decreases_monotonically():
    model = train_meta(toy_dataset(seed=11))
    hist = np.array(model.loss_history)
    assert np.all(np.diff(hist) < 0)


def test_duplicated_dataset_same_weights():
    data = toy_dataset(n=40, seed=13)
    doubled = MetaDataset(rows=np.vstack([data.rows, data.rows]),
                          targets=np.concatenate([data.targets, data.targets]),
                          image_ids=data.image_ids * 2,
                          component_ids=data.component_ids * 2)
    w1 = train_meta(data).weights
    w2 = train_meta(doubled).weights
    assert np.allclose(w1, w2, rtol=0, atol=1e-9)


def test_degenerate_feature_weight_pinned():
    data = toy_dataset(n=30, seed=17)
    data.rows[:, 5] = 7.5  # constant column
    model = train_meta(data)
    assert model.weights[5] == 0.0
    assert model.feature_stds[5] == 1.0


def test_standardization_equivalence():
    data = toy_dataset(n=50, seed=19)
    model = train_meta(data)
    pre = MetaDataset(rows=(data.rows - data.rows.mean(axis=0)) / data.rows.std(axis=0),
                      targets=data.targets, image_ids=data.image_ids,
                      component_ids=data.component_ids)
    model_pre = train_meta(pre)
    s1 = score_many(model, data.rows)
    s2 = score_many(model_pre, pre.rows)
    assert np.allclose(s1, s2, atol=1e-9)


def test_balanced_class_weights_shift_fit():
    rng = np.random.default_rng(23)
    rows = rng.normal(size=(200, N_FEATURES))
    targets = np.zeros(200, dtype=np.int64)
    targets[:20] = 1  # rare positive class
    rows[targets == 1, 0] += 1.0
    data = MetaDataset(rows=rows, targets=targets,
                       image_ids=["i"] * 200, component_ids=list(range(200)))
    plain = train_meta(data)
    balanced = train_meta(data, TrainConfig(balance_classes=True))
    # balancing raises the intercept toward the rare class
    assert balanced.weights[-1] > plain.weights[-1]


def test_score_zero_weights_half():
    model = MetaModel(weights=np.zeros(N_FEATURES + 1),
                      feature_means=np.zeros(N_FEATURES),
                      feature_stds=np.ones(N_FEATURES),
                      config=TrainConfig())
    rng = np.random.default_rng(29)
    assert score(model, rng.normal(size=N_FEATURES)) == 0.5


def test_score_monotone_in_positive_weight():
    w = np.zeros(N_FEATURES + 1)
    w[0] = 2.0
    model = MetaModel(weights=w, feature_means=np.zeros(N_FEATURES),
                      feature_stds=np.ones(N_FEATURES), config=TrainConfig())
    base = np.zeros(N_FEATURES)
    lifted = base.copy()
    lifted[0] = 1.0
    assert score(model, lifted) > score(model, base)


def test_score_schema_mismatch():
    model = MetaModel(weights=np.zeros(N_FEATURES + 1),
                      feature_means=np.zeros(N_FEATURES),
                      feature_stds=np.ones(N_FEATURES), config=TrainConfig())
    with pytest.raises(MetaError):
        score(model, np.zeros(N_FEATURES + 2))


def test_train_error_paths():
    with pytest.raises(MetaError):
        train_meta(MetaDataset(rows=np.empty((0, N_FEATURES)),
                               targets=np.empty(0, dtype=np.int64),
                               image_ids=[], component_ids=[]))
    ones = MetaDataset(rows=np.ones((4, N_FEATURES)),
                       targets=np.ones(4, dtype=np.int64),
                       image_ids=["a"] * 4, component_ids=[1, 2, 3, 4])
    with pytest.raises(MetaError):
        train_meta(ones)
    bad = toy_dataset(n=10)
    bad.rows[0, 0] = np.nan
    with pytest.raises(MetaError):
        train_meta(bad)


def test_reliability_trivial_and_balanced():
    model = MetaModel(weights=np.zeros(N_FEATURES + 1),
                      feature_means=np.zeros(N_FEATURES),
                      feature_stds=np.ones(N_FEATURES), config=TrainConfig())
    rng = np.random.default_rng(31)
    n = 4000
    rows = rng.normal(size=(n, N_FEATURES))
    targets = rng.integers(0, 2, size=n).astype(np.int64)
    data = MetaDataset(rows=rows, targets=targets,
                       image_ids=["x"] * n, component_ids=list(range(n)))
    bins = reliability(model, data, bins=10)
    occupied = [b for b in bins if b.count]
    assert len(occupied) == 1
    assert occupied[0].mean_score == 0.5
    assert abs(occupied[0].accuracy - 0.5) <= 3 * binomial_sigma(0.5, n)
    with pytest.raises(MetaError):
        reliability(model, data, bins=1)


def test_dataset_csv_roundtrip(tmp_path):
    data = toy_dataset(n=12, seed=37)
    p = tmp_path / "meta.csv"
    data.save_csv(p)
    back = MetaDataset.load_csv(p)
    assert np.array_equal(back.rows, data.rows)
    assert np.array_equal(back.targets, data.targets)
    assert back.image_ids == data.image_ids
    assert back.component_ids == data.component_ids


def test_model_json_roundtrip():
    model = train_meta(toy_dataset(n=30, seed=41))
    back = MetaModel.from_json(model.to_json())
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.feature_means, model.feature_means)
    assert np.array_equal(back.feature_stds, model.feature_stds)
    assert back.config == model.config
    rng = np.random.default_rng(43)
    row = rng.normal(size=N_FEATURES)
    assert score(back, row) == score(model, row)


def test_feature_vector_validation():
    with pytest.raises(MetaError):
        FeatureVector(values=np.zeros(3)).validate()
    bad = np.zeros(N_FEATURES)
    bad[0] = np.inf
    with pytest.raises(MetaError):
        FeatureVector(values=bad).validate()
    assert len(FEATURE_NAMES) == N_FEATURES
