import numpy as np
import pytest

from nodestage.errors import FormatError, SchemaError, TrainingError
from nodestage.labels import SlideLabel
from nodestage.slide_classify import (FeatureVector, ForestModel, ForestParams, Node, best_split, confusion,
                                      extract_features, feature_names, load_model, model_bytes, predict,
                                      save_model, train_forest)
from nodestage.slide_store import ProbabilityMap

# Hand dataset: (f0, f1) -> label.
HAND_X = np.array([[1, 5], [2, 4], [3, 1], [4, 2], [5, 6], [6, 3]], dtype=float)
HAND_Y = np.array([0, 0, 1, 1, 2, 2])


def test_feature_names_order():
    names = feature_names("ext20")
    assert len(names) == 20 and len(feature_names("base16")) == 16
    assert names[:4] == ["t0.3_max_diameter_mm", "t0.3_max_area_mm2", "t0.3_lesion_count", "t0.3_total_area_mm2"]
    assert names[16] == "t0.3_negative_density"


def test_all_zero_map():
    fv = extract_features(ProbabilityMap(np.zeros((32, 32), np.float32), 0.5), "base16")
    assert fv.values.shape == (16,) and not fv.values.any()


def test_square_identical_across_thresholds():
    v = np.zeros((420, 420), np.float32)
    v[10:410, 10:410] = 1.0
    fv = extract_features(ProbabilityMap(v, 0.5)).values
    base = fv[:16].reshape(4, 4)
    assert (base == base[0]).all()
    assert base[0, 2] == 1
    assert base[0, 1] == pytest.approx(400 * 400 * 0.25e-6)
    assert base[0, 0] == pytest.approx((np.hypot(399, 399) + 1) * 0.5e-3)
    assert (fv[16:] == 0).all()


def test_threshold_monotonicity():
    v = np.zeros((60, 60), np.float32)
    v[20:40, 20:40] = 0.6
    base = extract_features(ProbabilityMap(v, 0.5), "base16").values.reshape(4, 4)
    assert (base[:2] > 0).all()
    assert (base[2:] == 0).all()


def test_negative_density():
    v = np.zeros((20, 20), np.float32)
    v[5:10, 5:10] = 0.95
    v[7, 7] = 0.4  # hole inside the lesion's box
    fv = extract_features(ProbabilityMap(v, 0.5)).values
    assert fv[16] == 0.0  # t=0.3 sees the whole square
    assert fv[17] == pytest.approx(1 / 25)


def test_hand_cart_tree():
    hp = ForestParams(n_trees=1, max_features=2, bootstrap=False, min_samples_leaf=2)
    tree = train_forest(HAND_X, HAND_Y, hp).trees[0]
    assert (tree.feature, tree.threshold) == (0, 2.5)
    assert tree.left.is_leaf and tree.left.counts.tolist() == [2, 0, 0, 0]
    right = tree.right
    assert (right.feature, right.threshold) == (0, 4.5)
    assert right.left.counts.tolist() == [0, 2, 0, 0]
    assert right.right.counts.tolist() == [0, 0, 2, 0]


def test_best_split_impurity():
    score, f, thr = best_split(HAND_X, HAND_Y, [0, 1], 1, 4)
    assert (f, thr) == (0, 2.5)
    assert score == pytest.approx(1 / 3)
    assert best_split(HAND_X, HAND_Y, [1], 1, 4)[1:] == (1, 2.5)


def test_separable_one_feature():
    X = np.arange(20, dtype=float)[:, None]
    y = (np.arange(20) >= 10).astype(int) * 3
    model = train_forest(X, y, ForestParams(n_trees=10, seed=1))
    preds = [int(predict(model, x)[0]) for x in X]
    assert preds == y.tolist()


def test_training_errors():
    with pytest.raises(TrainingError):
        train_forest(HAND_X, np.zeros(6, int))
    with pytest.raises(TrainingError):
        train_forest(HAND_X[:1], HAND_Y[:1])


def test_vote_tie_goes_to_lower_class():
    trees = [Node(counts=np.array([1.0, 0, 0, 0])), Node(counts=np.array([0, 0, 0, 1.0]))]
    model = ForestModel(trees, 2, "custom", ForestParams(n_trees=2))
    label, dist = predict(model, np.zeros(2))
    assert label is SlideLabel.NEGATIVE
    assert dist.tolist() == [0.5, 0, 0, 0.5]


def test_single_tree_prediction_is_leaf_class():
    model = train_forest(HAND_X, HAND_Y, ForestParams(n_trees=1, max_features=2, bootstrap=False))
    assert int(predict(model, np.array([5.5, 0.0]))[0]) == 2


def test_schema_mismatch():
    rng = np.random.default_rng(0)
    X = rng.random((12, 16))
    y = np.arange(12) % 3
    model = train_forest(X, y, ForestParams(n_trees=3), "base16")
    with pytest.raises(SchemaError):
        predict(model, FeatureVector(np.zeros(20), "ext20"))
    with pytest.raises(SchemaError):
        FeatureVector(np.zeros(5), "base16")


def test_confusion_shapes():
    X = np.arange(8, dtype=float)[:, None]
    y = [0, 0, 1, 1, 2, 2, 3, 3]
    model = train_forest(X, y, ForestParams(n_trees=1, bootstrap=False, min_samples_leaf=1))
    cm = confusion(model, X, y)
    assert (cm.counts == np.diag([2, 2, 2, 2])).all()
    const = ForestModel([Node(counts=np.array([1.0, 0, 0, 0]))], 1, "custom")
    cm = confusion(const, X, y)
    assert cm.counts[:, 1:].sum() == 0 and cm.counts[:, 0].tolist() == [2, 2, 2, 2]


def test_model_bytes_deterministic_and_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.random((30, 20))
    y = rng.integers(0, 4, 30)
    hp = ForestParams(n_trees=7, seed=42)
    a = train_forest(X, y, hp, "ext20")
    b = train_forest(X, y, hp, "ext20")
    assert model_bytes(a) == model_bytes(b)
    path = tmp_path / "m.rfor"
    save_model(a, path)
    back = load_model(path)
    assert model_bytes(back) == model_bytes(a)
    for x in X:
        assert predict(back, x)[0] == predict(a, x)[0]


def test_model_format_errors(tmp_path):
    model = train_forest(HAND_X, HAND_Y, ForestParams(n_trees=2))
    data = model_bytes(model)
    p = tmp_path / "bad.rfor"
    p.write_bytes(b"XFOR" + data[4:])
    with pytest.raises(FormatError):
        load_model(p)
    p.write_bytes(data[:-3])
    with pytest.raises(FormatError):
        load_model(p)
