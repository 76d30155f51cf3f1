import numpy as np
import pytest

from kmerdiff.encode import SparseFeatureMatrix
from kmerdiff.models import (
    ModelError,
    TrainConfig,
    Tree,
    TreeEnsembleModel,
    fit_decision_tree,
    fit_gbdt,
    fit_random_forest,
    load_model,
    predict_label,
    predict_margin,
    predict_proba,
    save_model,
)
from kmerdiff.sampling import LabeledDataset


def make_dataset(dense, labels):
    dense = np.asarray(dense, dtype=np.float64)
    return LabeledDataset(
        features=SparseFeatureMatrix.from_dense(dense),
        labels=np.asarray(labels),
        ids=[f"r{i}" for i in range(dense.shape[0])],
    )


def random_dataset(rng, n, p, distinct_rows=False):
    dense = rng.normal(size=(n, p))
    if distinct_rows:
        dense[:, 0] = rng.permutation(n)  # guarantees no duplicate feature rows
    labels = rng.integers(0, 2, n)
    return make_dataset(dense, labels), dense, labels


def leaf_tree(p1):
    return Tree(
        feature=np.array([-1]),
        threshold=np.array([0.0]),
        left=np.array([-1]),
        right=np.array([-1]),
        cover=np.array([1.0]),
        value=np.array([[1.0 - p1, p1]]),
    )


# --- decision tree -----------------------------------------------------------


def test_tree_separable_single_split():
    ds = make_dataset([[1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1])
    model = fit_decision_tree(ds)
    tree = model.trees[0]
    assert tree.n_nodes == 3
    assert tree.feature[0] == 0
    assert tree.threshold[0] == pytest.approx(2.5)
    assert np.array_equal(predict_label(model, ds.features), [0, 0, 1, 1])


def test_tree_single_class_is_leaf():
    ds = make_dataset([[1.0], [2.0], [5.0]], [1, 1, 1])
    model = fit_decision_tree(ds)
    assert model.trees[0].n_nodes == 1
    assert predict_proba(model, ds.features).tolist() == [1.0, 1.0, 1.0]


def test_tree_perfect_fit_on_distinct_rows():
    rng = np.random.default_rng(3)
    for trial in range(5):
        ds, _, labels = random_dataset(rng, 40, 4, distinct_rows=True)
        model = fit_decision_tree(ds)
        assert np.array_equal(predict_label(model, ds.features), labels)


def brute_force_best_gini_gain(dense, labels, msl=1):
    n = len(labels)

    def weighted_impurity(mask):
        size = int(mask.sum())
        if size == 0:
            return 0.0
        ones = int(labels[mask].sum())
        return size - (ones**2 + (size - ones) ** 2) / size

    parent = weighted_impurity(np.ones(n, dtype=bool))
    best = 0.0
    for c in range(dense.shape[1]):
        vals = np.unique(dense[:, c])
        for a, b in zip(vals[:-1], vals[1:]):
            left = dense[:, c] <= (a + b) / 2
            if left.sum() < msl or (~left).sum() < msl:
                continue
            gain = parent - weighted_impurity(left) - weighted_impurity(~left)
            best = max(best, gain)
    return best


def test_tree_root_split_is_gini_optimal():
    rng = np.random.default_rng(7)
    for trial in range(10):
        ds, dense, labels = random_dataset(rng, 25, 3)
        model = fit_decision_tree(ds)
        tree = model.trees[0]
        if tree.n_nodes == 1:
            assert brute_force_best_gini_gain(dense, labels) == pytest.approx(0.0, abs=1e-9)
            continue
        c, thr = int(tree.feature[0]), float(tree.threshold[0])
        left = dense[:, c] <= thr

        def weighted_impurity(mask):
            size = int(mask.sum())
            ones = int(labels[mask].sum())
            return size - (ones**2 + (size - ones) ** 2) / size

        chosen = (
            weighted_impurity(np.ones(len(labels), dtype=bool))
            - weighted_impurity(left)
            - weighted_impurity(~left)
        )
        assert chosen == pytest.approx(brute_force_best_gini_gain(dense, labels), abs=1e-9)


def test_tree_tie_breaks_to_lowest_feature():
    col = np.array([1.0, 2.0, 3.0, 4.0])
    dense = np.column_stack([col, col])  # identical gains on both columns
    model = fit_decision_tree(make_dataset(dense, [0, 0, 1, 1]))
    assert model.trees[0].feature[0] == 0


def test_tree_respects_max_depth_and_msl():
    rng = np.random.default_rng(11)
    ds, _, _ = random_dataset(rng, 60, 3)
    shallow = fit_decision_tree(ds, TrainConfig(max_depth=2, n_trees=1))
    assert shallow.trees[0].max_depth() <= 2
    chunky = fit_decision_tree(ds, TrainConfig(min_samples_leaf=10, n_trees=1))
    tree = chunky.trees[0]
    leaves = tree.cover[tree.feature == -1]
    assert leaves.min() >= 10


def test_empty_dataset_rejected():
    empty = LabeledDataset(
        features=SparseFeatureMatrix.from_rows([], 2), labels=np.array([]), ids=[]
    )
    for fit in (fit_decision_tree, fit_random_forest, fit_gbdt):
        with pytest.raises(ModelError):
            fit(empty)


# --- random forest -----------------------------------------------------------


def test_forest_one_row_equals_tree():
    ds = make_dataset([[3.0, 1.0]], [1])
    forest = fit_random_forest(ds, TrainConfig(n_trees=1, seed=5))
    tree = fit_decision_tree(ds)
    probe = ds.features
    assert np.array_equal(predict_proba(forest, probe), predict_proba(tree, probe))


def test_forest_probability_is_exact_tree_mean():
    rng = np.random.default_rng(13)
    ds, _, _ = random_dataset(rng, 50, 5)
    model = fit_random_forest(ds, TrainConfig(n_trees=7, seed=1))
    probs = predict_proba(model, ds.features)
    per_tree = []
    for tree in model.trees:
        solo = TreeEnsembleModel(
            kind="decision_tree", trees=[tree], config=model.config, n_cols=model.n_cols
        )
        per_tree.append(predict_proba(solo, ds.features))
    assert np.array_equal(probs, np.mean(per_tree, axis=0))


def test_forest_thread_count_invariance(tmp_path):
    rng = np.random.default_rng(17)
    ds, _, _ = random_dataset(rng, 80, 6)
    cfg = TrainConfig(n_trees=12, seed=9)
    single = fit_random_forest(ds, cfg, threads=1)
    threaded = fit_random_forest(ds, cfg, threads=8)
    a, b = tmp_path / "a.model", tmp_path / "b.model"
    save_model(single, a)
    save_model(threaded, b)
    assert a.read_bytes() == b.read_bytes()


def test_forest_seed_changes_model():
    rng = np.random.default_rng(19)
    ds, _, _ = random_dataset(rng, 60, 6)
    m1 = fit_random_forest(ds, TrainConfig(n_trees=5, seed=1))
    m2 = fit_random_forest(ds, TrainConfig(n_trees=5, seed=2))
    p1, p2 = predict_proba(m1, ds.features), predict_proba(m2, ds.features)
    assert not np.array_equal(p1, p2)


def test_forest_default_mtry_is_sqrt():
    ds = make_dataset(np.eye(4), [0, 1, 0, 1])
    model = fit_random_forest(ds, TrainConfig(n_trees=2, seed=0))
    assert model.config.mtry == 2  # ceil(sqrt(4))


# --- gbdt ----------------------------------------------------------------------


def test_gbdt_one_round_separable():
    ds = make_dataset([[1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1])
    model = fit_gbdt(ds, TrainConfig.gbdt_defaults(n_trees=1, max_depth=1))
    assert np.array_equal(predict_label(model, ds.features), [0, 0, 1, 1])


def test_gbdt_requires_both_classes():
    ds = make_dataset([[1.0], [2.0]], [1, 1])
    with pytest.raises(ModelError, match="both classes"):
        fit_gbdt(ds)


def test_gbdt_zero_rounds_equiv_lr_zero_prior():
    ds = make_dataset([[1.0], [2.0], [3.0], [4.0]], [0, 1, 1, 1])
    model = fit_gbdt(ds, TrainConfig.gbdt_defaults(n_trees=3, learning_rate=0.0))
    probs = predict_proba(model, ds.features)
    assert probs == pytest.approx(np.full(4, 0.75))


def test_gbdt_training_loss_non_increasing():
    rng = np.random.default_rng(23)
    ds, _, labels = random_dataset(rng, 60, 5)
    model = fit_gbdt(ds, TrainConfig.gbdt_defaults(n_trees=25, learning_rate=0.1, max_depth=3))
    losses = []
    for upto in range(len(model.trees) + 1):
        partial = TreeEnsembleModel(
            kind="gbdt",
            trees=model.trees[:upto],
            config=model.config,
            n_cols=model.n_cols,
            base_score=model.base_score,
        )
        margin = predict_margin(partial, ds.features)
        losses.append(float(np.mean(np.log1p(np.exp(-np.where(labels == 1, margin, -margin))))))
    diffs = np.diff(losses)
    assert np.all(diffs <= 1e-9)


def test_gbdt_margin_matches_manual_sum():
    rng = np.random.default_rng(29)
    ds, _, _ = random_dataset(rng, 40, 4)
    model = fit_gbdt(ds, TrainConfig.gbdt_defaults(n_trees=5, max_depth=2))
    margin = predict_margin(model, ds.features)
    probs = predict_proba(model, ds.features)
    assert probs == pytest.approx(1.0 / (1.0 + np.exp(-margin)))


# --- prediction plumbing --------------------------------------------------------


def test_vote_mean_and_strict_threshold():
    features = SparseFeatureMatrix.from_dense(np.zeros((1, 1)))
    voting = TreeEnsembleModel(
        kind="random_forest",
        trees=[leaf_tree(1.0), leaf_tree(0.0)],
        config=TrainConfig(n_trees=2),
        n_cols=1,
    )
    assert predict_proba(voting, features).tolist() == [0.5]
    assert predict_label(voting, features).tolist() == [0]  # 0.5 is not > 0.5
    slightly = TreeEnsembleModel(
        kind="random_forest",
        trees=[leaf_tree(0.51)],
        config=TrainConfig(n_trees=1),
        n_cols=1,
    )
    assert predict_label(slightly, features).tolist() == [1]


def test_routing_boundary_goes_left():
    tree = Tree(
        feature=np.array([0, -1, -1]),
        threshold=np.array([2.5, 0.0, 0.0]),
        left=np.array([1, -1, -1]),
        right=np.array([2, -1, -1]),
        cover=np.array([4.0, 2.0, 2.0]),
        value=np.array([[0.5, 0.5], [1.0, 0.0], [0.0, 1.0]]),
    )
    model = TreeEnsembleModel(kind="decision_tree", trees=[tree], config=TrainConfig(), n_cols=1)
    probe = SparseFeatureMatrix.from_dense(np.array([[2.5], [2.5000001]]))
    assert predict_proba(model, probe).tolist() == [0.0, 1.0]


def test_column_mismatch_names_hashes():
    ds = make_dataset([[1.0], [2.0]], [0, 1])
    ds.features.dictionary_hash = "aaa111"
    model = fit_decision_tree(ds)
    probe = SparseFeatureMatrix.from_dense(np.zeros((1, 3)))
    probe.dictionary_hash = "bbb222"
    with pytest.raises(ModelError, match="aaa111"):
        predict_proba(model, probe)


def test_dictionary_hash_mismatch_rejected():
    ds = make_dataset([[1.0], [2.0]], [0, 1])
    ds.features.dictionary_hash = "aaa111"
    model = fit_decision_tree(ds)
    probe = SparseFeatureMatrix.from_dense(np.array([[1.5]]))
    probe.dictionary_hash = "bbb222"
    with pytest.raises(ModelError, match="bbb222"):
        predict_proba(model, probe)


# --- persistence ----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["decision_tree", "random_forest", "gbdt"])
def test_save_load_round_trip(tmp_path, kind):
    rng = np.random.default_rng(31)
    ds, _, _ = random_dataset(rng, 50, 4)
    ds.features.dictionary_hash = "cafe01"
    if kind == "decision_tree":
        model = fit_decision_tree(ds)
    elif kind == "random_forest":
        model = fit_random_forest(ds, TrainConfig(n_trees=4, seed=3))
    else:
        model = fit_gbdt(ds, TrainConfig.gbdt_defaults(n_trees=4))
    path = tmp_path / "m.model"
    save_model(model, path)
    back = load_model(path)
    assert back.kind == model.kind
    assert back.config == model.config
    assert back.dictionary_hash == "cafe01"
    probe = ds.features
    assert np.array_equal(predict_proba(back, probe), predict_proba(model, probe))


def test_save_is_stable_bytes(tmp_path):
    ds = make_dataset([[1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1])
    model = fit_decision_tree(ds)
    a, b = tmp_path / "a.model", tmp_path / "b.model"
    save_model(model, a)
    save_model(load_model(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_load_rejects_bad_files(tmp_path):
    ds = make_dataset([[1.0], [2.0], [3.0], [4.0]], [0, 0, 1, 1])
    model = fit_decision_tree(ds)
    path = tmp_path / "m.model"
    save_model(model, path)
    text = path.read_text()

    truncated = tmp_path / "t.model"
    truncated.write_text(text[: len(text) // 2])
    with pytest.raises(ModelError):
        load_model(truncated)

    wrong_version = tmp_path / "v.model"
    wrong_version.write_text(text.replace("kmerdiff-model v1", "kmerdiff-model v99", 1))
    with pytest.raises(ModelError, match="version"):
        load_model(wrong_version)

    not_model = tmp_path / "n.model"
    not_model.write_text("hello\nworld\n")
    with pytest.raises(ModelError):
        load_model(not_model)


# --- config validation -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ModelError):
        TrainConfig(criterion="entropy")
    with pytest.raises(ModelError):
        TrainConfig(learning_rate=1.5)
    with pytest.raises(ModelError):
        TrainConfig(n_trees=0)
    with pytest.raises(ModelError):
        TrainConfig(mtry=0)
    with pytest.raises(ModelError):
        TrainConfig(max_depth=0)
