"""From-scratch tree learners over sparse feature rows: a CART decision
tree, a bagged random forest, and second-order gradient-boosted trees
with logistic loss.

All three share one exact split search: candidate thresholds are
midpoints between consecutive distinct sorted values, scored by Gini
impurity reduction (classification) or by the second-order gain
G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam) (boosting). Ties break
to the lower feature id, then the lower threshold, so a (data, config,
seed) triple pins every model bit-for-bit regardless of thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from kmerdiff.encode import SparseFeatureMatrix
from kmerdiff.sampling import LabeledDataset

MODEL_FORMAT_VERSION = 1
LEAF = -1


class ModelError(ValueError):
    pass


def _sigmoid(margin: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(margin, -500.0, 500.0)))


@dataclass(frozen=True)
class TrainConfig:
    criterion: str = "gini"
    max_depth: int | None = None
    min_samples_leaf: int = 1
    n_trees: int = 200
    mtry: int | None = None
    learning_rate: float = 0.1
    l2_leaf_penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.criterion != "gini":
            raise ModelError(f"unsupported split criterion {self.criterion!r}")
        if self.max_depth is not None and self.max_depth < 1:
            raise ModelError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ModelError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.n_trees < 1:
            raise ModelError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.mtry is not None and self.mtry < 1:
            raise ModelError(f"mtry must be >= 1, got {self.mtry}")
        if not 0.0 <= self.learning_rate <= 1.0:
            raise ModelError(f"learning_rate must be in [0, 1], got {self.learning_rate}")
        if self.l2_leaf_penalty < 0.0:
            raise ModelError(f"l2_leaf_penalty must be >= 0, got {self.l2_leaf_penalty}")

    @classmethod
    def forest_defaults(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def gbdt_defaults(cls, **overrides) -> "TrainConfig":
        merged = {"max_depth": 6, "learning_rate": 0.1, "l2_leaf_penalty": 1.0}
        merged.update(overrides)
        return cls(**merged)


@dataclass
class Tree:
    """Flat node arrays. feature[i] == -1 marks a leaf; split nodes route
    value <= threshold to left. value holds (p_class0, p_class1) rows for
    classifier trees and a single score column for boosted trees. cover
    is the number of training rows that reached the node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    cover: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature >= 0])


@dataclass
class TreeEnsembleModel:
    kind: str  # decision_tree | random_forest | gbdt
    trees: list[Tree]
    config: TrainConfig
    n_cols: int
    base_score: float = 0.0
    dictionary_hash: str | None = None

    def used_features(self) -> np.ndarray:
        if not self.trees:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([t.used_features() for t in self.trees]))


# --- split search ------------------------------------------------------------


class _NodeData:
    """Per-fit workspace: CSC view of the training matrix plus a scatter
    buffer, so a node's column values densify in O(nnz(col) + node size)."""

    def __init__(self, X: SparseFeatureMatrix):
        self.n_rows = X.n_rows
        self.n_cols = X.n_cols
        self.col_indptr, self.col_rows, self.col_vals = X.to_csc()
        self.buffer = np.zeros(X.n_rows, dtype=np.float64)

    def column(self, c: int, row_ids: np.ndarray) -> np.ndarray:
        lo, hi = self.col_indptr[c], self.col_indptr[c + 1]
        rows, vals = self.col_rows[lo:hi], self.col_vals[lo:hi]
        self.buffer[rows] = vals
        out = self.buffer[row_ids].copy()
        self.buffer[rows] = 0.0
        return out

    def local(self) -> "_NodeData":
        """Same CSC arrays with a private scatter buffer, one per worker thread."""
        clone = object.__new__(_NodeData)
        clone.n_rows, clone.n_cols = self.n_rows, self.n_cols
        clone.col_indptr, clone.col_rows, clone.col_vals = (
            self.col_indptr,
            self.col_rows,
            self.col_vals,
        )
        clone.buffer = np.zeros(self.n_rows, dtype=np.float64)
        return clone


def _midpoint(a: float, b: float) -> float:
    mid = (a + b) / 2.0
    if mid >= b:  # adjacent floats can round the midpoint up onto b
        mid = np.nextafter(b, a)
    return float(mid)


def _best_gini_split(x: np.ndarray, y: np.ndarray, msl: int) -> tuple[float, float] | None:
    """Best (weighted-impurity reduction, threshold) for one column, or
    None when no valid boundary improves on the parent."""
    m = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    ones = np.cumsum(ys)[:-1]
    n_left = np.arange(1, m)
    valid = xs[:-1] < xs[1:]
    if msl > 1:
        valid &= (n_left >= msl) & (m - n_left >= msl)
    if not valid.any():
        return None
    n_right = m - n_left
    ones_r = ones[-1] + ys[-1] - ones
    w_left = n_left - (ones.astype(np.float64) ** 2 + (n_left - ones) ** 2) / n_left
    w_right = n_right - (ones_r.astype(np.float64) ** 2 + (n_right - ones_r) ** 2) / n_right
    score = np.where(valid, w_left + w_right, np.inf)
    best = int(np.argmin(score))  # first minimum: lowest threshold wins ties
    total_ones = ones[-1] + ys[-1]
    w_parent = m - (float(total_ones) ** 2 + float(m - total_ones) ** 2) / m
    gain = w_parent - float(score[best])
    if gain <= 0.0:
        return None
    return gain, _midpoint(float(xs[best]), float(xs[best + 1]))


def _best_grad_split(
    x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, msl: int
) -> tuple[float, float] | None:
    m = x.size
    order = np.argsort(x, kind="stable")
    xs = x[order]
    gs = np.cumsum(g[order])[:-1]
    hs = np.cumsum(h[order])[:-1]
    valid = xs[:-1] < xs[1:]
    if msl > 1:
        n_left = np.arange(1, m)
        valid &= (n_left >= msl) & (m - n_left >= msl)
    if not valid.any():
        return None
    g_total, h_total = float(np.sum(g)), float(np.sum(h))
    gain = (
        gs**2 / (hs + lam)
        + (g_total - gs) ** 2 / (h_total - hs + lam)
        - g_total**2 / (h_total + lam)
    ) * 0.5
    gain = np.where(valid, gain, -np.inf)
    best = int(np.argmax(gain))
    if gain[best] <= 0.0:
        return None
    return float(gain[best]), _midpoint(float(xs[best]), float(xs[best + 1]))


def _grow_tree(
    data: _NodeData,
    row_ids: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None,
    y: np.ndarray | None = None,
    g: np.ndarray | None = None,
    h: np.ndarray | None = None,
) -> Tree:
    """Grow one tree in deterministic preorder. Classification mode when y
    is given, second-order regression mode when (g, h) are given."""
    classifier = y is not None
    lam = config.l2_leaf_penalty
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    cover: list[float] = []
    value: list = []

    work = [(row_ids, 0, -1, False)]
    while work:
        rows, depth, parent, is_left = work.pop()
        node_id = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node_id
            else:
                right[parent] = node_id
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        cover.append(float(rows.size))
        if classifier:
            n1 = float(np.sum(y[rows]))
            value.append((1.0 - n1 / rows.size, n1 / rows.size))
            pure = n1 == 0.0 or n1 == rows.size
        else:
            g_sum, h_sum = float(np.sum(g[rows])), float(np.sum(h[rows]))
            value.append(-g_sum / (h_sum + lam))
            pure = False

        if pure or rows.size < 2 * config.min_samples_leaf or rows.size < 2:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue

        if rng is not None and config.mtry is not None and config.mtry < data.n_cols:
            candidates = np.sort(rng.choice(data.n_cols, size=config.mtry, replace=False))
        else:
            candidates = np.arange(data.n_cols)

        best_gain, best_col, best_thr = 0.0, -1, 0.0
        for c in candidates:
            x = data.column(int(c), rows)
            found = (
                _best_gini_split(x, y[rows], config.min_samples_leaf)
                if classifier
                else _best_grad_split(x, g[rows], h[rows], lam, config.min_samples_leaf)
            )
            if found is not None and found[0] > best_gain:
                best_gain, best_col, best_thr = found[0], int(c), found[1]
        if best_col < 0:
            continue

        x = data.column(best_col, rows)
        go_left = x <= best_thr
        feature[node_id] = best_col
        threshold[node_id] = best_thr
        # push right first so the left child pops next: preorder layout
        work.append((rows[~go_left], depth + 1, node_id, False))
        work.append((rows[go_left], depth + 1, node_id, True))

    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        cover=np.asarray(cover, dtype=np.float64),
        value=np.asarray(value, dtype=np.float64),
    )


# --- fitting -----------------------------------------------------------------


def _check_nonempty(train: LabeledDataset) -> None:
    if len(train) == 0:
        raise ModelError("cannot fit on an empty dataset")


def fit_decision_tree(train: LabeledDataset, config: TrainConfig | None = None) -> TreeEnsembleModel:
    """Single CART tree on all features, no bootstrap."""
    _check_nonempty(train)
    config = config or TrainConfig(n_trees=1)
    data = _NodeData(train.features)
    tree = _grow_tree(data, np.arange(len(train)), config, None, y=train.labels)
    return TreeEnsembleModel(
        kind="decision_tree",
        trees=[tree],
        config=config,
        n_cols=train.features.n_cols,
        dictionary_hash=train.features.dictionary_hash,
    )


def fit_random_forest(
    train: LabeledDataset, config: TrainConfig | None = None, threads: int = 1
) -> TreeEnsembleModel:
    """Bagged CART trees: each tree sees a bootstrap resample and draws
    mtry candidate features per node from its own derived seed stream."""
    _check_nonempty(train)
    config = config or TrainConfig()
    if config.mtry is None:
        config = replace(config, mtry=max(1, math.isqrt(train.features.n_cols - 1) + 1 if train.features.n_cols > 1 else 1))
    data = _NodeData(train.features)
    n = len(train)
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)

    def build(i: int) -> Tree:
        rng = np.random.default_rng(seeds[i])
        rows = rng.integers(0, n, size=n)
        return _grow_tree(data.local(), rows, config, rng, y=train.labels)

    if threads <= 1:
        trees = [build(i) for i in range(config.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(build, range(config.n_trees)))
    return TreeEnsembleModel(
        kind="random_forest",
        trees=trees,
        config=config,
        n_cols=train.features.n_cols,
        dictionary_hash=train.features.dictionary_hash,
    )


def fit_gbdt(train: LabeledDataset, config: TrainConfig | None = None) -> TreeEnsembleModel:
    """Second-order boosting with logistic loss. Every round fits one
    regression tree to the current gradients g = p - y and hessians
    h = p(1 - p); leaves score -G/(H + lambda)."""
    _check_nonempty(train)
    config = config or TrainConfig.gbdt_defaults()
    y = train.labels.astype(np.float64)
    pos = float(y.sum())
    if pos == 0.0 or pos == y.size:
        raise ModelError("boosting requires both classes in the training data")
    base_score = math.log(pos / (y.size - pos))
    data = _NodeData(train.features)
    all_rows = np.arange(len(train))
    margin = np.full(len(train), base_score)
    trees = []
    for _ in range(config.n_trees):
        p = _sigmoid(margin)
        tree = _grow_tree(data, all_rows, config, None, g=p - y, h=p * (1.0 - p))
        trees.append(tree)
        margin += config.learning_rate * _tree_scores(tree, data, all_rows)
    return TreeEnsembleModel(
        kind="gbdt",
        trees=trees,
        config=config,
        n_cols=train.features.n_cols,
        base_score=base_score,
        dictionary_hash=train.features.dictionary_hash,
    )


def _tree_scores(tree: Tree, data: _NodeData, rows: np.ndarray) -> np.ndarray:
    """Leaf value per row, routed through the CSC workspace."""
    cur = np.zeros(rows.size, dtype=np.int64)
    while True:
        internal = tree.feature[cur] >= 0
        if not internal.any():
            return tree.value[cur]
        sub = np.flatnonzero(internal)
        # group by feature so each column densifies once per level
        feats = tree.feature[cur[sub]]
        vals = np.empty(sub.size)
        for c in np.unique(feats):
            mask = feats == c
            vals[mask] = data.column(int(c), rows[sub[mask]])
        go_left = vals <= tree.threshold[cur[sub]]
        cur[sub] = np.where(go_left, tree.left[cur[sub]], tree.right[cur[sub]])


# --- prediction --------------------------------------------------------------


def _densify_used(model: TreeEnsembleModel, features: SparseFeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
    used = model.used_features()
    remap = np.zeros(model.n_cols, dtype=np.int64)
    remap[used] = np.arange(used.size)
    dense = features.select_columns(used).to_dense() if used.size else np.zeros((features.n_rows, 0))
    return dense, remap


def _route_to_leaves(tree: Tree, dense: np.ndarray, remap: np.ndarray) -> np.ndarray:
    n = dense.shape[0]
    cur = np.zeros(n, dtype=np.int64)
    while True:
        feats = tree.feature[cur]
        internal = feats >= 0
        if not internal.any():
            return cur
        sub = np.flatnonzero(internal)
        vals = dense[sub, remap[feats[sub]]]
        go_left = vals <= tree.threshold[cur[sub]]
        cur[sub] = np.where(go_left, tree.left[cur[sub]], tree.right[cur[sub]])


def _check_compatible(model: TreeEnsembleModel, features: SparseFeatureMatrix) -> None:
    if features.n_cols != model.n_cols:
        raise ModelError(
            f"feature space mismatch: model has {model.n_cols} columns "
            f"(dictionary {model.dictionary_hash or 'unbound'}), input has "
            f"{features.n_cols} (dictionary {features.dictionary_hash or 'unbound'})"
        )
    if (
        model.dictionary_hash is not None
        and features.dictionary_hash is not None
        and model.dictionary_hash != features.dictionary_hash
    ):
        raise ModelError(
            f"dictionary mismatch: model bound to {model.dictionary_hash}, "
            f"input encoded with {features.dictionary_hash}"
        )


def predict_proba(model: TreeEnsembleModel, features: SparseFeatureMatrix) -> np.ndarray:
    """Probability of class 1 per row."""
    _check_compatible(model, features)
    dense, remap = _densify_used(model, features)
    if model.kind in ("decision_tree", "random_forest"):
        acc = np.zeros(features.n_rows)
        for tree in model.trees:
            acc += tree.value[_route_to_leaves(tree, dense, remap), 1]
        return acc / len(model.trees)
    if model.kind == "gbdt":
        margin = np.full(features.n_rows, model.base_score)
        for tree in model.trees:
            margin += model.config.learning_rate * tree.value[_route_to_leaves(tree, dense, remap)]
        return _sigmoid(margin)
    raise ModelError(f"unknown model kind {model.kind!r}")


def predict_margin(model: TreeEnsembleModel, features: SparseFeatureMatrix) -> np.ndarray:
    """Raw additive score: mean tree probability for forests, log-odds
    margin for gbdt. This is the quantity SHAP decomposes."""
    _check_compatible(model, features)
    dense, remap = _densify_used(model, features)
    if model.kind in ("decision_tree", "random_forest"):
        acc = np.zeros(features.n_rows)
        for tree in model.trees:
            acc += tree.value[_route_to_leaves(tree, dense, remap), 1]
        return acc / len(model.trees)
    margin = np.full(features.n_rows, model.base_score)
    for tree in model.trees:
        margin += model.config.learning_rate * tree.value[_route_to_leaves(tree, dense, remap)]
    return margin


def predict_label(
    model: TreeEnsembleModel, features: SparseFeatureMatrix, threshold: float = 0.5
) -> np.ndarray:
    """Class 1 iff probability strictly exceeds the threshold."""
    return (predict_proba(model, features) > threshold).astype(np.int64)


# --- persistence -------------------------------------------------------------


def _format_config(config: TrainConfig) -> str:
    parts = []
    for key in (
        "criterion",
        "max_depth",
        "min_samples_leaf",
        "n_trees",
        "mtry",
        "learning_rate",
        "l2_leaf_penalty",
        "seed",
    ):
        val = getattr(config, key)
        parts.append(f"{key}=-" if val is None else f"{key}={val!r}")
    return " ".join(parts)


def _parse_config(text: str) -> TrainConfig:
    fields = {}
    for part in text.split():
        key, _, raw = part.partition("=")
        if raw == "-":
            fields[key] = None
        elif key == "criterion":
            fields[key] = raw.strip("'")
        elif key in ("learning_rate", "l2_leaf_penalty"):
            fields[key] = float(raw)
        else:
            fields[key] = int(raw)
    return TrainConfig(**fields)


def save_model(model: TreeEnsembleModel, path: str | Path) -> None:
    """Versioned line-oriented text; float fields use repr so load is an
    exact inverse."""
    lines = [
        f"kmerdiff-model v{MODEL_FORMAT_VERSION}",
        f"kind: {model.kind}",
        f"n_cols: {model.n_cols}",
        f"dictionary_hash: {model.dictionary_hash or '-'}",
        f"base_score: {model.base_score!r}",
        f"config: {_format_config(model.config)}",
        f"n_trees: {len(model.trees)}",
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"tree {t} nodes {tree.n_nodes}")
        two_col = tree.value.ndim == 2
        for i in range(tree.n_nodes):
            val = (
                f"{float(tree.value[i, 0])!r},{float(tree.value[i, 1])!r}"
                if two_col
                else f"{float(tree.value[i])!r}"
            )
            lines.append(
                f"node {i} feature {int(tree.feature[i])} threshold {float(tree.threshold[i])!r} "
                f"left {int(tree.left[i])} right {int(tree.right[i])} "
                f"cover {float(tree.cover[i])!r} value {val}"
            )
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> TreeEnsembleModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("kmerdiff-model v"):
        raise ModelError(f"{path}: not a model file")
    version = lines[0].removeprefix("kmerdiff-model v")
    if version != str(MODEL_FORMAT_VERSION):
        raise ModelError(
            f"{path}: format version {version} unsupported (expected {MODEL_FORMAT_VERSION})"
        )
    if not lines or lines[-1] != "end":
        raise ModelError(f"{path}: truncated model file (missing end marker)")

    def header(idx: int, key: str) -> str:
        if not lines[idx].startswith(f"{key}: "):
            raise ModelError(f"{path}: expected {key!r} on line {idx + 1}")
        return lines[idx].split(": ", 1)[1]

    kind = header(1, "kind")
    n_cols = int(header(2, "n_cols"))
    hash_raw = header(3, "dictionary_hash")
    base_score = float(header(4, "base_score"))
    config = _parse_config(header(5, "config"))
    n_trees = int(header(6, "n_trees"))
    trees = []
    idx = 7
    try:
        for t in range(n_trees):
            tag, t_id, word, n_nodes = lines[idx].split()
            if tag != "tree" or int(t_id) != t or word != "nodes":
                raise ModelError(f"{path}: malformed tree header on line {idx + 1}")
            n_nodes = int(n_nodes)
            idx += 1
            feature = np.empty(n_nodes, dtype=np.int64)
            threshold = np.empty(n_nodes, dtype=np.float64)
            left = np.empty(n_nodes, dtype=np.int64)
            right = np.empty(n_nodes, dtype=np.int64)
            cover = np.empty(n_nodes, dtype=np.float64)
            values = []
            for i in range(n_nodes):
                parts = lines[idx].split()
                if parts[0] != "node" or int(parts[1]) != i:
                    raise ModelError(f"{path}: malformed node on line {idx + 1}")
                fields = dict(zip(parts[2::2], parts[3::2]))
                feature[i] = int(fields["feature"])
                threshold[i] = float(fields["threshold"])
                left[i] = int(fields["left"])
                right[i] = int(fields["right"])
                cover[i] = float(fields["cover"])
                values.append(tuple(float(v) for v in fields["value"].split(",")))
                idx += 1
            value = np.asarray(
                [v[0] if len(v) == 1 else v for v in values], dtype=np.float64
            )
            trees.append(
                Tree(feature=feature, threshold=threshold, left=left, right=right, cover=cover, value=value)
            )
    except (IndexError, KeyError, ValueError) as err:
        if isinstance(err, ModelError):
            raise
        raise ModelError(f"{path}: truncated or malformed model file") from err
    if lines[idx] != "end":
        raise ModelError(f"{path}: expected end marker after trees")
    return TreeEnsembleModel(
        kind=kind,
        trees=trees,
        config=config,
        n_cols=n_cols,
        base_score=base_score,
        dictionary_hash=None if hash_raw == "-" else hash_raw,
    )
