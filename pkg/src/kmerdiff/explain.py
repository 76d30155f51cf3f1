"""SHAP attribution for the tree ensembles, feature ranking, and
incremental-AUC feature selection.

Two attribution engines cross-check each other. `shap_exact` enumerates
every feature subset S and applies the Shapley kernel
|S|!(|F|-|S|-1)!/|F|! to the marginal f(S + {i}) - f(S); it is
exponential in the number of active features and exists as the oracle.
`shap_tree` walks each tree once per instance, carrying the subset
weights along the path, and scales to real models. Both decompose the
model's additive output (mean tree probability for forests, raw margin
for boosted trees): positive phi pushes toward class 1.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from kmerdiff.encode import SparseFeatureMatrix
from kmerdiff.evaluate import fit_model, roc_auc
from kmerdiff.models import TreeEnsembleModel, Tree, predict_proba
from kmerdiff.sampling import LabeledDataset

MAX_EXACT_FEATURES = 20


class ExplainError(ValueError):
    pass


@dataclass(frozen=True)
class ShapAttribution:
    """base_value + phi.sum() equals the model's additive output for the
    explained instance (local accuracy)."""

    base_value: float
    phi: np.ndarray


@dataclass(frozen=True)
class FeatureRanking:
    """(column id, mean |phi|) pairs, scores non-increasing, score ties
    ordered by column id."""

    entries: tuple[tuple[int, float], ...]

    def top(self, m: int) -> list[int]:
        return [col for col, _ in self.entries[:m]]


@dataclass(frozen=True)
class SelectionCurve:
    m_values: tuple[int, ...]
    test_auc: tuple[float, ...]
    cv_auc: tuple[float, ...] | None
    chosen_m: int | None = None


# --- per-tree machinery --------------------------------------------------------


def _tree_leaf_values(model: TreeEnsembleModel, tree: Tree) -> np.ndarray:
    return tree.value[:, 1] if tree.value.ndim == 2 else tree.value


def _ensemble_combine(model: TreeEnsembleModel, per_tree: np.ndarray) -> np.ndarray:
    """Reduce per-tree quantities with the same linear rule as prediction."""
    if model.kind in ("decision_tree", "random_forest"):
        return per_tree.mean(axis=0)
    return model.config.learning_rate * per_tree.sum(axis=0)


def _tree_expectation(tree: Tree, values: np.ndarray, node: int = 0) -> float:
    """Cover-weighted mean output of the subtree."""
    if tree.feature[node] == -1:
        return float(values[node])
    lf, rt = int(tree.left[node]), int(tree.right[node])
    wl, wr = float(tree.cover[lf]), float(tree.cover[rt])
    return (
        wl * _tree_expectation(tree, values, lf) + wr * _tree_expectation(tree, values, rt)
    ) / (wl + wr)


# --- exact engine ----------------------------------------------------------------


def shap_exact(
    model: TreeEnsembleModel,
    x: np.ndarray,
    background: np.ndarray | None = None,
    semantics: str = "conditional",
) -> ShapAttribution:
    """Subset-enumeration Shapley values over the model's active features.

    semantics "conditional" evaluates f(S) by cover-weighted descent
    through each tree; "interventional" evaluates it as the mean model
    output over background rows with the features in S overwritten by the
    instance (background required). Cost is 2^|F|; |F| > 20 is refused.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_cols,):
        raise ExplainError(f"instance must have {model.n_cols} values, got {x.shape}")
    if semantics not in ("conditional", "interventional"):
        raise ExplainError(f"unknown semantics {semantics!r}")
    if semantics == "interventional":
        if background is None or len(background) == 0:
            raise ExplainError("interventional semantics needs a non-empty background")
        background = np.asarray(background, dtype=np.float64)

    active = model.used_features()
    n_active = int(active.size)
    if n_active > MAX_EXACT_FEATURES:
        raise ExplainError(
            f"{n_active} active features would need 2^{n_active} subsets; use shap_tree"
        )
    n_masks = 1 << n_active
    masks = np.arange(n_masks, dtype=np.int64)
    bit_of = {int(c): b for b, c in enumerate(active)}

    def in_subset(f: int) -> np.ndarray:
        return (masks >> bit_of[f] & 1).astype(bool)

    # f(S) for every subset at once: one vector of length 2^|F| per node
    def conditional_vec(tree: Tree, values: np.ndarray, node: int) -> np.ndarray:
        f = int(tree.feature[node])
        if f == -1:
            return np.full(n_masks, float(values[node]))
        lf, rt = int(tree.left[node]), int(tree.right[node])
        lv = conditional_vec(tree, values, lf)
        rv = conditional_vec(tree, values, rt)
        follow = lv if x[f] <= tree.threshold[node] else rv
        wl, wr = float(tree.cover[lf]), float(tree.cover[rt])
        return np.where(in_subset(f), follow, (wl * lv + wr * rv) / (wl + wr))

    def interventional_vec(tree: Tree, values: np.ndarray, row: np.ndarray, node: int) -> np.ndarray:
        f = int(tree.feature[node])
        if f == -1:
            return np.full(n_masks, float(values[node]))
        x_left = x[f] <= tree.threshold[node]
        row_left = row[f] <= tree.threshold[node]
        if x_left == row_left:
            child = int(tree.left[node]) if x_left else int(tree.right[node])
            return interventional_vec(tree, values, row, child)
        lv = interventional_vec(tree, values, row, int(tree.left[node]))
        rv = interventional_vec(tree, values, row, int(tree.right[node]))
        return np.where(in_subset(f), lv if x_left else rv, rv if x_left else lv)

    per_mask = np.zeros(n_masks)
    for tree in model.trees:
        values = _tree_leaf_values(model, tree)
        if semantics == "conditional":
            tree_vec = conditional_vec(tree, values, 0)
        else:
            tree_vec = np.zeros(n_masks)
            for row in background:
                tree_vec += interventional_vec(tree, values, row, 0)
            tree_vec /= len(background)
        per_mask += tree_vec
    if model.kind in ("decision_tree", "random_forest"):
        per_mask /= len(model.trees)
    else:
        per_mask = model.base_score + model.config.learning_rate * per_mask

    popcount = np.zeros(n_masks, dtype=np.int64)
    for b in range(n_active):
        popcount += masks >> b & 1
    fact = [math.factorial(i) for i in range(n_active + 1)]
    denom = fact[n_active] if n_active else 1
    weight_of_size = np.array(
        [fact[s] * fact[n_active - s - 1] / denom for s in range(n_active)] or [0.0]
    )
    phi = np.zeros(model.n_cols)
    for b in range(n_active):
        without = masks[~(masks >> b & 1).astype(bool)]
        gains = per_mask[without | (1 << b)] - per_mask[without]
        phi[int(active[b])] = float(np.sum(weight_of_size[popcount[without]] * gains))
    return ShapAttribution(base_value=float(per_mask[0]), phi=phi)


# --- tree-path engine --------------------------------------------------------------


def _extend(path: np.ndarray, depth: int, pz: float, po: float, pf: int) -> None:
    """Append a path element and refresh subset-permutation weights.
    path rows: (feature, zero_fraction, one_fraction, pweight)."""
    path[depth] = (pf, pz, po, 1.0 if depth == 0 else 0.0)
    for i in range(depth - 1, -1, -1):
        path[i + 1, 3] += po * path[i, 3] * (i + 1.0) / (depth + 1.0)
        path[i, 3] = pz * path[i, 3] * (depth - i) / (depth + 1.0)


def _unwind(path: np.ndarray, depth: int, index: int) -> None:
    one = path[index, 2]
    zero = path[index, 1]
    carry = path[depth, 3]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = path[i, 3]
            path[i, 3] = carry * (depth + 1.0) / ((i + 1.0) * one)
            carry = tmp - path[i, 3] * zero * (depth - i) / (depth + 1.0)
        else:
            path[i, 3] = path[i, 3] * (depth + 1.0) / (zero * (depth - i))
    path[index:depth, :3] = path[index + 1 : depth + 1, :3]


def _unwound_sum(path: np.ndarray, depth: int, index: int) -> float:
    one = path[index, 2]
    zero = path[index, 1]
    carry = path[depth, 3]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = carry * (depth + 1.0) / ((i + 1.0) * one)
            total += tmp
            carry = path[i, 3] - tmp * zero * (depth - i) / (depth + 1.0)
        else:
            total += path[i, 3] * (depth + 1.0) / (zero * (depth - i))
    return total


def _tree_shap_single(tree: Tree, values: np.ndarray, x: np.ndarray, phi: np.ndarray) -> None:
    """Cover-weighted path attribution for one tree (adds into phi)."""

    def recurse(node: int, parent_path: np.ndarray, depth: int, pz: float, po: float, pf: int) -> None:
        path = np.empty((depth + 1, 4))
        path[:depth] = parent_path[:depth]
        _extend(path, depth, pz, po, pf)
        f = int(tree.feature[node])
        if f == -1:
            for i in range(1, depth + 1):
                w = _unwound_sum(path, depth, i)
                phi[int(path[i, 0])] += w * (path[i, 2] - path[i, 1]) * values[node]
            return
        hot, cold = (
            (int(tree.left[node]), int(tree.right[node]))
            if x[f] <= tree.threshold[node]
            else (int(tree.right[node]), int(tree.left[node]))
        )
        iz, io = 1.0, 1.0
        k = -1
        for i in range(1, depth + 1):
            if int(path[i, 0]) == f:
                k = i
                break
        next_depth = depth
        if k >= 0:
            iz, io = path[k, 1], path[k, 2]
            _unwind(path, depth, k)
            next_depth -= 1
        ratio_hot = tree.cover[hot] / tree.cover[node]
        ratio_cold = tree.cover[cold] / tree.cover[node]
        recurse(hot, path, next_depth + 1, iz * ratio_hot, io, f)
        recurse(cold, path, next_depth + 1, iz * ratio_cold, 0.0, f)

    recurse(0, np.empty((0, 4)), 0, 1.0, 1.0, -1)


def shap_tree(model: TreeEnsembleModel, x: np.ndarray) -> ShapAttribution:
    """Path-tracking attribution with tree-conditional f(S); combines the
    per-tree results under the ensemble's prediction rule."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_cols,):
        raise ExplainError(f"instance must have {model.n_cols} values, got {x.shape}")
    per_tree_phi = np.zeros((len(model.trees), model.n_cols))
    base = 0.0
    for t, tree in enumerate(model.trees):
        values = _tree_leaf_values(model, tree)
        _tree_shap_single(tree, values, x, per_tree_phi[t])
        base += _tree_expectation(tree, values)
    phi = _ensemble_combine(model, per_tree_phi)
    if model.kind in ("decision_tree", "random_forest"):
        base_value = base / len(model.trees)
    else:
        base_value = model.base_score + model.config.learning_rate * base
    return ShapAttribution(base_value=base_value, phi=phi)


def shap_matrix(
    model: TreeEnsembleModel,
    features: SparseFeatureMatrix,
    threads: int = 1,
) -> tuple[float, np.ndarray]:
    """shap_tree over every row. Rows identical on the model's active
    features share one attribution, which collapses the all-background
    bulk of sparse corpora."""
    if features.n_cols != model.n_cols:
        raise ExplainError(
            f"feature width mismatch: model has {model.n_cols} columns, matrix has {features.n_cols}"
        )
    used = model.used_features()
    dense_used = (
        features.select_columns(used).to_dense()
        if used.size
        else np.zeros((features.n_rows, 0))
    )
    full = np.zeros(model.n_cols)

    def explain_key(row: np.ndarray) -> ShapAttribution:
        x = full.copy()
        x[used] = row
        return shap_tree(model, x)

    keys = [row.tobytes() for row in dense_used]
    unique: dict[bytes, int] = {}
    distinct_rows = []
    for key, row in zip(keys, dense_used):
        if key not in unique:
            unique[key] = len(distinct_rows)
            distinct_rows.append(row)
    if threads <= 1:
        attributions = [explain_key(row) for row in distinct_rows]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            attributions = list(pool.map(explain_key, distinct_rows))
    phi = np.stack([attributions[unique[key]].phi for key in keys]) if keys else np.zeros((0, model.n_cols))
    base = attributions[0].base_value if attributions else 0.0
    return base, phi


# --- ranking and selection -----------------------------------------------------------


def rank_features(
    model: TreeEnsembleModel, explain_set: LabeledDataset, threads: int = 1
) -> FeatureRanking:
    """Columns ordered by mean |phi| over the explained rows."""
    if len(explain_set) == 0:
        raise ExplainError("explain set is empty")
    _, phi = shap_matrix(model, explain_set.features, threads=threads)
    scores = np.mean(np.abs(phi), axis=0)
    order = np.lexsort((np.arange(scores.size), -scores))
    return FeatureRanking(entries=tuple((int(c), float(scores[c])) for c in order))


def incremental_auc_curve(
    ranking: FeatureRanking,
    train: LabeledDataset,
    test: LabeledDataset,
    kind: str,
    config=None,
    max_m: int = 20,
    cv_folds: int = 0,
    cv_seed: int = 0,
) -> SelectionCurve:
    """Retrain on the top-m ranked columns for m = 1..max_m, recording the
    held-out AUC (and optionally a k-fold CV AUC on the training side)."""
    if max_m < 1:
        raise ExplainError(f"max_m must be >= 1, got {max_m}")
    if max_m > len(ranking.entries):
        raise ExplainError(f"max_m={max_m} exceeds ranking size {len(ranking.entries)}")
    from kmerdiff.evaluate import cross_validate  # local import avoids cycle at module load

    test_aucs = []
    cv_aucs = []
    for m in range(1, max_m + 1):
        cols = ranking.top(m)
        sub_train = LabeledDataset(
            features=train.features.select_columns(cols), labels=train.labels, ids=train.ids
        )
        sub_test = LabeledDataset(
            features=test.features.select_columns(cols), labels=test.labels, ids=test.ids
        )
        model = fit_model(kind, sub_train, config)
        test_aucs.append(roc_auc(sub_test.labels, predict_proba(model, sub_test.features)).auc)
        if cv_folds >= 2:
            result = cross_validate(sub_train, cv_folds, kind, config, seed=cv_seed)
            cv_aucs.append(result.mean["auc"])
    return SelectionCurve(
        m_values=tuple(range(1, max_m + 1)),
        test_auc=tuple(test_aucs),
        cv_auc=tuple(cv_aucs) if cv_aucs else None,
        chosen_m=None,
    )


def select_top_features(
    curve: SelectionCurve, epsilon: float = 0.005, patience: int = 2
) -> int:
    """Smallest m whose next `patience` curve values (m included) all sit
    within epsilon of the curve's global maximum; if no window qualifies,
    the full feature count is returned with a warning."""
    if not curve.test_auc:
        raise ExplainError("empty selection curve")
    if epsilon <= 0.0:
        raise ExplainError(f"epsilon must be > 0, got {epsilon}")
    if patience < 1:
        raise ExplainError(f"patience must be >= 1, got {patience}")
    aucs = curve.test_auc
    floor = max(aucs) - epsilon
    for start in range(len(aucs) - patience + 1):
        window = aucs[start : start + patience]
        if all(a >= floor for a in window):
            return curve.m_values[start]
    warnings.warn(
        f"AUC curve never stabilized within epsilon={epsilon} for {patience} "
        f"consecutive points; falling back to m={curve.m_values[-1]}"
    )
    return curve.m_values[-1]


def finalize_selection(curve: SelectionCurve, epsilon: float = 0.005, patience: int = 2) -> SelectionCurve:
    return replace(curve, chosen_m=select_top_features(curve, epsilon, patience))


# --- persistence -----------------------------------------------------------------------


def write_ranking_tsv(ranking: FeatureRanking, path, names: Sequence[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if names is None:
            fh.write("rank\tcolumn\tmean_abs_shap\n")
            for rank, (col, score) in enumerate(ranking.entries, start=1):
                fh.write(f"{rank}\t{col}\t{score!r}\n")
        else:
            fh.write("rank\tcolumn\tfeature\tmean_abs_shap\n")
            for rank, (col, score) in enumerate(ranking.entries, start=1):
                fh.write(f"{rank}\t{col}\t{names[col]}\t{score!r}\n")


def write_curve_tsv(curve: SelectionCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if curve.cv_auc is None:
            fh.write("m\ttest_auc\n")
            for m, auc in zip(curve.m_values, curve.test_auc):
                fh.write(f"{m}\t{auc!r}\n")
        else:
            fh.write("m\ttest_auc\tcv_auc\n")
            for m, auc, cv in zip(curve.m_values, curve.test_auc, curve.cv_auc):
                fh.write(f"{m}\t{auc!r}\t{cv!r}\n")
        if curve.chosen_m is not None:
            fh.write(f"# chosen_m={curve.chosen_m}\n")
