"""Binary-classification evaluation: confusion counts, per-class and
support-weighted precision/recall/F1, rank-based ROC/AUC, k-fold
cross-validation, and learning curves."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from kmerdiff.models import (
    TrainConfig,
    TreeEnsembleModel,
    fit_decision_tree,
    fit_gbdt,
    fit_random_forest,
    predict_label,
    predict_proba,
)
from kmerdiff.sampling import LabeledDataset, kfold_indices, smote, train_test_split


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    """Per-class scores plus support-weighted averages. Metrics whose
    denominator was zero are reported as 0 and named in `degenerate`."""

    accuracy: float
    per_class: dict[int, ClassMetrics]
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def confusion(y_true, y_pred) -> ConfusionMatrix:
    """Counts with class 1 as positive."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise EvalError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        bad = set(np.unique(arr)) - {0, 1}
        if bad:
            raise EvalError(f"{name} must be binary, found {sorted(bad)}")
    return ConfusionMatrix(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
    )


def _ratio(num: int, den: int, name: str, degenerate: list[str]) -> float:
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """accuracy = (TP+TN)/n; precision = TP/(TP+FP); recall = TP/(TP+FN);
    F1 = 2PR/(P+R). Each is computed per class (the other class swaps the
    roles of the four cells) and averaged weighted by true-class support.
    """
    degenerate: list[str] = []
    n = cm.total()
    accuracy = _ratio(cm.tp + cm.tn, n, "accuracy", degenerate)
    cells = {1: (cm.tp, cm.fp, cm.fn), 0: (cm.tn, cm.fn, cm.fp)}
    per_class: dict[int, ClassMetrics] = {}
    for cls, (tp, fp, fn) in cells.items():
        precision = _ratio(tp, tp + fp, f"precision_{cls}", degenerate)
        recall = _ratio(tp, tp + fn, f"recall_{cls}", degenerate)
        if precision + recall == 0.0:
            degenerate.append(f"f1_{cls}")
            f1 = 0.0
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
        per_class[cls] = ClassMetrics(precision=precision, recall=recall, f1=f1, support=tp + fn)
    if n == 0:
        weighted = {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    else:
        weighted = {
            field: sum(
                getattr(per_class[cls], field) * per_class[cls].support for cls in (0, 1)
            )
            / n
            for field in ("precision", "recall", "f1")
        }
    return MetricsReport(
        accuracy=accuracy,
        per_class=per_class,
        precision=weighted["precision"],
        recall=weighted["recall"],
        f1=weighted["f1"],
        degenerate=tuple(degenerate),
    )


def roc_auc(y_true, scores) -> RocCurve:
    """Threshold sweep over distinct scores descending, ties grouped into
    single diagonal segments; AUC by the trapezoid rule, which equals the
    Mann-Whitney statistic with half credit for ties."""
    y_true = np.asarray(y_true, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.shape != scores.shape:
        raise EvalError(f"length mismatch: {y_true.size} labels vs {scores.size} scores")
    pos = int(np.sum(y_true == 1))
    neg = y_true.size - pos
    if pos == 0 or neg == 0:
        raise EvalError("ROC needs both classes in y_true")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = y_true[order]
    # last index of each tie group
    boundary = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([boundary, [s.size - 1]])
    cum_tp = np.cumsum(y)
    cum_fp = np.cumsum(1 - y)
    tpr = np.concatenate([[0.0], cum_tp[ends] / pos])
    fpr = np.concatenate([[0.0], cum_fp[ends] / neg])
    thresholds = np.concatenate([[np.inf], s[ends]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


_FITTERS: dict[str, Callable] = {
    "decision_tree": lambda ds, cfg, threads: fit_decision_tree(ds, cfg),
    "random_forest": lambda ds, cfg, threads: fit_random_forest(ds, cfg, threads=threads),
    "gbdt": lambda ds, cfg, threads: fit_gbdt(ds, cfg),
}


def fit_model(
    kind: str, train: LabeledDataset, config: TrainConfig | None = None, threads: int = 1
) -> TreeEnsembleModel:
    if kind not in _FITTERS:
        raise EvalError(f"unknown model kind {kind!r}; expected one of {sorted(_FITTERS)}")
    return _FITTERS[kind](train, config, threads)


def evaluate_model(model: TreeEnsembleModel, test: LabeledDataset) -> tuple[MetricsReport, RocCurve]:
    probs = predict_proba(model, test.features)
    report = metrics(confusion(test.labels, (probs > 0.5).astype(np.int64)))
    curve = roc_auc(test.labels, probs)
    return report, curve


@dataclass(frozen=True)
class FoldResult:
    fold: int
    report: MetricsReport
    auc: float


@dataclass(frozen=True)
class CrossValidationResult:
    folds: tuple[FoldResult, ...]
    mean: dict[str, float]
    sd: dict[str, float]


def _summary_row(report: MetricsReport, auc: float) -> dict[str, float]:
    return {
        "accuracy": report.accuracy,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "auc": auc,
    }


def cross_validate(
    ds: LabeledDataset,
    folds: int,
    kind: str,
    config: TrainConfig | None = None,
    seed: int = 0,
    use_smote: bool = True,
    smote_neighbors: int = 5,
    threads: int = 1,
) -> CrossValidationResult:
    """Stratified k-fold: each round trains on k-1 folds (optionally SMOTE
    balanced, synthesis confined to that round's training part) and scores
    the held-out fold. Aggregates are mean and population sd across folds.
    """
    pairs = kfold_indices(len(ds), folds, stratify_labels=ds.labels, seed=seed)
    fold_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(folds)]

    def run_fold(f: int) -> FoldResult:
        train_idx, val_idx = pairs[f]
        train, val = ds.take(train_idx), ds.take(val_idx)
        if use_smote:
            n0, n1 = train.class_counts()
            if min(n0, n1) >= 2 and n0 != n1:
                train = smote(train, k_neighbors=smote_neighbors, seed=fold_seeds[f])
        fold_config = replace(config, seed=fold_seeds[f]) if config else None
        model = fit_model(kind, train, fold_config, threads=1)
        report, curve = evaluate_model(model, val)
        return FoldResult(fold=f, report=report, auc=curve.auc)

    if threads <= 1:
        results = [run_fold(f) for f in range(folds)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, range(folds)))
    rows = [_summary_row(r.report, r.auc) for r in results]
    mean = {key: float(np.mean([row[key] for row in rows])) for key in rows[0]}
    sd = {key: float(np.std([row[key] for row in rows])) for key in rows[0]}
    return CrossValidationResult(folds=tuple(results), mean=mean, sd=sd)


@dataclass(frozen=True)
class LearningCurvePoint:
    fraction: float
    n_train: int
    train_accuracy: float
    validation_accuracy: float


def learning_curve(
    ds: LabeledDataset,
    fractions: Sequence[float],
    kind: str,
    config: TrainConfig | None = None,
    seed: int = 0,
    train_ratio: float = 0.7,
) -> list[LearningCurvePoint]:
    """Fix one shuffled train/validation split, then refit on growing
    prefixes of the training side. Fractions too small to train on are
    skipped with a warning; the 1.0 entry reproduces a plain split run.
    """
    if not fractions:
        raise EvalError("need at least one fraction")
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise EvalError(f"fractions must lie in (0, 1], got {list(fractions)}")
    if list(fractions) != sorted(fractions):
        raise EvalError("fractions must be ascending")
    train, validation = train_test_split(ds, train_ratio, seed)
    points = []
    for fraction in fractions:
        n_sub = int(np.floor(fraction * len(train) + 0.5))
        if n_sub < 2:
            warnings.warn(f"fraction {fraction} keeps {n_sub} < 2 training rows, skipped")
            continue
        subset = train.take(np.arange(n_sub))
        try:
            model = fit_model(kind, subset, config)
        except ValueError as err:
            warnings.warn(f"fraction {fraction} skipped: {err}")
            continue
        train_acc = metrics(
            confusion(subset.labels, predict_label(model, subset.features))
        ).accuracy
        val_acc = metrics(
            confusion(validation.labels, predict_label(model, validation.features))
        ).accuracy
        points.append(
            LearningCurvePoint(
                fraction=float(fraction),
                n_train=n_sub,
                train_accuracy=train_acc,
                validation_accuracy=val_acc,
            )
        )
    return points


# --- reporting ----------------------------------------------------------------


def report_lines(report: MetricsReport, auc: float | None = None) -> list[str]:
    lines = [
        f"accuracy\t{report.accuracy:.6f}",
        f"precision_weighted\t{report.precision:.6f}",
        f"recall_weighted\t{report.recall:.6f}",
        f"f1_weighted\t{report.f1:.6f}",
    ]
    if auc is not None:
        lines.append(f"auc\t{auc:.6f}")
    for cls in (0, 1):
        cm = report.per_class[cls]
        lines.append(
            f"class_{cls}\tprecision={cm.precision:.6f} recall={cm.recall:.6f} "
            f"f1={cm.f1:.6f} support={cm.support}"
        )
    if report.degenerate:
        lines.append("degenerate\t" + ",".join(report.degenerate))
    return lines
