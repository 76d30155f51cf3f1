"""Labeled dataset assembly, train/test splitting, SMOTE oversampling,
and stratified k-fold index generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from kmerdiff.encode import SparseFeatureMatrix


class SamplingError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Feature rows with binary labels (0 = control, 1 = study class) and
    per-row record ids."""

    features: SparseFeatureMatrix
    labels: np.ndarray
    ids: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (self.features.n_rows == self.labels.size == len(self.ids)):
            raise SamplingError(
                f"row mismatch: {self.features.n_rows} features, "
                f"{self.labels.size} labels, {len(self.ids)} ids"
            )
        bad = set(np.unique(self.labels)) - {0, 1}
        if bad:
            raise SamplingError(f"labels must be 0 or 1, found {sorted(bad)}")

    def __len__(self) -> int:
        return self.features.n_rows

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 0)), int(np.sum(self.labels == 1))

    def take(self, indices: Sequence[int] | np.ndarray) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            features=self.features.take_rows(indices),
            labels=self.labels[indices],
            ids=[self.ids[i] for i in indices],
        )


def train_test_split(
    ds: LabeledDataset, train_ratio: float, seed: int
) -> tuple[LabeledDataset, LabeledDataset]:
    """Uniform random split; the train side gets round-half-up(n * ratio)
    rows (8154 rows at 0.7 give 5708/2446)."""
    if not 0.0 < train_ratio < 1.0:
        raise SamplingError(f"train_ratio must be in (0, 1), got {train_ratio}")
    n = len(ds)
    if n < 2:
        raise SamplingError(f"need at least 2 rows to split, got {n}")
    train_n = int(np.floor(n * train_ratio + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    return ds.take(perm[:train_n]), ds.take(perm[train_n:])


def _minority_label(labels: np.ndarray) -> int:
    n0, n1 = int(np.sum(labels == 0)), int(np.sum(labels == 1))
    # ties go to the study class, which is the one SMOTE exists to grow
    return 1 if n1 <= n0 else 0


def smote(
    ds: LabeledDataset,
    k_neighbors: int = 5,
    target_minority_count: int | None = None,
    seed: int = 0,
) -> LabeledDataset:
    """Append synthetic minority rows until the minority class reaches the
    target (default: the majority count).

    Each synthetic row is x + u * (x2 - x) for a uniformly chosen minority
    row x, one of its k nearest minority neighbors x2 (Euclidean distance,
    ties broken by row index), and u ~ Uniform(0, 1). Original rows are
    never modified; synthetic ids are "synth#0", "synth#1", ...
    """
    if k_neighbors < 1:
        raise SamplingError(f"k_neighbors must be >= 1, got {k_neighbors}")
    minority = _minority_label(ds.labels)
    minority_rows = np.flatnonzero(ds.labels == minority)
    n_min = minority_rows.size
    if n_min < 2:
        raise SamplingError("SMOTE requires >= 2 minority samples")
    if target_minority_count is None:
        target_minority_count = len(ds) - n_min
    if target_minority_count < n_min:
        raise SamplingError(
            f"target {target_minority_count} below current minority count {n_min}"
        )
    n_new = target_minority_count - n_min
    if n_new == 0:
        return ds

    dense = ds.features.take_rows(minority_rows).to_dense()
    sq = np.einsum("ij,ij->i", dense, dense)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (dense @ dense.T)
    np.fill_diagonal(d2, np.inf)
    k_eff = min(k_neighbors, n_min - 1)
    neighbor_ids = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]

    rng = np.random.default_rng(seed)
    synth_rows = []
    for _ in range(n_new):
        x_id = int(rng.integers(0, n_min))
        x2_id = int(neighbor_ids[x_id, int(rng.integers(0, k_eff))])
        u = float(rng.random())
        synth_rows.append(dense[x_id] + u * (dense[x2_id] - dense[x_id]))

    new_features = ds.features.vstack(
        SparseFeatureMatrix.from_dense(np.asarray(synth_rows))
    )
    new_labels = np.concatenate([ds.labels, np.full(n_new, minority, dtype=np.int64)])
    new_ids = ds.ids + [f"synth#{i}" for i in range(n_new)]
    return LabeledDataset(features=new_features, labels=new_labels, ids=new_ids)


def kfold_indices(
    n: int,
    folds: int,
    stratify_labels: np.ndarray | None = None,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Partition 0..n-1 into validation folds (sizes differ by <= 1) and
    return (train, validation) index pairs, both sorted ascending.

    With stratify_labels, each class is dealt evenly across folds, class
    remainders going to the currently smallest folds, so per-class counts
    per fold also differ by <= 1.
    """
    if folds < 2:
        raise SamplingError(f"folds must be >= 2, got {folds}")
    if folds > n:
        raise SamplingError(f"folds={folds} exceeds n={n}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    if stratify_labels is None:
        perm = rng.permutation(n)
        sizes = np.full(folds, n // folds, dtype=np.int64)
        sizes[: n % folds] += 1
        start = 0
        for f in range(folds):
            assignment[perm[start : start + sizes[f]]] = f
            start += sizes[f]
    else:
        stratify_labels = np.asarray(stratify_labels)
        if stratify_labels.size != n:
            raise SamplingError("stratify_labels length must equal n")
        fold_sizes = np.zeros(folds, dtype=np.int64)
        for label in np.unique(stratify_labels):
            members = rng.permutation(np.flatnonzero(stratify_labels == label))
            base = members.size // folds
            start = 0
            for f in range(folds):
                assignment[members[start : start + base]] = f
                start += base
            for idx in members[start:]:
                f = int(np.argmin(fold_sizes))  # ties go to the lowest fold id
                assignment[idx] = f
                fold_sizes[f] += 1
            fold_sizes += base
    out = []
    every = np.arange(n)
    for f in range(folds):
        val = every[assignment == f]
        train = every[assignment != f]
        out.append((train, val))
    return out


def write_id_list(ids: Sequence[str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record_id in ids:
            fh.write(f"{record_id}\n")


def read_id_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]
