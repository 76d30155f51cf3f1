"""DNA sequence vectorization: sequential, one-hot, k-mer counts, k-mer
graph edge weights, and four-channel image encoding, over a shared
k-mer dictionary and row-sparse feature matrix."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from kmerdiff.fasta import SequenceRecord

SEQUENTIAL_VALUES = {"A": 0.25, "C": 0.5, "G": 0.75, "T": 1.0}
# One-hot row layout, in this column order: the bit for A is the last
# column, T the third, C the second, G the first.
ONEHOT_ROWS = {
    "A": (0, 0, 0, 1),
    "T": (0, 0, 1, 0),
    "C": (0, 1, 0, 0),
    "G": (1, 0, 0, 0),
}


class EncodingError(ValueError):
    pass


@dataclass
class SparseFeatureMatrix:
    """Row-sparse matrix in CSR layout. Stored values are non-zero and
    column ids strictly increase within each row."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray  # int64, len n_rows + 1
    indices: np.ndarray  # int64 column ids
    data: np.ndarray  # float64 values
    dictionary_hash: str | None = None

    @classmethod
    def from_rows(
        cls,
        rows: Sequence[dict[int, float] | list[tuple[int, float]]],
        n_cols: int,
        dictionary_hash: str | None = None,
    ) -> "SparseFeatureMatrix":
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        cols: list[int] = []
        vals: list[float] = []
        for r, row in enumerate(rows):
            items = sorted(row.items()) if isinstance(row, dict) else sorted(row)
            for c, v in items:
                if v != 0.0:
                    cols.append(c)
                    vals.append(float(v))
            indptr[r + 1] = len(cols)
        return cls(
            n_rows=len(rows),
            n_cols=n_cols,
            indptr=indptr,
            indices=np.asarray(cols, dtype=np.int64),
            data=np.asarray(vals, dtype=np.float64),
            dictionary_hash=dictionary_hash,
        )

    @classmethod
    def from_dense(cls, dense: np.ndarray, dictionary_hash: str | None = None) -> "SparseFeatureMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        rows = [{int(c): float(v) for c, v in zip(np.nonzero(row)[0], row[np.nonzero(row)[0]])} for row in dense]
        return cls.from_rows(rows, dense.shape[1] if dense.ndim == 2 else 0, dictionary_hash)

    def row_items(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_dict(self, r: int) -> dict[int, float]:
        cols, vals = self.row_items(r)
        return dict(zip(cols.tolist(), vals.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        for r in range(self.n_rows):
            cols, vals = self.row_items(r)
            out[r, cols] = vals
        return out

    def take_rows(self, row_ids: Sequence[int] | np.ndarray) -> "SparseFeatureMatrix":
        row_ids = np.asarray(row_ids, dtype=np.int64)
        counts = self.indptr[row_ids + 1] - self.indptr[row_ids]
        indptr = np.zeros(len(row_ids) + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        data = np.empty(indptr[-1], dtype=np.float64)
        for out_r, r in enumerate(row_ids):
            lo, hi = self.indptr[r], self.indptr[r + 1]
            indices[indptr[out_r] : indptr[out_r + 1]] = self.indices[lo:hi]
            data[indptr[out_r] : indptr[out_r + 1]] = self.data[lo:hi]
        return SparseFeatureMatrix(len(row_ids), self.n_cols, indptr, indices, data, self.dictionary_hash)

    def select_columns(self, col_ids: Sequence[int] | np.ndarray) -> "SparseFeatureMatrix":
        """Project onto the given columns, renumbered 0..len(col_ids)-1 in
        the given order. Used for top-m feature retraining."""
        col_ids = np.asarray(col_ids, dtype=np.int64)
        remap = {int(c): i for i, c in enumerate(col_ids)}
        rows = []
        for r in range(self.n_rows):
            cols, vals = self.row_items(r)
            rows.append({remap[int(c)]: float(v) for c, v in zip(cols, vals) if int(c) in remap})
        return SparseFeatureMatrix.from_rows(rows, len(col_ids))

    def vstack(self, other: "SparseFeatureMatrix") -> "SparseFeatureMatrix":
        if other.n_cols != self.n_cols:
            raise ValueError(f"column mismatch: {self.n_cols} vs {other.n_cols}")
        return SparseFeatureMatrix(
            self.n_rows + other.n_rows,
            self.n_cols,
            np.concatenate([self.indptr, self.indptr[-1] + other.indptr[1:]]),
            np.concatenate([self.indices, other.indices]),
            np.concatenate([self.data, other.data]),
            self.dictionary_hash,
        )

    def to_csc(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Column-major view: (col indptr, row indices, values)."""
        nnz = len(self.data)
        row_of = np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.indptr))
        order = np.argsort(self.indices, kind="stable")
        cols_sorted = self.indices[order]
        col_indptr = np.zeros(self.n_cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols_sorted, minlength=self.n_cols), out=col_indptr[1:])
        return col_indptr, row_of[order], self.data[order]

    def validate(self) -> None:
        assert self.indptr[0] == 0 and self.indptr[-1] == len(self.indices) == len(self.data)
        assert np.all(np.diff(self.indptr) >= 0)
        if len(self.indices):
            assert self.indices.min() >= 0 and self.indices.max() < self.n_cols
        assert np.all(self.data != 0.0)
        for r in range(self.n_rows):
            cols, _ = self.row_items(r)
            assert np.all(np.diff(cols) > 0), f"row {r} columns not strictly increasing"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseFeatureMatrix):
            return NotImplemented
        return (
            self.n_rows == other.n_rows
            and self.n_cols == other.n_cols
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class KmerDictionary:
    """Maps each retained k-mer to a dense 0-based column id, assigned in
    lexicographic order. K-mers containing N are never entered."""

    k: int
    entries: dict[str, int]
    min_count: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def kmers(self) -> list[str]:
        inverse = [""] * len(self.entries)
        for kmer, col in self.entries.items():
            inverse[col] = kmer
        return inverse

    def content_hash(self) -> str:
        payload = "\n".join(f"{kmer}\t{col}" for kmer, col in sorted(self.entries.items(), key=lambda e: e[1]))
        return hashlib.sha256(f"k={self.k}\n{payload}".encode()).hexdigest()


@dataclass
class KmerGraph:
    """Nodes are a sequence's k-mers; edge (u, v) counts how often window
    v immediately follows window u."""

    k: int
    nodes: set[str]
    edges: dict[tuple[str, str], int]

    def total_edge_weight(self) -> int:
        return sum(self.edges.values())


@dataclass
class ChannelImage:
    """Four binary planes (A, T, C, G); each pixel covering a valid base
    has exactly one channel set."""

    width: int
    height: int
    channels: np.ndarray  # uint8, shape (4, height, width)


@dataclass(frozen=True)
class EncodingScheme:
    """Parameters for one of the five vectorization schemes.

    name: sequential | onehot | kmer | graph | image
    """

    name: str
    k: int = 3
    min_count: int = 1
    max_len: int | None = None
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.name not in ("sequential", "onehot", "kmer", "graph", "image"):
            raise EncodingError(f"unknown scheme {self.name!r}")


def encode_sequential(residues: str, max_len: int) -> np.ndarray:
    """Map bases to A=0.25 C=0.5 G=0.75 T=1.0 (others 0.0), truncated or
    zero-padded to exactly max_len positions."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    out = np.zeros(max_len, dtype=np.float64)
    for i, base in enumerate(residues[:max_len]):
        out[i] = SEQUENTIAL_VALUES.get(base, 0.0)
    return out


def encode_onehot(residues: str, max_len: int) -> np.ndarray:
    """Binary max_len x 4 matrix; N and padding rows are all-zero."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    out = np.zeros((max_len, 4), dtype=np.uint8)
    for i, base in enumerate(residues[:max_len]):
        row = ONEHOT_ROWS.get(base)
        if row is not None:
            out[i] = row
    return out


def extract_kmers(residues: str, k: int) -> list[str]:
    """All length-k windows in order; windows containing N are skipped."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return [w for w in iter_windows(residues, k) if w is not None]


def iter_windows(residues: str, k: int) -> Iterator[str | None]:
    """Yield every window position; None marks a window containing N.

    Keeping positions lets graph construction know which windows are
    adjacent in the original coordinates.
    """
    n = len(residues)
    if n < k:
        return
    # Track the most recent N to skip contaminated windows in O(1).
    last_n = -1
    for i in range(k - 1):
        if residues[i] == "N":
            last_n = i
    for i in range(n - k + 1):
        if residues[i + k - 1] == "N":
            last_n = i + k - 1
        yield None if last_n >= i else residues[i : i + k]


def count_kmers(records: Iterable[SequenceRecord], k: int) -> Counter:
    counts: Counter = Counter()
    for rec in records:
        counts.update(extract_kmers(rec.residues, k))
    return counts


def build_kmer_dictionary(
    corpus: Iterable[SequenceRecord], k: int, min_count: int = 1
) -> KmerDictionary:
    """Dictionary of k-mers whose total corpus count >= min_count, with
    column ids assigned in lexicographic k-mer order."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = count_kmers(corpus, k)
    kept = sorted(w for w, c in counts.items() if c >= min_count)
    if not kept:
        raise EncodingError(f"no k-mers survive min_count={min_count}")
    return KmerDictionary(k=k, entries={w: i for i, w in enumerate(kept)}, min_count=min_count)


def encode_kmer_counts(
    records: Sequence[SequenceRecord], dictionary: KmerDictionary
) -> SparseFeatureMatrix:
    """One row per record; cell (r, dictionary[w]) counts k-mer w in record r."""
    if not dictionary.entries:
        raise EncodingError("empty dictionary")
    entries = dictionary.entries
    rows = []
    for rec in records:
        row: dict[int, float] = {}
        for w in extract_kmers(rec.residues, dictionary.k):
            col = entries.get(w)
            if col is not None:
                row[col] = row.get(col, 0.0) + 1.0
        rows.append(row)
    return SparseFeatureMatrix.from_rows(rows, len(entries), dictionary.content_hash())


def build_kmer_graph(residues: str, k: int) -> KmerGraph:
    """Graph over the sequence's k-mers; each positionally adjacent clean
    window pair increments its edge weight by 1."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    nodes: set[str] = set()
    edges: dict[tuple[str, str], int] = {}
    prev: str | None = None
    for window in iter_windows(residues, k):
        if window is not None:
            nodes.add(window)
            if prev is not None:
                key = (prev, window)
                edges[key] = edges.get(key, 0) + 1
        prev = window
    return KmerGraph(k=k, nodes=nodes, edges=edges)


def encode_graph_features(
    records: Sequence[SequenceRecord], k: int, edge_dictionary: KmerDictionary
) -> SparseFeatureMatrix:
    """Edge-weight vector per record: edge (u, v) is the (k+1)-mer formed
    by u plus the last base of v, counted against edge_dictionary."""
    if edge_dictionary.k != k + 1:
        raise EncodingError(
            f"edge dictionary must be built at k+1={k + 1}, got {edge_dictionary.k}"
        )
    entries = edge_dictionary.entries
    rows = []
    for rec in records:
        graph = build_kmer_graph(rec.residues, k)
        row: dict[int, float] = {}
        for (u, v), weight in graph.edges.items():
            col = entries.get(u + v[-1])
            if col is not None:
                row[col] = row.get(col, 0.0) + float(weight)
        rows.append(row)
    return SparseFeatureMatrix.from_rows(rows, len(entries), edge_dictionary.content_hash())


def encode_image(residues: str, width: int, height: int) -> ChannelImage:
    """Base i maps to pixel (i // width, i % width) in channel order
    (A, T, C, G); bases beyond width*height are truncated."""
    if width < 1 or height < 1:
        raise ValueError(f"width and height must be >= 1, got {width}x{height}")
    channel_of = {"A": 0, "T": 1, "C": 2, "G": 3}
    planes = np.zeros((4, height, width), dtype=np.uint8)
    for i, base in enumerate(residues[: width * height]):
        ch = channel_of.get(base)
        if ch is not None:
            planes[ch, i // width, i % width] = 1
    return ChannelImage(width=width, height=height, channels=planes)


def default_image_side(records: Sequence[SequenceRecord]) -> int:
    """Smallest square side covering the longest sequence."""
    longest = max((len(r) for r in records), default=1)
    return max(1, math.isqrt(longest - 1) + 1) if longest > 0 else 1


def encode_corpus(
    records: Sequence[SequenceRecord],
    scheme: EncodingScheme,
    dictionary: KmerDictionary | None = None,
) -> tuple[SparseFeatureMatrix, KmerDictionary | None]:
    """Uniform entry point: one matrix row per record, column semantics
    fixed by the scheme. For kmer/graph schemes the dictionary is built
    from the corpus unless one is supplied; it is returned for reuse."""
    if scheme.name == "sequential":
        max_len = scheme.max_len or max((len(r) for r in records), default=1)
        dense = np.stack([encode_sequential(r.residues, max_len) for r in records]) if records else np.zeros((0, max_len))
        return SparseFeatureMatrix.from_dense(dense), None
    if scheme.name == "onehot":
        max_len = scheme.max_len or max((len(r) for r in records), default=1)
        rows = [encode_onehot(r.residues, max_len).reshape(-1) for r in records]
        dense = np.stack(rows) if rows else np.zeros((0, max_len * 4))
        return SparseFeatureMatrix.from_dense(dense), None
    if scheme.name == "kmer":
        if dictionary is None:
            dictionary = build_kmer_dictionary(records, scheme.k, scheme.min_count)
        return encode_kmer_counts(records, dictionary), dictionary
    if scheme.name == "graph":
        if dictionary is None:
            dictionary = build_kmer_dictionary(records, scheme.k + 1, scheme.min_count)
        return encode_graph_features(records, scheme.k, dictionary), dictionary
    if scheme.name == "image":
        side = default_image_side(records)
        width = scheme.width or side
        height = scheme.height or side
        rows = [encode_image(r.residues, width, height).channels.reshape(-1) for r in records]
        dense = np.stack(rows) if rows else np.zeros((0, 4 * width * height))
        return SparseFeatureMatrix.from_dense(dense), None
    raise EncodingError(f"unknown scheme {scheme.name!r}")


# --- persistence -----------------------------------------------------------


def write_matrix_tsv(matrix: SparseFeatureMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row\tcol\tvalue\n")
        for r in range(matrix.n_rows):
            cols, vals = matrix.row_items(r)
            for c, v in zip(cols, vals):
                fh.write(f"{r}\t{c}\t{float(v)!r}\n")


def read_matrix_tsv(path, n_rows: int, n_cols: int) -> SparseFeatureMatrix:
    rows: list[dict[int, float]] = [dict() for _ in range(n_rows)]
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "row\tcol\tvalue":
            raise EncodingError(f"bad matrix header in {path}")
        for line in fh:
            r, c, v = line.rstrip("\n").split("\t")
            rows[int(r)][int(c)] = float(v)
    return SparseFeatureMatrix.from_rows(rows, n_cols)


def write_dictionary_tsv(dictionary: KmerDictionary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kmer\tcolumn\n")
        for kmer, col in sorted(dictionary.entries.items(), key=lambda e: e[1]):
            fh.write(f"{kmer}\t{col}\n")


def read_dictionary_tsv(path, k: int | None = None, min_count: int = 1) -> KmerDictionary:
    entries: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "kmer\tcolumn":
            raise EncodingError(f"bad dictionary header in {path}")
        for line in fh:
            kmer, col = line.rstrip("\n").split("\t")
            entries[kmer] = int(col)
    if not entries:
        raise EncodingError(f"empty dictionary file {path}")
    inferred_k = len(next(iter(entries)))
    return KmerDictionary(k=k or inferred_k, entries=entries, min_count=min_count)
