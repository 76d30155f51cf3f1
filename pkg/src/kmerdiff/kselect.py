"""K-mer abundance spectra and data-driven selection of the k-mer size.

The decision rule: for each candidate k, count every clean k-mer window
in the corpus, histogram the per-k-mer abundances, cut away the
low-abundance error peak at the spectrum valley, and score k by the
number of distinct k-mers that survive. The k with the largest estimate
wins (ties break to the smallest k).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from kmerdiff.fasta import SequenceRecord

MAX_PACKED_K = 32  # 2 bits per base in a uint64

_CODE_TABLE = np.full(256, 255, dtype=np.uint8)
for _i, _b in enumerate(b"ACGT"):
    _CODE_TABLE[_b] = _i


class KSelectError(ValueError):
    pass


@dataclass(frozen=True)
class KmerSpectrum:
    """Abundance histogram: histogram[a] = number of distinct k-mers seen
    exactly `a` times in the corpus. Zero entries are omitted."""

    k: int
    histogram: dict[int, int]

    def total_distinct(self) -> int:
        return sum(self.histogram.values())

    def total_mass(self) -> int:
        return sum(a * c for a, c in self.histogram.items())


@dataclass(frozen=True)
class KEstimate:
    k: int
    valley: int
    genomic_kmers: int


@dataclass(frozen=True)
class KSelectionReport:
    per_k: tuple[KEstimate, ...]
    chosen_k: int


def _corpus_codes(corpus: Iterable[SequenceRecord]) -> np.ndarray:
    """Concatenated base codes with one invalid separator between records,
    so windows never straddle a record boundary."""
    pieces = []
    for rec in corpus:
        if pieces:
            pieces.append(np.full(1, 255, dtype=np.uint8))
        pieces.append(_CODE_TABLE[np.frombuffer(rec.residues.encode("ascii"), dtype=np.uint8)])
    if not pieces:
        return np.empty(0, dtype=np.uint8)
    return np.concatenate(pieces)


def _packed_windows(codes: np.ndarray, k: int) -> np.ndarray:
    """2-bit packed keys of every clean k-window over a code array."""
    n = codes.size
    if n < k:
        return np.empty(0, dtype=np.uint64)
    n_windows = n - k + 1
    invalid = codes == 255
    acc = np.zeros(n_windows, dtype=np.uint64)
    safe = np.where(invalid, np.uint8(0), codes).astype(np.uint64)
    for j in range(k):
        acc = (acc << np.uint64(2)) | safe[j : j + n_windows]
    if invalid.any():
        bad = np.cumsum(invalid)
        window_bad = bad[k - 1 :].copy()
        window_bad[1:] -= bad[: n_windows - 1]
        return acc[window_bad == 0]
    return acc


def _histogram_of(keys: np.ndarray) -> dict[int, int]:
    _, counts = np.unique(keys, return_counts=True)
    abundances, n_distinct = np.unique(counts, return_counts=True)
    return {int(a): int(c) for a, c in zip(abundances, n_distinct)}


def kmer_spectrum(
    corpus: Iterable[SequenceRecord], k: int, threads: int = 1
) -> KmerSpectrum:
    """Exact abundance histogram over all clean k-windows in the corpus.

    With threads > 1 the distinct keys are sharded by value; per-shard
    histograms add up to the global one, so the result does not depend
    on scheduling.
    """
    return _spectrum_from_codes(_corpus_codes(corpus), k, threads)


def _spectrum_from_codes(codes: np.ndarray, k: int, threads: int = 1) -> KmerSpectrum:
    if k < 1:
        raise KSelectError(f"k must be >= 1, got {k}")
    if k > MAX_PACKED_K:
        raise KSelectError(f"k={k} exceeds the packed-key limit of {MAX_PACKED_K}")
    keys = _packed_windows(codes, k)
    if not keys.size:
        raise KSelectError(f"no clean {k}-mer windows in the corpus")
    if threads <= 1:
        return KmerSpectrum(k=k, histogram=_histogram_of(keys))
    shard_of = keys % np.uint64(threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        shards = list(pool.map(lambda s: _histogram_of(keys[shard_of == s]), range(threads)))
    merged: dict[int, int] = {}
    for hist in shards:
        for a, c in hist.items():
            merged[a] = merged.get(a, 0) + c
    return KmerSpectrum(k=k, histogram=merged)


def smooth_counts(abundances: np.ndarray, counts: np.ndarray, window: int) -> np.ndarray:
    """Moving average over the dense abundance axis (odd window, absent
    abundances count as zero), sampled back at the given abundances."""
    if window % 2 == 0 or window < 1:
        raise KSelectError(f"smoothing window must be odd and >= 1, got {window}")
    if window == 1:
        return counts.astype(np.float64)
    lo, hi = int(abundances.min()), int(abundances.max())
    dense = np.zeros(hi - lo + 1, dtype=np.float64)
    dense[abundances - lo] = counts
    half = window // 2
    padded = np.pad(dense, half)
    kernel = np.ones(window) / window
    smoothed = np.convolve(padded, kernel, mode="valid")
    return smoothed[abundances - lo]


def find_valley(spectrum: KmerSpectrum, smooth_window: int = 1) -> int:
    """Smallest abundance >= 2 that is a strict local minimum among the
    abundances present in the histogram. A spectrum with no such dip
    (monotone decreasing, single bin) returns 1: there is no error peak
    to cut away.
    """
    if not spectrum.histogram:
        raise KSelectError("empty spectrum")
    abundances = np.array(sorted(spectrum.histogram), dtype=np.int64)
    counts = np.array([spectrum.histogram[int(a)] for a in abundances], dtype=np.int64)
    values = smooth_counts(abundances, counts, smooth_window)
    for i in range(1, len(abundances) - 1):
        if abundances[i] < 2:
            continue
        if values[i - 1] > values[i] < values[i + 1]:
            return int(abundances[i])
    return 1


def estimate_genomic_kmers(spectrum: KmerSpectrum, smooth_window: int = 1) -> tuple[int, int]:
    """(valley, estimate): distinct k-mers at abundance strictly above the
    valley. Valley 1 means no error peak, so every distinct k-mer counts.
    """
    valley = find_valley(spectrum, smooth_window)
    if valley == 1:
        return valley, spectrum.total_distinct()
    return valley, sum(c for a, c in spectrum.histogram.items() if a > valley)


def scan_k(
    corpus: Sequence[SequenceRecord],
    k_min: int,
    k_max: int,
    step: int = 1,
    threads: int = 1,
    smooth_window: int = 1,
) -> tuple[KSelectionReport, list[KmerSpectrum]]:
    """select_optimal_k plus the per-k abundance spectra the report was
    derived from, for callers that also want to plot them."""
    if not (1 <= k_min <= k_max):
        raise KSelectError(f"need 1 <= k_min <= k_max, got {k_min}..{k_max}")
    if step < 1:
        raise KSelectError(f"step must be >= 1, got {step}")
    codes = _corpus_codes(corpus)
    rows = []
    spectra = []
    for k in range(k_min, k_max + 1, step):
        spectrum = _spectrum_from_codes(codes, k, threads)
        valley, estimate = estimate_genomic_kmers(spectrum, smooth_window)
        rows.append(KEstimate(k=k, valley=valley, genomic_kmers=estimate))
        spectra.append(spectrum)
    best = max(rows, key=lambda r: (r.genomic_kmers, -r.k))
    return KSelectionReport(per_k=tuple(rows), chosen_k=best.k), spectra


def select_optimal_k(
    corpus: Sequence[SequenceRecord],
    k_min: int,
    k_max: int,
    step: int = 1,
    threads: int = 1,
    smooth_window: int = 1,
) -> KSelectionReport:
    """Scan k over [k_min, k_max] and pick the k whose spectrum yields the
    most estimated genomic k-mers; ties break to the smallest k."""
    report, _ = scan_k(corpus, k_min, k_max, step, threads, smooth_window)
    return report


def write_report_tsv(report: KSelectionReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k\tvalley\tgenomic_kmers\n")
        for row in report.per_k:
            fh.write(f"{row.k}\t{row.valley}\t{row.genomic_kmers}\n")
        fh.write(f"# chosen_k={report.chosen_k}\n")
