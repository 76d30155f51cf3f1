"""Synthetic two-class DNA corpora with planted discriminative k-mers.

Class 0 is i.i.d. background at a chosen GC content. Class 1 is the same
background with a fixed number of motif copies overwritten at random
non-overlapping offsets, recorded in a manifest so downstream feature
recovery can be checked by substring search. A read simulator with
uniform starts and per-base substitution errors covers the k selection
workflow, which needs error-contaminated read sets rather than clean
genomes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kmerdiff.fasta import SequenceRecord, write_fasta

_BASES = b"ACGT"
_MAX_MOTIF_ATTEMPTS = 1000
_MAX_PLACEMENT_ATTEMPTS = 200


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """Defaults mirror the imbalanced two-species regime the pipeline is
    meant to handle: a large background class against a small positive
    class carrying the planted signal."""

    n_class0: int = 2000
    n_class1: int = 60
    min_length: int = 500
    max_length: int = 1500
    gc_content: float = 0.5
    motifs: tuple[str, ...] = ()
    insertions_per_sequence: int = 1
    read_error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_class0 < 0 or self.n_class1 < 0:
            raise SynthError("class sizes must be >= 0")
        if not 1 <= self.min_length <= self.max_length:
            raise SynthError(
                f"need 1 <= min_length <= max_length, got {self.min_length}..{self.max_length}"
            )
        if not 0.0 <= self.gc_content <= 1.0:
            raise SynthError(f"gc_content must be in [0, 1], got {self.gc_content}")
        if not 0.0 <= self.read_error_rate <= 1.0:
            raise SynthError(f"read_error_rate must be in [0, 1], got {self.read_error_rate}")
        if self.insertions_per_sequence < 0:
            raise SynthError(
                f"insertions_per_sequence must be >= 0, got {self.insertions_per_sequence}"
            )
        if self.motifs:
            lengths = {len(m) for m in self.motifs}
            if len(lengths) != 1:
                raise SynthError(f"motif lengths must be uniform, got {sorted(lengths)}")
            if len(set(self.motifs)) != len(self.motifs):
                raise SynthError("motifs must be pairwise distinct")
            bad = [m for m in self.motifs if set(m) - set("ACGT")]
            if bad:
                raise SynthError(f"motifs must be over ACGT, got {bad[0]!r}")
            if len(self.motifs[0]) > self.min_length:
                raise SynthError(
                    f"motif length {len(self.motifs[0])} exceeds min_length {self.min_length}"
                )
        elif self.insertions_per_sequence > 0 and self.n_class1 > 0:
            raise SynthError("insertions requested but no motifs given")


@dataclass(frozen=True)
class Insertion:
    sequence_id: str
    motif: str
    offset: int


@dataclass(frozen=True)
class SynthResult:
    class0: list[SequenceRecord]
    class1: list[SequenceRecord]
    motifs: tuple[str, ...]
    manifest: tuple[Insertion, ...]


def _base_cutpoints(gc_content: float) -> np.ndarray:
    at = (1.0 - gc_content) / 2.0
    gc = gc_content / 2.0
    return np.cumsum([at, gc, gc, at])  # A, C, G, T


def _random_sequence(rng: np.random.Generator, length: int, cuts: np.ndarray) -> bytearray:
    idx = np.searchsorted(cuts, rng.random(length), side="right")
    return bytearray(np.frombuffer(_BASES, dtype=np.uint8)[idx].tobytes())


def _draw_motif(rng: np.random.Generator, length: int, cuts: np.ndarray) -> str:
    return _random_sequence(rng, length, cuts).decode("ascii")


def sample_motifs(n: int, length: int, gc_content: float = 0.5, seed: int = 0) -> tuple[str, ...]:
    """Draw n distinct motifs from the background base distribution."""
    if n < 1 or length < 1:
        raise SynthError(f"need n >= 1 and length >= 1, got n={n}, length={length}")
    if not 0.0 <= gc_content <= 1.0:
        raise SynthError(f"gc_content must be in [0, 1], got {gc_content}")
    rng = np.random.default_rng(seed)
    cuts = _base_cutpoints(gc_content)
    motifs: list[str] = []
    attempts = 0
    while len(motifs) < n:
        candidate = _draw_motif(rng, length, cuts)
        if candidate not in motifs:
            motifs.append(candidate)
        attempts += 1
        if attempts > _MAX_MOTIF_ATTEMPTS:
            raise SynthError(f"could not draw {n} distinct motifs of length {length}")
    return tuple(motifs)


def _background_fraction(motif: str, records: list[SequenceRecord]) -> float:
    if not records:
        return 0.0
    hits = sum(1 for r in records if motif in r.residues)
    return hits / len(records)


def _place_non_overlapping(
    rng: np.random.Generator, seq_len: int, motif_len: int, count: int
) -> list[int]:
    taken: list[int] = []
    for _ in range(count):
        for _ in range(_MAX_PLACEMENT_ATTEMPTS):
            pos = int(rng.integers(0, seq_len - motif_len + 1))
            if all(abs(pos - p) >= motif_len for p in taken):
                taken.append(pos)
                break
        else:
            raise SynthError(
                f"could not place {count} non-overlapping copies of a "
                f"{motif_len}-mer in {seq_len} bp"
            )
    return taken


def generate_dataset(spec: SynthSpec) -> SynthResult:
    """Build both classes and the insertion manifest.

    Any supplied motif that already occurs by chance in more than 1% of
    the generated class-0 sequences is replaced with a fresh draw, so the
    planted set is genuinely discriminative; the returned motifs are the
    ones actually planted.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_class0 + spec.n_class1 + 1)
    cuts = _base_cutpoints(spec.gc_content)

    class0 = []
    for i in range(spec.n_class0):
        rng = np.random.default_rng(streams[i])
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        class0.append(
            SequenceRecord(id=f"class0_{i}", residues=_random_sequence(rng, length, cuts).decode("ascii"))
        )

    planting = spec.insertions_per_sequence > 0 and spec.n_class1 > 0
    motifs = spec.motifs
    if planting:
        motif_rng = np.random.default_rng(streams[-1])
        replaced = list(motifs)
        for m, motif in enumerate(replaced):
            attempts = 0
            while _background_fraction(replaced[m], class0) > 0.01 or replaced[m] in replaced[:m] + replaced[m + 1 :]:
                replaced[m] = _draw_motif(motif_rng, len(motif), cuts)
                attempts += 1
                if attempts > _MAX_MOTIF_ATTEMPTS:
                    raise SynthError(
                        f"could not find a length-{len(motif)} motif rare in the background"
                    )
        motifs = tuple(replaced)

    class1 = []
    manifest: list[Insertion] = []
    for i in range(spec.n_class1):
        rng = np.random.default_rng(streams[spec.n_class0 + i])
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        seq = _random_sequence(rng, length, cuts)
        record_id = f"class1_{i}"
        if planting:
            k = len(motifs[0])
            positions = _place_non_overlapping(rng, length, k, spec.insertions_per_sequence)
            chosen = [motifs[int(rng.integers(0, len(motifs)))] for _ in positions]
            for pos, motif in sorted(zip(positions, chosen)):
                seq[pos : pos + k] = motif.encode("ascii")
                manifest.append(Insertion(sequence_id=record_id, motif=motif, offset=pos))
        class1.append(SequenceRecord(id=record_id, residues=seq.decode("ascii")))

    return SynthResult(class0=class0, class1=class1, motifs=motifs, manifest=tuple(manifest))


def simulate_reads(
    record: SequenceRecord,
    read_length: int,
    coverage: float,
    error_rate: float,
    seed: int = 0,
) -> list[SequenceRecord]:
    """Uniform-start reads with per-base substitution errors. A substituted
    base always differs from the original, so the measured mismatch rate
    tracks error_rate directly. Each read's true start is kept in its
    description. Read count is round(coverage * genome_len / read_length).
    """
    genome = record.residues.encode("ascii")
    if not 1 <= read_length <= len(genome):
        raise SynthError(
            f"read_length must be in [1, {len(genome)}], got {read_length}"
        )
    if coverage < 0.0:
        raise SynthError(f"coverage must be >= 0, got {coverage}")
    if not 0.0 <= error_rate <= 1.0:
        raise SynthError(f"error_rate must be in [0, 1], got {error_rate}")

    n_reads = int(np.floor(coverage * len(genome) / read_length + 0.5))
    if n_reads == 0:
        return []
    rng = np.random.default_rng(seed)
    code_table = np.full(256, 255, dtype=np.uint8)
    for code, base in enumerate(_BASES):
        code_table[base] = code
    codes = code_table[np.frombuffer(genome, dtype=np.uint8)]

    starts = rng.integers(0, len(genome) - read_length + 1, size=n_reads)
    reads = codes[starts[:, None] + np.arange(read_length)]
    if error_rate > 0.0:
        hit = (rng.random(reads.shape) < error_rate) & (reads <= 3)
        shift = rng.integers(1, 4, size=reads.shape, dtype=np.uint8)
        reads[hit] = (reads[hit] + shift[hit]) % 4
    base_lookup = np.frombuffer(_BASES + b"N" * 252, dtype=np.uint8)
    letters = base_lookup[np.minimum(reads, 4)]
    return [
        SequenceRecord(
            id=f"{record.id}#r{i}",
            residues=letters[i].tobytes().decode("ascii"),
            description=f"start={int(starts[i])}",
        )
        for i in range(n_reads)
    ]


# --- artifacts ---------------------------------------------------------------


def write_manifest_tsv(result: SynthResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sequence_id\tmotif\toffset\n")
        for row in result.manifest:
            fh.write(f"{row.sequence_id}\t{row.motif}\t{row.offset}\n")


def read_manifest_tsv(path: str | Path) -> tuple[Insertion, ...]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "sequence_id\tmotif\toffset":
            raise SynthError(f"unexpected manifest header {header!r}")
        for line in fh:
            sequence_id, motif, offset = line.rstrip("\n").split("\t")
            rows.append(Insertion(sequence_id=sequence_id, motif=motif, offset=int(offset)))
    return tuple(rows)


def write_dataset(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    """class0.fasta, class1.fasta, manifest.tsv, motifs.txt under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "class0": out / "class0.fasta",
        "class1": out / "class1.fasta",
        "manifest": out / "manifest.tsv",
        "motifs": out / "motifs.txt",
    }
    write_fasta(result.class0, paths["class0"])
    write_fasta(result.class1, paths["class1"])
    write_manifest_tsv(result, paths["manifest"])
    paths["motifs"].write_text("".join(f"{m}\n" for m in result.motifs), encoding="utf-8")
    return paths
