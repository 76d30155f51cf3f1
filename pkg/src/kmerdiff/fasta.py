"""Streaming FASTA ingestion, normalization, length statistics, and chunking."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

GZIP_MAGIC = b"\x1f\x8b"

# Byte translation: a/c/g/t upcased, ACGT kept, everything else becomes N.
# Whitespace is deleted separately.
_WHITESPACE = b" \t\r\n\v\f"
_NORM_TABLE = bytes(
    b if b in b"ACGT" else (b - 32 if b in b"acgt" else ord("N"))
    for b in range(256)
)


class FastaParseError(ValueError):
    """Malformed FASTA input, with the 1-based line number of the offense."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SequenceRecord:
    """One FASTA entry. `residues` is upper-case over the alphabet ACGTN."""

    id: str
    residues: str
    description: str = ""

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")

    @property
    def header(self) -> str:
        return f"{self.id} {self.description}".rstrip()

    def __len__(self) -> int:
        return len(self.residues)


@dataclass
class SequenceStats:
    """Length statistics over a set of records.

    Aggregates are None when there are no records. An entry is an IQR
    outlier iff its length falls outside [Q1 - 1.5*IQR, Q3 + 1.5*IQR],
    with quartiles interpolated linearly between order statistics.
    """

    count: int
    lengths: list[int]
    min: int | None
    median: float | None
    mean: float | None
    max: int | None
    iqr_outliers: list[tuple[int, int]]


def normalize_residues(raw: bytes | str) -> str:
    """Upper-case, strip whitespace, and map any non-ACGT symbol to N."""
    data = raw.encode("ascii", errors="replace") if isinstance(raw, str) else raw
    return data.translate(_NORM_TABLE, _WHITESPACE).decode("ascii")


def _open_source(source: str | Path | BinaryIO) -> tuple[BinaryIO, bool]:
    """Return a binary handle (gzip-wrapped if magic bytes match) and
    whether this function owns closing it."""
    owns = False
    if isinstance(source, (str, Path)):
        handle: BinaryIO = open(source, "rb")
        owns = True
    else:
        handle = source
    buffered = handle if isinstance(handle, io.BufferedReader) else io.BufferedReader(handle)  # type: ignore[arg-type]
    if buffered.peek(2)[:2] == GZIP_MAGIC:
        return gzip.open(buffered, "rb"), owns  # type: ignore[return-value]
    return buffered, owns


def parse_fasta(source: str | Path | BinaryIO) -> Iterator[SequenceRecord]:
    """Stream records from a plain or gzip-compressed FASTA source.

    Multi-line bodies are concatenated and normalized (upper case,
    non-ACGT mapped to N). Raises FastaParseError on sequence data before
    any header or on a record with an empty body.
    """
    handle, owns = _open_source(source)
    try:
        header: str | None = None
        header_line = 0
        chunks: list[bytes] = []
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith(b">"):
                if header is not None:
                    yield _finish_record(header, chunks, header_line)
                header = line[1:].decode("utf-8")
                header_line = lineno
                chunks = []
            else:
                if header is None:
                    raise FastaParseError("sequence data before any header", lineno)
                chunks.append(line)
        if header is not None:
            yield _finish_record(header, chunks, header_line)
    finally:
        if owns:
            handle.close()


def _finish_record(header: str, chunks: list[bytes], header_line: int) -> SequenceRecord:
    parts = header.split(None, 1)
    if not parts:
        raise FastaParseError("empty header", header_line)
    residues = normalize_residues(b"".join(chunks))
    if not residues:
        raise FastaParseError(f"record {parts[0]!r} has an empty body", header_line)
    description = parts[1] if len(parts) > 1 else ""
    return SequenceRecord(id=parts[0], residues=residues, description=description)


def write_fasta(
    records: Iterable[SequenceRecord],
    sink: str | Path | BinaryIO,
    line_width: int = 60,
) -> None:
    """Write records as FASTA with bodies wrapped at `line_width` columns."""
    if line_width < 1:
        raise ValueError(f"line_width must be >= 1, got {line_width}")
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as handle:
            _write_records(records, handle, line_width)
    else:
        _write_records(records, sink, line_width)


def _write_records(records: Iterable[SequenceRecord], handle: BinaryIO, width: int) -> None:
    for rec in records:
        handle.write(f">{rec.header}\n".encode("utf-8"))
        body = rec.residues.encode("ascii")
        for i in range(0, len(body), width):
            handle.write(body[i : i + width])
            handle.write(b"\n")


def fasta_bytes(records: Iterable[SequenceRecord], line_width: int = 60) -> bytes:
    buf = io.BytesIO()
    write_fasta(records, buf, line_width)
    return buf.getvalue()


def sequence_stats(records: Iterable[SequenceRecord | int]) -> SequenceStats:
    """Length statistics with 1.5*IQR outlier flagging (linear-interpolated quartiles).

    Accepts records or pre-computed lengths.
    """
    lengths = [r if isinstance(r, int) else len(r) for r in records]
    if not lengths:
        return SequenceStats(0, [], None, None, None, None, [])
    arr = np.asarray(lengths, dtype=np.int64)
    q1, q3 = np.percentile(arr, [25, 75], method="linear")
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    outliers = [(i, n) for i, n in enumerate(lengths) if n < lo or n > hi]
    return SequenceStats(
        count=len(lengths),
        lengths=lengths,
        min=int(arr.min()),
        median=float(np.median(arr)),
        mean=float(arr.mean()),
        max=int(arr.max()),
        iqr_outliers=outliers,
    )


def chunk_sequence(record: SequenceRecord, window: int, keep_tail: bool = True) -> list[SequenceRecord]:
    """Split a record into consecutive non-overlapping windows.

    Chunk ids are "{parent_id}#c{index}". With keep_tail the final short
    remainder is emitted, so the chunks concatenate back to the parent.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    chunks = []
    for index, start in enumerate(range(0, len(record.residues), window)):
        piece = record.residues[start : start + window]
        if len(piece) < window and not keep_tail:
            break
        chunks.append(
            SequenceRecord(id=f"{record.id}#c{index}", residues=piece, description=record.description)
        )
    return chunks
