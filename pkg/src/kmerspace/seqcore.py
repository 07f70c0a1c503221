"""Genome ingestion, k-mer extraction, one-hot encoding, reverse complements.

Coordinates are 0-based positions of a k-mer's first nucleotide on the
forward strand; a revcomp-strand k-mer keeps the coordinate of the forward
locus it covers.  Base column order is A, C, G, T, so the reverse complement
of a one-hot matrix is obtained by flipping both axes.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BASES = "ACGT"
FORWARD = "+"
REVCOMP = "-"

_CODE = {"A": 0, "C": 1, "G": 2, "T": 3, "N": -1}
_COMPLEMENT = {"A": "T", "C": "G", "G": "C", "T": "A", "N": "N"}
_EYE4 = np.eye(4, dtype=np.float32)


class FastaError(ValueError):
    pass


@dataclass
class Genome:
    """A named ACGT sequence defining one coordinate space.

    With the "mask" parse policy the sequence may contain N; those positions
    are coded -1 and any k-mer window overlapping them is excluded.
    """

    name: str
    bases: str
    codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.bases:
            raise FastaError(f"genome {self.name!r} is empty")
        self.codes = np.array([_CODE[b] for b in self.bases], dtype=np.int8)

    @property
    def length(self):
        return len(self.bases)

    def valid_starts(self, k):
        """Boolean mask over start coordinates 0..L-k of N-free windows."""
        if k < 1 or k > self.length:
            raise ValueError(f"k={k} outside [1, {self.length}]")
        n_win = self.length - k + 1
        bad = self.codes < 0
        if not bad.any():
            return np.ones(n_win, dtype=bool)
        hits = np.convolve(bad.astype(np.int32), np.ones(k, dtype=np.int32), mode="valid")
        return hits == 0


@dataclass
class Kmer:
    """A length-k base string, optionally tagged with its genomic origin."""

    bases: str
    genome: Optional[str] = None
    coord: Optional[int] = None
    strand: Optional[str] = None

    def __post_init__(self):
        if not self.bases:
            raise ValueError("empty k-mer")

    @property
    def k(self):
        return len(self.bases)


def parse_fasta(text, policy="reject"):
    """Parse FASTA text into Genomes.

    policy="reject" errors on any non-ACGT symbol; policy="mask" admits N
    (recorded and excluded from windows downstream).  Sequences are
    uppercased and line wraps joined.
    """
    if policy not in ("reject", "mask"):
        raise ValueError(f"unknown N policy {policy!r}")
    records = []
    name = None
    chunks = []

    def flush():
        if name is None:
            return
        seq = "".join(chunks).upper()
        if not seq:
            raise FastaError(f"record {name!r} has no sequence")
        allowed = set("ACGTN") if policy == "mask" else set("ACGT")
        for pos, ch in enumerate(seq):
            if ch not in allowed:
                raise FastaError(f"record {name!r}: invalid symbol {ch!r} at position {pos}")
        records.append(Genome(name=name, bases=seq))

    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush()
            name = line[1:].split()[0] if line[1:].strip() else ""
            if not name:
                raise FastaError("header line with empty name")
            chunks = []
        else:
            if name is None:
                raise FastaError("sequence data before any '>' header")
            chunks.append(line)
    flush()
    if not records:
        raise FastaError("no FASTA records found")
    return records


def parse_fasta_file(path, policy="reject"):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_fasta(fh.read(), policy=policy)


def write_fasta(path, genomes, width=70):
    with open(path, "w", encoding="utf-8") as fh:
        for g in genomes:
            fh.write(f">{g.name}\n")
            for i in range(0, g.length, width):
                fh.write(g.bases[i:i + width] + "\n")


def extract_kmers(genome, k):
    """All N-free k-mers of `genome` in coordinate order (0 .. L-k)."""
    if k < 1 or k > genome.length:
        raise ValueError(f"k={k} outside [1, {genome.length}]")
    valid = genome.valid_starts(k)
    return [
        Kmer(genome.bases[c:c + k], genome=genome.name, coord=c, strand=FORWARD)
        for c in np.flatnonzero(valid)
    ]


def revcomp_bases(bases):
    """Biological reverse complement of a base string."""
    return "".join(_COMPLEMENT[b] for b in reversed(bases))


def one_hot(km):
    """k x 4 one-hot matrix of a Kmer or base string (columns A,C,G,T)."""
    bases = km.bases if isinstance(km, Kmer) else km
    codes = np.array([_CODE[b] for b in bases], dtype=np.int64)
    if (codes < 0).any():
        raise ValueError("cannot one-hot encode N")
    return _EYE4[codes]


def one_hot_from_codes(codes):
    codes = np.asarray(codes)
    if (codes < 0).any():
        raise ValueError("cannot one-hot encode masked positions")
    return _EYE4[codes]


def reverse_complement(x):
    """Reverse complement in one-hot space: flip both axes."""
    x = np.asarray(x)
    return np.ascontiguousarray(x[..., ::-1, ::-1])


def decode_one_hot(x):
    """Inverse of one_hot; errors unless every row is exactly one-hot."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != 4:
        raise ValueError(f"expected (k, 4) matrix, got {x.shape}")
    if not np.all((x == 0) | (x == 1)) or not np.all(x.sum(axis=1) == 1):
        raise ValueError("matrix rows are not one-hot")
    idx = x.argmax(axis=1)
    return Kmer("".join(BASES[i] for i in idx))


def one_hot_batch(kmers):
    """Stack k-mers (strings, Kmers or (k,4) arrays) into (N, k, 4) float32."""
    rows = []
    for km in kmers:
        if isinstance(km, np.ndarray):
            rows.append(np.asarray(km, dtype=np.float32))
        else:
            rows.append(one_hot(km))
    return np.stack(rows)
