"""Augmentation for contrastive training and a native damaged-read simulator.

The augmentation draws a positive pair of k-mers at most d bp apart, then
independently corrupts each with a flat substitution rate, elevated C->T /
G->A rates in the first/last `deam_end_len` bases, and a 50% reverse
complement flip.  The read simulator adds the fragment-end structure: C->T
in a geometric-length 5' overhang and G->A in the 3' overhang at a high
single-strand rate, a low double-strand rate elsewhere, plus flat
sequencing errors.

All routines are pure functions of (inputs, rng state).
"""

from dataclasses import dataclass, field

import numpy as np

from .seqcore import BASES, FORWARD, REVCOMP, Genome, Kmer, one_hot_from_codes

_A, _C, _G, _T = 0, 1, 2, 3


@dataclass
class AugmentConfig:
    k: int = 30
    d: int = 50
    flat_sub_rate: float = 0.01
    deam_rate: float = 0.10
    deam_end_len: int = 10
    revcomp_prob: float = 0.5
    # resolves the orientation ambiguity of end-deamination: False damages the
    # k-mer as extracted (before any revcomp flip), True damages after it
    deam_after_revcomp: bool = False

    def __post_init__(self):
        for name in ("flat_sub_rate", "deam_rate", "revcomp_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.deam_end_len > self.k:
            raise ValueError("deam_end_len exceeds k")
        if self.d < 0:
            raise ValueError("d must be >= 0")


@dataclass
class DamageConfig:
    fragment_len: int = 30
    overhang_geom_p: float = 0.4
    deam_ss: float = 0.7
    deam_ds: float = 0.01
    seq_error_rate: float = 0.01

    def __post_init__(self):
        for name in ("overhang_geom_p", "deam_ss", "deam_ds", "seq_error_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.fragment_len < 1:
            raise ValueError("fragment_len must be >= 1")
        if self.overhang_geom_p <= 0.0:
            raise ValueError("overhang_geom_p must be > 0")


@dataclass
class ReadSet:
    source: str
    reads: list = field(default_factory=list)
    ids: list = None

    def __post_init__(self):
        if self.ids is None:
            self.ids = [f"r{i:06d}" for i in range(len(self.reads))]
        if len(self.ids) != len(self.reads):
            raise ValueError("ids and reads length mismatch")

    def __len__(self):
        return len(self.reads)

    def __iter__(self):
        return iter(self.reads)

    @property
    def coords(self):
        return np.array([r.coord for r in self.reads], dtype=np.int64)


def _draw_valid_start(genome, width, lo, hi, rng, max_tries=1000):
    """Uniform start in [lo, hi] whose window is N-free."""
    clean = not (genome.codes < 0).any()
    for _ in range(max_tries):
        c = int(rng.integers(lo, hi + 1))
        if clean or not (genome.codes[c:c + width] < 0).any():
            return c
    raise RuntimeError(f"no N-free window of width {width} found in {max_tries} draws")


def sample_positive_pair(genome, cfg, rng):
    """Un-noised positive k-mer pair: c_i ~ U(0, L-k-d), c_j ~ U(c_i, c_i+d)."""
    lmax = genome.length - cfg.k - cfg.d
    if lmax < 0 or genome.length <= cfg.k + cfg.d:
        raise ValueError(f"genome length {genome.length} must exceed k+d = {cfg.k + cfg.d}")
    for _ in range(1000):
        ci = _draw_valid_start(genome, cfg.k, 0, lmax, rng)
        cj = int(rng.integers(ci, ci + cfg.d + 1))
        if not (genome.codes[cj:cj + cfg.k] < 0).any():
            break
    else:
        raise RuntimeError("could not draw an N-free positive pair")
    ki = Kmer(genome.bases[ci:ci + cfg.k], genome=genome.name, coord=ci, strand=FORWARD)
    kj = Kmer(genome.bases[cj:cj + cfg.k], genome=genome.name, coord=cj, strand=FORWARD)
    return ki, kj


def _flat_substitute(codes, rate, rng):
    hits = np.flatnonzero(rng.random(codes.shape[0]) < rate)
    if hits.size:
        codes[hits] = (codes[hits] + 1 + rng.integers(0, 3, hits.size)) % 4


def _end_deamination(codes, rate, end_len, rng):
    k = codes.shape[0]
    head = codes[:end_len]
    flips = (head == _C) & (rng.random(end_len) < rate)
    head[flips] = _T
    tail = codes[k - end_len:]
    flips = (tail == _G) & (rng.random(end_len) < rate)
    tail[flips] = _A


def apply_noise(km, cfg, rng):
    """Corrupt one k-mer (deamination at the ends, flat substitutions,
    revcomp coin) and return its one-hot encoding."""
    codes = np.array([BASES.index(b) for b in km.bases], dtype=np.int8)
    if cfg.deam_after_revcomp:
        if rng.random() < cfg.revcomp_prob:
            codes = (3 - codes)[::-1].copy()
        _end_deamination(codes, cfg.deam_rate, cfg.deam_end_len, rng)
        _flat_substitute(codes, cfg.flat_sub_rate, rng)
    else:
        _end_deamination(codes, cfg.deam_rate, cfg.deam_end_len, rng)
        _flat_substitute(codes, cfg.flat_sub_rate, rng)
        if rng.random() < cfg.revcomp_prob:
            codes = (3 - codes)[::-1].copy()
    return one_hot_from_codes(codes)


def augment_pair(genome, cfg, rng):
    """Positive pair sampler composed with independent noising.

    Returns (x_i, x_j, c_i, c_j) with the one-hot k-mers and their true
    forward-strand coordinates.
    """
    ki, kj = sample_positive_pair(genome, cfg, rng)
    xi = apply_noise(ki, cfg, rng)
    xj = apply_noise(kj, cfg, rng)
    return xi, xj, ki.coord, kj.coord


def simulate_reads(genome, n, cfg, rng):
    """Simulate n damaged reads with known coordinates and strands.

    Per read: uniform start, uniform strand, geometric 5'/3' overhangs
    (support 0, 1, 2, ..., truncated at fragment_len) deaminated at the
    single-strand rate, double-strand deamination elsewhere, then flat
    sequencing errors.  Damage is applied in read orientation.
    """
    if n <= 0:
        raise ValueError(f"read count must be positive, got {n}")
    flen = cfg.fragment_len
    if genome.length < flen:
        raise ValueError(f"genome shorter than fragment_len {flen}")

    valid = genome.valid_starts(flen)
    choices = np.flatnonzero(valid)
    if choices.size == 0:
        raise ValueError("no N-free windows available")
    starts = choices[rng.integers(0, choices.size, n)]
    is_rc = rng.random(n) < 0.5

    frag = genome.codes[starts[:, None] + np.arange(flen)].astype(np.int8)
    frag[is_rc] = (3 - frag[is_rc])[:, ::-1]

    o5 = np.minimum(rng.geometric(cfg.overhang_geom_p, n) - 1, flen)
    o3 = np.minimum(rng.geometric(cfg.overhang_geom_p, n) - 1, flen)
    pos = np.arange(flen)[None, :]
    p_ct = np.where(pos < o5[:, None], cfg.deam_ss, cfg.deam_ds)
    p_ga = np.where(pos >= flen - o3[:, None], cfg.deam_ss, cfg.deam_ds)
    u = rng.random((n, flen))
    frag[(frag == _C) & (u < p_ct)] = _T
    u = rng.random((n, flen))
    frag[(frag == _G) & (u < p_ga)] = _A

    err = rng.random((n, flen)) < cfg.seq_error_rate
    if err.any():
        jump = rng.integers(0, 3, int(err.sum()))
        frag[err] = (frag[err] + 1 + jump) % 4

    reads = []
    for i in range(n):
        bases = "".join(BASES[c] for c in frag[i])
        strand = REVCOMP if is_rc[i] else FORWARD
        reads.append(Kmer(bases, genome=genome.name, coord=int(starts[i]), strand=strand))
    return ReadSet(source=genome.name, reads=reads)


def save_readset(path, readset):
    """TSV columns: read_id, sequence, true_coordinate, strand."""
    with open(path, "w", encoding="utf-8") as fh:
        for rid, r in zip(readset.ids, readset.reads):
            fh.write(f"{rid}\t{r.bases}\t{r.coord}\t{r.strand}\n")


def load_readset(path, source=""):
    reads = []
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            rid, bases, coord, strand = line.split("\t")
            ids.append(rid)
            reads.append(Kmer(bases, genome=source or None, coord=int(coord), strand=strand))
    return ReadSet(source=source, reads=reads, ids=ids)
