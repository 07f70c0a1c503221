"""Read mapping: head prediction refined by an exhaustive local-alignment
scan inside a window.

Scoring is the position-wise base match count (no indels) of the read and
its reverse complement at every candidate offset.  Ties break by smaller
distance to the predicted coordinate, then forward strand, then smaller
coordinate; a read is flagged ambiguous when distinct offsets share the
maximum score.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .encoder import encode
from .noise import ReadSet
from .seqcore import FORWARD, REVCOMP, one_hot_batch

_CODE = {"A": 0, "C": 1, "G": 2, "T": 3}


@dataclass
class MappingRecord:
    read_id: str
    pred_coord: float      # head prediction, may be fractional (mse head)
    refined_coord: int
    strand: str
    score: int
    ambiguous: bool


def _codes(bases):
    return np.array([_CODE[b] for b in bases], dtype=np.int8)


def local_align(read, genome, pred_coord, window):
    """Best-match offset for a read near `pred_coord`.

    Returns (refined_coord, strand, score, ambiguous).  Offsets searched are
    max(0, c-window/2) .. min(L-len, c+window/2) on both strands.
    """
    bases = read.bases if hasattr(read, "bases") else read
    rl = len(bases)
    if window < rl:
        raise ValueError(f"window {window} smaller than read length {rl}")
    c0 = int(round(float(pred_coord)))
    half = window // 2
    lo = max(0, c0 - half)
    hi = min(genome.length - rl, c0 + half)
    if hi < lo:
        raise ValueError(
            f"degenerate window: no valid offsets near {pred_coord} "
            f"(genome length {genome.length}, read length {rl})")
    fwd = _codes(bases)
    rev = (3 - fwd)[::-1].copy()
    sf, sr = _kernels.window_match_scores(genome.codes, fwd, rev, lo, hi - lo + 1)
    best = int(max(sf.max(), sr.max()))
    cands = [(lo + int(o), FORWARD) for o in np.flatnonzero(sf == best)]
    cands += [(lo + int(o), REVCOMP) for o in np.flatnonzero(sr == best)]
    cands.sort(key=lambda t: (abs(t[0] - float(pred_coord)), t[1] != FORWARD, t[0]))
    offset, strand = cands[0]
    ambiguous = len({o for o, _ in cands}) >= 2
    return offset, strand, best, ambiguous


def map_reads(readset, encoder_model, head, genome, window=5000):
    """Predict and refine a coordinate for every read, order-stable by id."""
    if len(readset) == 0:
        return []
    batch = one_hot_batch([r.bases for r in readset.reads])
    H, _ = encode(encoder_model, batch)
    preds = head.predict(H).coords
    records = []
    for rid, read, pred in zip(readset.ids, readset.reads, preds):
        refined, strand, score, amb = local_align(read, genome, pred, window)
        records.append(MappingRecord(read_id=rid, pred_coord=float(pred),
                                     refined_coord=refined, strand=strand,
                                     score=score, ambiguous=amb))
    return records


def evaluate_mapping(records, truth):
    """Exact-coordinate accuracy plus per-read absolute errors.

    truth: ReadSet or dict read_id -> coordinate.  Records and truth must
    carry the same ids.
    """
    if isinstance(truth, ReadSet):
        truth = dict(zip(truth.ids, (int(c) for c in truth.coords)))
    errors = []
    correct = 0
    for rec in records:
        if rec.read_id not in truth:
            raise KeyError(f"read id {rec.read_id!r} missing from truth")
        c = truth[rec.read_id]
        errors.append(abs(rec.refined_coord - c))
        if rec.refined_coord == c:
            correct += 1
    accuracy = correct / len(records) if records else float("nan")
    return {"accuracy": accuracy, "errors": np.array(errors, dtype=np.int64),
            "n": len(records)}


def save_mapping(path, records):
    """TSV: read_id, pred_coord, refined_coord, strand, score, ambiguous."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        for r in records:
            writer.writerow([r.read_id, f"{r.pred_coord:.2f}", r.refined_coord,
                             r.strand, r.score, int(r.ambiguous)])


def load_mapping(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row:
                continue
            records.append(MappingRecord(read_id=row[0], pred_coord=float(row[1]),
                                         refined_coord=int(row[2]), strand=row[3],
                                         score=int(row[4]), ambiguous=bool(int(row[5]))))
    return records
