"""Embedding diagnostics: brute-force k-NN with genomic-distance statistics,
2-component PCA, mapping-error eCDF, inversion scanning and neighbor
coordinate distributions.

Distances are Euclidean; on unit-norm rows the ordering coincides with
cosine distance.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .encoder import encode
from .mapper import local_align
from .seqcore import Kmer, one_hot_batch


@dataclass
class EmbeddingIndex:
    genome_name: str
    Z: np.ndarray          # (N, D) unit rows
    coords: np.ndarray     # (N,) genomic coordinates
    k: int

    def __len__(self):
        return self.Z.shape[0]


def build_index(encoder_model, genome, stride=1, chunk=512):
    """Embed every stride-th N-free k-mer with its coordinate."""
    k = encoder_model.config.k
    starts = np.flatnonzero(genome.valid_starts(k))[::stride]
    kmers = [genome.bases[c:c + k] for c in starts]
    _, Z = encode(encoder_model, one_hot_batch(kmers), chunk=chunk)
    return EmbeddingIndex(genome_name=genome.name, Z=Z,
                          coords=np.asarray(starts, dtype=np.int64), k=k)


def knn(index, query, k_neighbors):
    """Exact brute-force nearest rows by Euclidean distance.

    Returns (row_indices, distances) ascending; ties break by row index.
    """
    Z = index.Z if isinstance(index, EmbeddingIndex) else np.asarray(index)
    if k_neighbors > Z.shape[0]:
        raise ValueError(f"K={k_neighbors} exceeds index size {Z.shape[0]}")
    q = np.asarray(query, dtype=Z.dtype).reshape(-1)
    d = np.linalg.norm(Z - q[None, :], axis=1)
    order = np.argsort(d, kind="stable")[:k_neighbors]
    return order, d[order]


@dataclass
class KnnDistanceStats:
    means: np.ndarray       # per-row mean |c_self - c_neighbor| over K nearest
    median: float
    hist: np.ndarray
    bin_edges: np.ndarray


def mean_knn_genomic_distance(index, k_neighbors=10, bins=50, chunk=512):
    """Distribution of each row's mean genomic distance to its K nearest
    embedding neighbors (self excluded)."""
    Z = index.Z
    coords = index.coords.astype(np.float64)
    n = Z.shape[0]
    if k_neighbors >= n:
        raise ValueError("need more rows than neighbors")
    means = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        # squared distance on unit rows is monotone in the dot product
        sims = Z[lo:hi] @ Z.T
        sims[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        nn = np.argpartition(-sims, k_neighbors - 1, axis=1)[:, :k_neighbors]
        means[lo:hi] = np.abs(coords[nn] - coords[lo:hi, None]).mean(axis=1)
    hist, edges = np.histogram(means, bins=bins)
    return KnnDistanceStats(means=means, median=float(np.median(means)),
                            hist=hist, bin_edges=edges)


def pca2(Z, max_iter=500, tol=1e-10, probe_seed=0):
    """Top-2 principal components by power iteration with deflation.

    Returns (projection (N, 2), explained-variance fractions (2,)).  The
    sign convention makes each eigenvector's largest-magnitude entry
    positive.
    """
    X = np.asarray(Z, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError("pca2 needs at least 3 rows")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (X.shape[0] - 1)
    total = float(np.trace(cov))
    if total < 1e-12:
        raise ValueError("zero-variance input")
    rng = np.random.default_rng(probe_seed)
    comps = []
    lams = []
    work = cov.copy()
    for _ in range(2):
        v = rng.standard_normal(cov.shape[0])
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = work @ v
            nw = np.linalg.norm(w)
            if nw < 1e-300:
                break
            w /= nw
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        lam = float(v @ work @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        lams.append(lam)
        work = work - lam * np.outer(v, v)
    comps = np.stack(comps, axis=1)
    proj = Xc @ comps
    explained = np.array(lams) / total
    return proj, explained


def ecdf(errors, thresholds=None):
    """Empirical CDF with the strict convention eCDF(t) = mean(err < t).

    Returns (thresholds, values); default thresholds cover every step
    (each distinct error and the point just past it).
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("ecdf needs at least one error value")
    if thresholds is None:
        u = np.unique(errors)
        thresholds = np.unique(np.concatenate([u, u + 1]))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    values = (errors[None, :] < thresholds[:, None]).mean(axis=1)
    return thresholds, values


@dataclass
class InversionReport:
    read_ids: list
    coords: np.ndarray          # predicted (refined) coordinate per scanned read
    distances: np.ndarray       # embedding distance between the end k-mers
    flagged: np.ndarray         # bool per scanned read
    threshold: float
    quantiles: dict             # background distance quantiles
    intervals: list             # [(start, end)) flagged genome intervals
    skipped: int = 0


def _end_kmer_distances(readset, encoder_model, k):
    """Per-read Euclidean distance between the first and last k-mer
    embeddings; returns (kept_indices, distances, first_kmers)."""
    kept = []
    firsts = []
    lasts = []
    for i, r in enumerate(readset.reads):
        if len(r.bases) < 2 * k:
            continue
        kept.append(i)
        firsts.append(r.bases[:k])
        lasts.append(r.bases[-k:])
    if not kept:
        return [], np.empty(0), []
    _, zf = encode(encoder_model, one_hot_batch(firsts))
    _, zl = encode(encoder_model, one_hot_batch(lasts))
    dist = np.linalg.norm(zf - zl, axis=1)
    return kept, dist, firsts


def inversion_scan(readset, encoder_model, head, genome, background,
                   q=0.99, refine_window=500, min_cluster=3, cluster_gap=500):
    """Flag reads whose end-k-mer embedding distance exceeds the q-quantile
    of the same statistic on inversion-free background reads, then cluster
    the flagged reads into candidate intervals.

    Reads shorter than 2k are skipped with a warning.
    """
    k = encoder_model.config.k
    kept_bg, bg_dist, _ = _end_kmer_distances(background, encoder_model, k)
    if len(kept_bg) == 0:
        raise ValueError("background reads are all shorter than 2k")
    threshold = float(np.quantile(bg_dist, q))
    quantiles = {p: float(np.quantile(bg_dist, p)) for p in (0.5, 0.9, 0.99, 0.999)}
    quantiles[q] = threshold

    kept, dist, firsts = _end_kmer_distances(readset, encoder_model, k)
    skipped = len(readset) - len(kept)
    if skipped:
        warnings.warn(f"skipped {skipped} reads shorter than 2k = {2 * k}")
    if not kept:
        raise ValueError("no reads of length >= 2k to scan")

    H, _ = encode(encoder_model, one_hot_batch(firsts))
    preds = head.predict(H).coords
    coords = np.empty(len(kept), dtype=np.int64)
    for j, pred in enumerate(preds):
        refined, _, _, _ = local_align(Kmer(firsts[j]), genome, pred, refine_window)
        coords[j] = refined

    flagged = dist > threshold
    read_len = max(len(readset.reads[i].bases) for i in kept)
    intervals = _cluster_intervals(coords[flagged], read_len, min_cluster, cluster_gap)
    return InversionReport(
        read_ids=[readset.ids[i] for i in kept], coords=coords, distances=dist,
        flagged=flagged, threshold=threshold, quantiles=quantiles,
        intervals=intervals, skipped=skipped)


def _cluster_intervals(coords, read_len, min_cluster, cluster_gap):
    if coords.size == 0:
        return []
    coords = np.sort(coords)
    intervals = []
    start = prev = coords[0]
    count = 1
    for c in coords[1:]:
        if c - prev <= cluster_gap:
            count += 1
        else:
            if count >= min_cluster:
                intervals.append((int(start), int(prev + read_len)))
            start = c
            count = 1
        prev = c
    if count >= min_cluster:
        intervals.append((int(start), int(prev + read_len)))
    return intervals


@dataclass
class NeighborDistribution:
    coords: np.ndarray       # coordinates of the K nearest neighbors, sorted
    unimodal: bool
    max_gap: int
    median_gap: float
    hist: np.ndarray = field(default=None)
    bin_edges: np.ndarray = field(default=None)


def neighbor_coordinate_distribution(index, km, encoder_model, k_neighbors=250,
                                     min_mode_gap=50, bins=50):
    """Coordinates of a k-mer's K nearest index neighbors plus a modality
    flag: multimodal when the largest coordinate gap exceeds both 5x the
    median gap and `min_mode_gap` (duplications split; inversions do not).
    """
    _, z = encode(encoder_model, one_hot_batch([km]))
    idx, _ = knn(index, z[0], k_neighbors)
    coords = np.sort(index.coords[idx])
    gaps = np.diff(coords)
    if gaps.size == 0:
        return NeighborDistribution(coords=coords, unimodal=True, max_gap=0, median_gap=0.0)
    max_gap = int(gaps.max())
    median_gap = float(np.median(gaps))
    unimodal = max_gap <= max(5.0 * median_gap, min_mode_gap)
    hist, edges = np.histogram(coords, bins=bins)
    return NeighborDistribution(coords=coords, unimodal=unimodal, max_gap=max_gap,
                                median_gap=median_gap, hist=hist, bin_edges=edges)
