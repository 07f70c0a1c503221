"""Coordinate-thresholded contrastive loss and the encoder training loop.

The loss attracts each sample to its in-batch positives and repels the rest:

    L = mean_i [ -1/|P(i)| * sum_{p in P(i)} w_ip *
                 log( exp(z_i.z_p / tau) / sum_{a != i} exp(z_i.z_a / tau) ) ]

where the mean runs over samples with at least one positive.  Supervised
mode takes P(i) as every other sample within `gamma` bp; self-supervised
mode takes exactly the augmentation partner.  Optional distance weighting
scales each positive term by |c_i - c_p| / gamma ("paper") or its
complement ("inverted").
"""

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ops
from .encoder import build_encoder, save_encoder
from .noise import ReadSet, augment_pair, apply_noise
from .seqcore import Genome, Kmer

SUPERVISED = "supervised"
SELF_SUPERVISED = "self_supervised"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class LossConfig:
    temperature: float = 0.1
    gamma: float = 1000.0
    mode: str = SUPERVISED
    distance_weighting: str = "off"  # off | paper | inverted

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.mode not in (SUPERVISED, SELF_SUPERVISED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.distance_weighting not in ("off", "paper", "inverted"):
            raise ValueError(f"unknown distance_weighting {self.distance_weighting!r}")


@dataclass
class ContrastiveBatch:
    x: np.ndarray                      # (2N, k, 4) one-hot samples
    pair_index: np.ndarray             # (2N,) index of each sample's partner
    coords: Optional[np.ndarray] = None  # (2N,) true coordinates, supervised only

    @property
    def size(self):
        return self.x.shape[0]


def positive_set(coords, pair_index, cfg):
    """Per-sample positive index arrays P(i).

    Supervised: all other samples within cfg.gamma bp (may be empty when the
    augmentation offset can exceed gamma).  Self-supervised: the partner.
    """
    n = len(pair_index)
    if cfg.mode == SELF_SUPERVISED:
        return [np.array([pair_index[i]], dtype=np.int64) for i in range(n)]
    if coords is None:
        raise ValueError("supervised positives need coordinates")
    coords = np.asarray(coords)
    out = []
    for i in range(n):
        near = np.flatnonzero(np.abs(coords - coords[i]) <= cfg.gamma)
        out.append(near[near != i])
    return out


def distance_weights(coords, positives, cfg):
    """Per-positive weights d_ip aligned with `positives`."""
    n = len(positives)
    if cfg.mode == SELF_SUPERVISED or cfg.distance_weighting == "off":
        return [np.ones(len(p)) for p in positives]
    coords = np.asarray(coords, dtype=np.float64)
    out = []
    for i in range(n):
        frac = np.abs(coords[positives[i]] - coords[i]) / cfg.gamma
        out.append(frac if cfg.distance_weighting == "paper" else 1.0 - frac)
    return out


def contrastive_loss(z, positives, weights, temperature):
    """Autodiff-capable scalar loss over a (2N, D) embedding tensor.

    Samples with empty P(i) are skipped and the outer mean divides by the
    number of contributing samples.  Stabilized by per-row max subtraction.
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    zt = z if isinstance(z, ad.Tensor) else ad.lift(np.asarray(z))
    n = zt.data.shape[0]
    contrib = [i for i in range(n) if len(positives[i]) > 0]
    if not contrib:
        raise ValueError("every sample has an empty positive set")

    wmat = np.zeros((n, n), dtype=zt.data.dtype)
    for i in contrib:
        wmat[i, positives[i]] = np.asarray(weights[i], dtype=zt.data.dtype) / len(positives[i])

    logits = ops.mul(ops.matmul(zt, ops.transpose(zt, (1, 0))), 1.0 / temperature)
    off_diag = ~np.eye(n, dtype=bool)
    # max over the denominator's support; detaching it is exact for log-sum-exp
    row_max = np.max(np.where(off_diag, logits.data, -np.inf), axis=1, keepdims=True)
    shifted = ops.sub(logits, row_max)
    exps = ops.mul(ops.exp(shifted), off_diag.astype(zt.data.dtype))
    log_denom = ops.log(ops.sum_(exps, axis=1, keepdims=True))
    log_prob = ops.sub(shifted, log_denom)
    total = ops.sum_(ops.mul(log_prob, wmat))
    return ops.mul(total, -1.0 / len(contrib))


def _sample_pair_in_read(read, cfg, rng):
    """Positive pair drawn inside one read; needs len(read) >= k + d."""
    span = len(read.bases) - cfg.k - cfg.d
    ci = int(rng.integers(0, span + 1))
    cj = int(rng.integers(ci, ci + cfg.d + 1))
    return (Kmer(read.bases[ci:ci + cfg.k]), Kmer(read.bases[cj:cj + cfg.k]))


def build_batch(source, aug_cfg, n_pairs, mode, rng):
    """Assemble 2N augmented samples with partner bookkeeping.

    Supervised requires a Genome (coordinates retained).  Self-supervised
    accepts a Genome (coordinates dropped) or a ReadSet, drawing both k-mers
    of a pair from the same read; reads shorter than k+d are skipped.
    """
    if mode not in (SUPERVISED, SELF_SUPERVISED):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == SUPERVISED and not isinstance(source, Genome):
        raise ValueError("supervised batches require a reference Genome")

    xs = []
    coords = np.empty(2 * n_pairs, dtype=np.int64)
    usable = None
    if isinstance(source, ReadSet):
        min_len = aug_cfg.k + aug_cfg.d
        usable = [r for r in source.reads if len(r.bases) >= min_len]
        n_short = len(source.reads) - len(usable)
        if n_short:
            warnings.warn(f"skipping {n_short} reads shorter than k+d = {min_len}")
        if not usable:
            raise ValueError(f"no reads of length >= k+d = {min_len} available")

    for t in range(n_pairs):
        if usable is not None:
            ki, kj = _sample_pair_in_read(usable[int(rng.integers(0, len(usable)))], aug_cfg, rng)
            xi = apply_noise(ki, aug_cfg, rng)
            xj = apply_noise(kj, aug_cfg, rng)
            ci = cj = -1
        else:
            xi, xj, ci, cj = augment_pair(source, aug_cfg, rng)
        xs.append(xi)
        xs.append(xj)
        coords[2 * t] = ci
        coords[2 * t + 1] = cj

    pair_index = np.arange(2 * n_pairs, dtype=np.int64)
    pair_index[0::2] += 1
    pair_index[1::2] -= 1
    return ContrastiveBatch(
        x=np.stack(xs),
        pair_index=pair_index,
        coords=coords if mode == SUPERVISED else None,
    )


@dataclass
class TrainConfig:
    batch_pairs: int = 2048      # N augmentation pairs -> 2N samples per step
    iterations: int = 50_000
    base_lr: float = 0.5e-3
    warmup_steps: int = 2500
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_interval: int = 0  # extra checkpoints every k steps; 0 = none
    checkpoint_path: Optional[str] = None


def derive_rngs(seed, n):
    """Independent child streams from one master seed (documented derivation)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train_encoder(source, enc_cfg, loss_cfg, aug_cfg, train_cfg, model=None):
    """Contrastive pre-training loop; returns (model, history).

    history rows are (step, lr, loss).  A non-finite loss aborts with a
    diagnostic dump of the step, lr and gradient norms.
    """
    if train_cfg.warmup_steps > train_cfg.iterations and train_cfg.iterations > 0:
        raise ValueError(
            f"warmup_steps ({train_cfg.warmup_steps}) exceeds iterations "
            f"({train_cfg.iterations}); lower warmup_steps in the train config")
    rng_init, rng_batch = derive_rngs(train_cfg.seed, 2)
    if model is None:
        model = build_encoder(enc_cfg, rng_init)
    state = ad.AdamWState(lr=train_cfg.base_lr, beta1=train_cfg.beta1,
                          beta2=train_cfg.beta2, weight_decay=train_cfg.weight_decay)
    history = []
    for step in range(train_cfg.iterations):
        lr = ad.cosine_warmup_lr(step, train_cfg.warmup_steps, train_cfg.iterations,
                                 train_cfg.base_lr)
        batch = build_batch(source, aug_cfg, train_cfg.batch_pairs, loss_cfg.mode, rng_batch)
        _, z = model.forward(ad.lift(batch.x))
        positives = positive_set(batch.coords, batch.pair_index, loss_cfg)
        weights = distance_weights(batch.coords, positives, loss_cfg)
        loss = contrastive_loss(z, positives, weights, loss_cfg.temperature)
        ad.zero_grad(model.params)
        ad.backward(loss)
        value = float(loss.data)
        if not np.isfinite(value):
            norms = {k: float(np.linalg.norm(p.grad)) for k, p in model.params.items()
                     if p.grad is not None}
            raise TrainingDiverged(
                f"non-finite loss at step {step} (lr={lr:.3e}); grad norms: {norms}")
        grads = {k: p.grad for k, p in model.params.items()}
        ad.adamw_step({k: p.data for k, p in model.params.items()}, grads, state, lr=lr)
        history.append((step, lr, value))
        if (train_cfg.checkpoint_interval and train_cfg.checkpoint_path
                and (step + 1) % train_cfg.checkpoint_interval == 0):
            save_encoder(f"{train_cfg.checkpoint_path}.step{step + 1}", model)
    return model, history


def save_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in history:
            writer.writerow([step, f"{lr:.10g}", f"{loss:.10g}"])
