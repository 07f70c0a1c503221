"""Position-prediction heads trained on frozen encoder representations.

All three heads share a trunk of `mlp_layers` blocks (LayerNorm -> dense
`mlp_width` -> SiLU) plus a final linear projection:

  mse: projection width 1, trained on coordinates normalized to [0, 1];
  cce: N_b independent base-b softmax rows trained with cross-entropy;
  gpt: projection width mlp_out_tokens*token_dim, split into tokens that a
       single masked-attention transformer block extends digit by digit.

The GPT attends fully across the trunk tokens and causally across digit
tokens, so digit n sees the trunk tokens and digits < n only.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ops
from .coordcodec import decode_digits_batch, encode_coords_batch, num_digits
from .encoder import encode, encoder_arrays, encoder_from_arrays
from .noise import apply_noise
from .seqcore import Kmer, one_hot_batch, revcomp_bases

KINDS = ("mse", "cce", "gpt")


@dataclass
class HeadConfig:
    kind: str
    rep_dim: int
    length: int                 # coordinate-space size L
    base: int = 3
    mlp_width: int = 2048
    mlp_layers: int = 3
    gpt_heads: int = 2
    gpt_ff_dim: int = 256
    token_dim: int = 64
    mlp_out_tokens: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"head kind must be one of {KINDS}, got {self.kind!r}")
        if self.base < 2:
            raise ValueError("base must be >= 2")
        if self.length < 1:
            raise ValueError("length must be >= 1")

    @property
    def n_digits(self):
        return num_digits(self.length, self.base)

    @property
    def trunk_out(self):
        if self.kind == "mse":
            return 1
        if self.kind == "cce":
            return self.n_digits * self.base
        return self.mlp_out_tokens * self.token_dim

    @property
    def gpt_seq_len(self):
        # trunk tokens plus all but the last digit token
        return self.mlp_out_tokens + self.n_digits - 1


@dataclass
class PositionPrediction:
    kind: str
    coords: np.ndarray                    # (B,) predicted coordinates
    probs: Optional[np.ndarray] = None    # (B, N_b, base) digit probabilities
    clamped: Optional[np.ndarray] = None  # (B,) True where decode hit >= L


@dataclass
class PositionHead:
    config: HeadConfig
    params: dict = field(default_factory=dict)

    def trunk_forward(self, h):
        """h: Tensor (B, rep_dim) -> Tensor (B, trunk_out)."""
        cfg = self.config
        p = self.params
        y = h
        for i in range(cfg.mlp_layers):
            y = ops.layer_norm(y, p[f"trunk.ln{i}.g"], p[f"trunk.ln{i}.b"])
            y = ops.dense(y, p[f"trunk.fc{i}.w"], p[f"trunk.fc{i}.b"])
            y = ops.silu(y)
        return ops.dense(y, p["trunk.out.w"], p["trunk.out.b"])

    # -- gpt internals ------------------------------------------------------

    def attention_mask(self, seq_len):
        """True where query p may attend key q: q <= max(p, n_trunk-1)."""
        n_trunk = self.config.mlp_out_tokens
        idx = np.arange(seq_len)
        return idx[None, :] <= np.maximum(idx[:, None], n_trunk - 1)

    def gpt_block(self, tokens):
        """One transformer block + dense-to-logits softmax over `base`."""
        p = self.params
        cfg = self.config
        att = ops.causal_mha(tokens, p["gpt.wq"], p["gpt.bq"], p["gpt.wk"], p["gpt.bk"],
                             p["gpt.wv"], p["gpt.bv"], p["gpt.wo"], p["gpt.bo"],
                             cfg.gpt_heads, self.attention_mask(tokens.data.shape[1]))
        a = ops.layer_norm(ops.add(att, tokens), p["gpt.ln1.g"], p["gpt.ln1.b"])
        ff = ops.dense(ops.gelu(ops.dense(a, p["gpt.ff1.w"], p["gpt.ff1.b"])),
                       p["gpt.ff2.w"], p["gpt.ff2.b"])
        y = ops.layer_norm(ops.add(ff, a), p["gpt.ln2.g"], p["gpt.ln2.b"])
        logits = ops.dense(y, p["gpt.out.w"], p["gpt.out.b"])
        return ops.softmax(logits, axis=-1)

    def trunk_tokens(self, h):
        cfg = self.config
        y = self.trunk_forward(h)
        return ops.reshape(y, (h.data.shape[0], cfg.mlp_out_tokens, cfg.token_dim))

    def gpt_forward(self, h, target_digits, return_full=False):
        """Teacher-forced digit probabilities.

        h: Tensor or (B, rep_dim) array; target_digits: (B, N_b) ints.
        Returns (B, N_b, base) probabilities for the digit positions, or the
        full (B, seq_len, base) matrix when return_full is set.
        """
        cfg = self.config
        h = h if isinstance(h, ad.Tensor) else ad.lift(np.asarray(h, dtype=np.float32))
        target_digits = np.asarray(target_digits)
        if target_digits.shape != (h.data.shape[0], cfg.n_digits):
            raise ValueError(
                f"target digits must be (batch, {cfg.n_digits}), got {target_digits.shape}")
        toks = self.trunk_tokens(h)
        if cfg.n_digits > 1:
            bit_toks = ops.embedding_lookup(self.params["gpt.embed"],
                                            target_digits[:, :-1])
            toks = ops.concat([toks, bit_toks], axis=1)
        seq = ops.add(toks, self.params["gpt.pos"])
        probs = self.gpt_block(seq)
        if return_full:
            return probs
        return ops.slice_axis(probs, 1, cfg.mlp_out_tokens - 1, probs.data.shape[1])

    def gpt_decode(self, h):
        """Greedy autoregressive decode: (B, rep_dim) -> (B, N_b) digits."""
        cfg = self.config
        ht = h if isinstance(h, ad.Tensor) else ad.lift(np.asarray(h, dtype=np.float32))
        base_tokens = self.trunk_tokens(ht).data
        bsz = base_tokens.shape[0]
        digits = np.zeros((bsz, cfg.n_digits), dtype=np.int64)
        embed = self.params["gpt.embed"].data
        pos = self.params["gpt.pos"].data
        seq = base_tokens
        for n in range(cfg.n_digits):
            probs = self.gpt_block(ad.lift(seq + pos[:seq.shape[1]])).data
            digits[:, n] = probs[:, -1, :].argmax(axis=1)
            if n + 1 < cfg.n_digits:
                seq = np.concatenate([seq, embed[digits[:, n]][:, None, :]], axis=1)
        return digits

    # -- prediction ---------------------------------------------------------

    def predict(self, H):
        """Representations (B, rep_dim) -> PositionPrediction."""
        cfg = self.config
        H = np.asarray(H, dtype=np.float32)
        if cfg.kind == "mse":
            out = self.trunk_forward(ad.lift(H)).data[:, 0]
            return PositionPrediction(kind="mse", coords=out * cfg.length)
        if cfg.kind == "cce":
            logits = self.trunk_forward(ad.lift(H))
            logits = ops.reshape(logits, (H.shape[0], cfg.n_digits, cfg.base))
            probs = ops.softmax(logits, axis=-1).data
            digits = probs.argmax(axis=-1)
        else:
            digits = self.gpt_decode(H)
            probs = None
        raw = decode_digits_batch(digits, cfg.base)
        clamped = raw > cfg.length - 1
        coords = np.where(clamped, cfg.length - 1, raw)
        return PositionPrediction(kind=cfg.kind, coords=coords, probs=probs, clamped=clamped)

    def loss(self, h, coords):
        """Training loss for a batch of representations and true coordinates."""
        cfg = self.config
        ht = h if isinstance(h, ad.Tensor) else ad.lift(np.asarray(h, dtype=np.float32))
        coords = np.asarray(coords)
        if cfg.kind == "mse":
            pred = self.trunk_forward(ht)
            target = (coords[:, None] / cfg.length).astype(ht.data.dtype)
            return ops.mse(pred, ad.lift(target))
        digits = encode_coords_batch(coords, cfg.base, cfg.length)
        if cfg.kind == "cce":
            logits = self.trunk_forward(ht)
            logits = ops.reshape(logits, (ht.data.shape[0], cfg.n_digits, cfg.base))
            return ops.cross_entropy(ops.softmax(logits, axis=-1), digits)
        probs = self.gpt_forward(ht, digits)
        return ops.cross_entropy(probs, digits)


def build_head(cfg, rng):
    """Initialize a PositionHead (TruncatedNormal(0, 0.05) weights)."""
    p = {}
    width_in = cfg.rep_dim
    for i in range(cfg.mlp_layers):
        p[f"trunk.ln{i}.g"] = ad.param(np.ones(width_in, dtype=np.float32))
        p[f"trunk.ln{i}.b"] = ad.param(np.zeros(width_in, dtype=np.float32))
        p[f"trunk.fc{i}.w"] = ad.param(ad.init_truncated_normal((width_in, cfg.mlp_width), rng=rng))
        p[f"trunk.fc{i}.b"] = ad.param(np.zeros(cfg.mlp_width, dtype=np.float32))
        width_in = cfg.mlp_width
    p["trunk.out.w"] = ad.param(ad.init_truncated_normal((width_in, cfg.trunk_out), rng=rng))
    p["trunk.out.b"] = ad.param(np.zeros(cfg.trunk_out, dtype=np.float32))
    if cfg.kind == "gpt":
        d = cfg.token_dim
        p["gpt.embed"] = ad.param(ad.init_truncated_normal((cfg.base, d), rng=rng))
        p["gpt.pos"] = ad.param(ad.init_truncated_normal((cfg.gpt_seq_len, d), rng=rng))
        for name in ("wq", "wk", "wv", "wo"):
            p[f"gpt.{name}"] = ad.param(ad.init_truncated_normal((d, d), rng=rng))
        for name in ("bq", "bk", "bv", "bo"):
            p[f"gpt.{name}"] = ad.param(np.zeros(d, dtype=np.float32))
        p["gpt.ln1.g"] = ad.param(np.ones(d, dtype=np.float32))
        p["gpt.ln1.b"] = ad.param(np.zeros(d, dtype=np.float32))
        p["gpt.ln2.g"] = ad.param(np.ones(d, dtype=np.float32))
        p["gpt.ln2.b"] = ad.param(np.zeros(d, dtype=np.float32))
        p["gpt.ff1.w"] = ad.param(ad.init_truncated_normal((d, cfg.gpt_ff_dim), rng=rng))
        p["gpt.ff1.b"] = ad.param(np.zeros(cfg.gpt_ff_dim, dtype=np.float32))
        p["gpt.ff2.w"] = ad.param(ad.init_truncated_normal((cfg.gpt_ff_dim, d), rng=rng))
        p["gpt.ff2.b"] = ad.param(np.zeros(d, dtype=np.float32))
        p["gpt.out.w"] = ad.param(ad.init_truncated_normal((d, cfg.base), rng=rng))
        p["gpt.out.b"] = ad.param(np.zeros(cfg.base, dtype=np.float32))
    return PositionHead(config=cfg, params=p)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def encode_training_table(encoder_model, genome, stride=1, include_revcomp=True, chunk=512):
    """Precompute (H, coords) for every stride-th k-mer (frozen encoder).

    With include_revcomp each locus also contributes its reverse-complement
    k-mer labeled with the same forward coordinate.
    """
    k = encoder_model.config.k
    starts = [c for c in np.flatnonzero(genome.valid_starts(k))[::stride]]
    kmers = [genome.bases[c:c + k] for c in starts]
    coords = list(starts)
    if include_revcomp:
        kmers += [revcomp_bases(s) for s in kmers]
        coords += list(starts)
    H, _ = encode(encoder_model, one_hot_batch(kmers), chunk=chunk)
    return H, np.asarray(coords, dtype=np.int64)


def train_head(head, table, iterations, batch_size, rng, base_lr=0.5e-3,
               warmup_steps=0, weight_decay=1e-5):
    """Optimize head parameters on a cached (H, coords) table.

    Returns history rows (step, lr, loss); encoder weights are untouched by
    construction (the table is plain data).
    """
    H, coords = table
    n = H.shape[0]
    state = ad.AdamWState(lr=base_lr, weight_decay=weight_decay)
    history = []
    for step in range(iterations):
        lr = ad.cosine_warmup_lr(step, warmup_steps, iterations, base_lr)
        idx = rng.integers(0, n, batch_size)
        loss = head.loss(H[idx], coords[idx])
        ad.zero_grad(head.params)
        ad.backward(loss)
        value = float(loss.data)
        if not np.isfinite(value):
            norms = {k: float(np.linalg.norm(p.grad)) for k, p in head.params.items()
                     if p.grad is not None}
            raise RuntimeError(f"non-finite head loss at step {step} (lr={lr:.3e}); "
                               f"grad norms: {norms}")
        grads = {k: p.grad for k, p in head.params.items()}
        ad.adamw_step({k: p.data for k, p in head.params.items()}, grads, state, lr=lr)
        history.append((step, lr, value))
    return history


def train_head_augmented(head, encoder_model, genome, aug_cfg, iterations,
                         batch_size, rng, base_lr=0.5e-3, warmup_steps=0,
                         weight_decay=1e-5):
    """Head training with on-the-fly noisy samples from the genome."""
    k = encoder_model.config.k
    valid = np.flatnonzero(genome.valid_starts(k))
    state = ad.AdamWState(lr=base_lr, weight_decay=weight_decay)
    history = []
    for step in range(iterations):
        lr = ad.cosine_warmup_lr(step, warmup_steps, iterations, base_lr)
        coords = valid[rng.integers(0, valid.size, batch_size)]
        xs = [apply_noise(Kmer(genome.bases[c:c + k]), aug_cfg, rng) for c in coords]
        H, _ = encode(encoder_model, np.stack(xs))
        loss = head.loss(H, coords)
        ad.zero_grad(head.params)
        ad.backward(loss)
        value = float(loss.data)
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite head loss at step {step} (lr={lr:.3e})")
        grads = {kk: p.grad for kk, p in head.params.items()}
        ad.adamw_step({kk: p.data for kk, p in head.params.items()}, grads, state, lr=lr)
        history.append((step, lr, value))
    return history


# ---------------------------------------------------------------------------
# persistence (heads share the encoder's container, namespaced by kind)
# ---------------------------------------------------------------------------

_KIND_ID = {k: i for i, k in enumerate(KINDS)}


def head_arrays(head, prefix=None):
    cfg = head.config
    prefix = prefix or f"head.{cfg.kind}."
    meta = np.array([
        _KIND_ID[cfg.kind], cfg.rep_dim, cfg.length // 2**20, cfg.length % 2**20,
        cfg.base, cfg.mlp_width, cfg.mlp_layers, cfg.gpt_heads, cfg.gpt_ff_dim,
        cfg.token_dim, cfg.mlp_out_tokens,
    ], dtype=np.float32)
    out = {prefix + "__config__": meta}
    for name, p in head.params.items():
        out[prefix + name] = p.data
    return out


def head_from_arrays(arrays, kind):
    prefix = f"head.{kind}."
    meta = [int(v) for v in arrays[prefix + "__config__"]]
    cfg = HeadConfig(kind=KINDS[meta[0]], rep_dim=meta[1],
                     length=meta[2] * 2**20 + meta[3], base=meta[4],
                     mlp_width=meta[5], mlp_layers=meta[6], gpt_heads=meta[7],
                     gpt_ff_dim=meta[8], token_dim=meta[9], mlp_out_tokens=meta[10])
    head = build_head(cfg, np.random.default_rng(0))
    for name, p in head.params.items():
        data = arrays[prefix + name]
        if data.shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}")
        p.data = data.astype(np.float32)
    return head


def save_pipeline(path, encoder_model, head=None):
    """Bundle encoder (and optionally one head) into a single container."""
    arrays = encoder_arrays(encoder_model)
    if head is not None:
        arrays.update(head_arrays(head))
    ad.save_arrays(path, arrays)


def load_pipeline(path):
    """Returns (encoder, head or None) from a bundled container."""
    arrays = ad.load_arrays(path)
    encoder_model = encoder_from_arrays(arrays)
    head = None
    for kind in KINDS:
        if f"head.{kind}.__config__" in arrays:
            head = head_from_arrays(arrays, kind)
            break
    return encoder_model, head
