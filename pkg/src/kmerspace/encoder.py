"""Residual convolutional encoder mapping one-hot k-mers to unit-norm
representation h and embedding z.

Layout: stem conv(k=3, stride 1) + LN + GeLU; four stages of residual
blocks; between stages an average pool (k=2, stride 2, ceil + right zero
padding) followed by a channel-doubling conv(k=3) + GeLU; global average
pool; dense + GeLU + L2 norm -> h; dense + L2 norm -> z.

Each residual block is conv(k=3, C) -> LN -> conv(1x1, 4C) -> GeLU ->
conv(1x1, C) -> skip add; `norm_first=True` moves the LN in front of the
first conv instead.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ops

# nano is a cpu-scale preset for desk experiments, not one of the published sizes
PRESETS = {
    "nano": ((16, 32, 64, 128), (1, 1, 2, 1)),
    "t": ((64, 128, 256, 512), (3, 3, 9, 3)),
    "s": ((64, 128, 256, 512), (3, 3, 27, 3)),
    "b": ((96, 192, 384, 768), (3, 3, 27, 3)),
}


@dataclass
class EncoderConfig:
    stage_channels: tuple = PRESETS["nano"][0]
    stage_blocks: tuple = PRESETS["nano"][1]
    embed_dim: int = 256
    k: int = 30
    norm_first: bool = False

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        if len(self.stage_channels) != 4 or len(self.stage_blocks) != 4:
            raise ValueError("encoder uses exactly 4 stages")
        if min(self.stage_channels) < 1 or min(self.stage_blocks) < 1:
            raise ValueError("channel and block counts must be >= 1")

    @classmethod
    def preset(cls, name, **kw):
        ch, bl = PRESETS[name.lower()]
        return cls(stage_channels=ch, stage_blocks=bl, **kw)

    @property
    def rep_dim(self):
        return self.stage_channels[3]


@dataclass
class EncoderModel:
    config: EncoderConfig
    params: dict = field(default_factory=dict)

    def param_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def forward(self, x):
        """x: Tensor (B, k, 4) -> (h, z) Tensors with unit-norm rows."""
        cfg = self.config
        p = self.params

        y = ops.conv1d(x, p["stem.conv.w"], p["stem.conv.b"], padding="same")
        y = ops.layer_norm(y, p["stem.ln.g"], p["stem.ln.b"])
        y = ops.gelu(y)

        for si in range(4):
            for bi in range(cfg.stage_blocks[si]):
                y = self._block(y, f"stage{si}.block{bi}")
            if si < 3:
                y = ops.avg_pool1d(y, kernel=2, stride=2)
                y = ops.conv1d(y, p[f"down{si}.conv.w"], p[f"down{si}.conv.b"], padding="same")
                y = ops.gelu(y)

        y = ops.global_avg_pool(y)
        h = ops.dense(y, p["head.rep.w"], p["head.rep.b"])
        h = ops.l2_normalize(ops.gelu(h), axis=-1)
        z = ops.dense(h, p["head.emb.w"], p["head.emb.b"])
        z = ops.l2_normalize(z, axis=-1)
        return h, z

    def _block(self, x, prefix):
        p = self.params
        if self.config.norm_first:
            t = ops.layer_norm(x, p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])
            t = ops.conv1d(t, p[f"{prefix}.conv_in.w"], p[f"{prefix}.conv_in.b"], padding="same")
        else:
            t = ops.conv1d(x, p[f"{prefix}.conv_in.w"], p[f"{prefix}.conv_in.b"], padding="same")
            t = ops.layer_norm(t, p[f"{prefix}.ln.g"], p[f"{prefix}.ln.b"])
        t = ops.conv1d(t, p[f"{prefix}.expand.w"], p[f"{prefix}.expand.b"], padding="same")
        t = ops.gelu(t)
        t = ops.conv1d(t, p[f"{prefix}.project.w"], p[f"{prefix}.project.b"], padding="same")
        return ops.add(x, t)


def _conv_param(params, name, kw, cin, cout, rng):
    params[f"{name}.w"] = ad.param(ad.init_truncated_normal((kw, cin, cout), rng=rng), name=f"{name}.w")
    params[f"{name}.b"] = ad.param(np.zeros(cout, dtype=np.float32), name=f"{name}.b")


def _ln_param(params, name, c):
    params[f"{name}.g"] = ad.param(np.ones(c, dtype=np.float32), name=f"{name}.g")
    params[f"{name}.b"] = ad.param(np.zeros(c, dtype=np.float32), name=f"{name}.b")


def build_encoder(cfg, rng):
    """Initialize an EncoderModel (TruncatedNormal(0, 0.05) weights)."""
    params = {}
    ch = cfg.stage_channels
    _conv_param(params, "stem.conv", 3, 4, ch[0], rng)
    _ln_param(params, "stem.ln", ch[0])
    for si in range(4):
        c = ch[si]
        for bi in range(cfg.stage_blocks[si]):
            prefix = f"stage{si}.block{bi}"
            _conv_param(params, f"{prefix}.conv_in", 3, c, c, rng)
            _ln_param(params, f"{prefix}.ln", c)
            _conv_param(params, f"{prefix}.expand", 1, c, 4 * c, rng)
            _conv_param(params, f"{prefix}.project", 1, 4 * c, c, rng)
        if si < 3:
            _conv_param(params, f"down{si}.conv", 3, c, ch[si + 1], rng)
    rep = ch[3]
    params["head.rep.w"] = ad.param(ad.init_truncated_normal((rep, rep), rng=rng), name="head.rep.w")
    params["head.rep.b"] = ad.param(np.zeros(rep, dtype=np.float32), name="head.rep.b")
    params["head.emb.w"] = ad.param(ad.init_truncated_normal((rep, cfg.embed_dim), rng=rng), name="head.emb.w")
    params["head.emb.b"] = ad.param(np.zeros(cfg.embed_dim, dtype=np.float32), name="head.emb.b")
    return EncoderModel(config=cfg, params=params)


def encode(model, batch, chunk=512):
    """Embed one-hot k-mers: (N, k, 4) array or list -> (H, Z) float32 arrays."""
    x = np.asarray(batch, dtype=np.float32)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != model.config.k or x.shape[2] != 4:
        raise ValueError(f"expected (N, {model.config.k}, 4) one-hot batch, got {x.shape}")
    hs, zs = [], []
    for i in range(0, x.shape[0], chunk):
        h, z = model.forward(ad.lift(x[i:i + chunk]))
        hs.append(h.data)
        zs.append(z.data)
    return np.concatenate(hs), np.concatenate(zs)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def config_to_array(cfg):
    vals = [cfg.k, cfg.embed_dim, int(cfg.norm_first), *cfg.stage_channels, *cfg.stage_blocks]
    return np.array(vals, dtype=np.float32)


def config_from_array(arr):
    vals = [int(v) for v in np.asarray(arr).ravel()]
    return EncoderConfig(stage_channels=tuple(vals[3:7]), stage_blocks=tuple(vals[7:11]),
                         embed_dim=vals[1], k=vals[0], norm_first=bool(vals[2]))


def encoder_arrays(model, prefix="encoder."):
    out = {prefix + "__config__": config_to_array(model.config)}
    for name, p in model.params.items():
        out[prefix + name] = p.data
    return out


def encoder_from_arrays(arrays, prefix="encoder."):
    cfg = config_from_array(arrays[prefix + "__config__"])
    model = build_encoder(cfg, np.random.default_rng(0))
    for name, p in model.params.items():
        data = arrays[prefix + name]
        if data.shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {data.shape} vs {p.data.shape}")
        p.data = data.astype(np.float32)
    return model


def save_encoder(path, model):
    ad.save_arrays(path, encoder_arrays(model))


def load_encoder(path):
    return encoder_from_arrays(ad.load_arrays(path))
