"""AdamW with decoupled weight decay, cosine-warmup schedule, initializers."""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    """Per-parameter moments plus hyperparameters; step starts at 0."""

    lr: float = 0.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr=None):
    """One decoupled-weight-decay Adam update, in place on `params`.

    params/grads: dicts name -> ndarray (a missing grad counts as zero).
    `lr` overrides state.lr for this step (schedules pass it per iteration).
    """
    state.step += 1
    t = state.step
    lr = state.lr if lr is None else lr
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            state.m[name] = m
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        mhat = m / bc1
        vhat = v / bc2
        if state.weight_decay:
            p -= lr * state.weight_decay * p
        p -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


def cosine_warmup_lr(step, warmup_steps, total_steps, base_lr):
    """Linear ramp 0 -> base_lr over warmup, cosine decay to 0 afterwards."""
    if warmup_steps > total_steps:
        raise ValueError("warmup_steps must not exceed total_steps")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def init_truncated_normal(shape, mean=0.0, stddev=0.05, rng=None, dtype=np.float32):
    """Normal(mean, stddev) resampled until every value is within 2 stddev."""
    if rng is None:
        rng = np.random.default_rng()
    out = rng.normal(mean, stddev, size=shape)
    while True:
        bad = np.abs(out - mean) > 2.0 * stddev
        n = int(bad.sum())
        if n == 0:
            break
        out[bad] = rng.normal(mean, stddev, size=n)
    return out.astype(dtype)
