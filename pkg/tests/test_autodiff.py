import math

import numpy as np
import pytest

from kmerspace import autodiff as ad
from kmerspace.autodiff import ops

from _fd import fd_grads, max_rel_err

TOL = 1e-4


def t64(rng, *shape):
    return ad.param(rng.standard_normal(shape))


def check_op(build, tensors, trials_seed):
    """Compare autodiff grads against central differences for one graph."""
    def scalar():
        return float(build().data.sum())

    ad.zero_grad(tensors)
    loss = ops.sum_(build())
    ad.backward(loss)
    got = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    want = fd_grads(scalar, tensors)
    for g, w in zip(got, want):
        assert max_rel_err(g, w) < TOL, f"seed {trials_seed}"


@pytest.mark.parametrize("seed", range(10))
def test_grad_elementwise_and_reductions(seed):
    rng = np.random.default_rng(seed)
    a = t64(rng, 3, 4)
    b = t64(rng, 3, 4)
    c = t64(rng, 4)          # broadcast operand
    check_op(lambda: ops.add(a, b), [a, b], seed)
    check_op(lambda: ops.sub(a, b), [a, b], seed)
    check_op(lambda: ops.mul(a, c), [a, c], seed)
    check_op(lambda: ops.neg(a), [a], seed)
    check_op(lambda: ops.exp(ops.mul(a, 0.3)), [a], seed)
    p = ad.param(rng.uniform(0.5, 2.0, (3, 4)))
    check_op(lambda: ops.log(p), [p], seed)
    check_op(lambda: ops.sum_(a, axis=1), [a], seed)
    check_op(lambda: ops.mean_(a, axis=0), [a], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_matmul_dense(seed):
    rng = np.random.default_rng(100 + seed)
    x = t64(rng, 3, 5)
    w = t64(rng, 5, 4)
    b = t64(rng, 4)
    check_op(lambda: ops.matmul(x, w), [x, w], seed)
    check_op(lambda: ops.dense(x, w, b), [x, w, b], seed)
    # stacked matmul as used inside attention
    q = t64(rng, 2, 2, 3, 4)
    k = t64(rng, 2, 2, 4, 3)
    check_op(lambda: ops.matmul(q, k), [q, k], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_conv1d(seed):
    rng = np.random.default_rng(200 + seed)
    x = t64(rng, 2, 7, 3)
    w = t64(rng, 3, 3, 4)
    b = t64(rng, 4)
    check_op(lambda: ops.conv1d(x, w, b, stride=1, padding="same"), [x, w, b], seed)
    w1 = t64(rng, 1, 3, 5)
    check_op(lambda: ops.conv1d(x, w1, None, stride=1, padding="same"), [x, w1], seed)
    w2 = t64(rng, 2, 3, 2)
    check_op(lambda: ops.conv1d(x, w2, None, stride=2, padding="valid"), [x, w2], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_activations_norms(seed):
    rng = np.random.default_rng(300 + seed)
    x = t64(rng, 4, 6)
    g = t64(rng, 6)
    b = t64(rng, 6)
    check_op(lambda: ops.gelu(x), [x], seed)
    check_op(lambda: ops.silu(x), [x], seed)
    check_op(lambda: ops.softmax(x, axis=-1), [x], seed)
    check_op(lambda: ops.layer_norm(x, g, b), [x, g, b], seed)
    check_op(lambda: ops.l2_normalize(x, axis=-1), [x], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_pooling_shaping(seed):
    rng = np.random.default_rng(400 + seed)
    x = t64(rng, 2, 7, 3)
    check_op(lambda: ops.avg_pool1d(x, 2, 2), [x], seed)
    check_op(lambda: ops.global_avg_pool(x), [x], seed)
    check_op(lambda: ops.reshape(x, (2, 21)), [x], seed)
    check_op(lambda: ops.transpose(x, (1, 0, 2)), [x], seed)
    y = t64(rng, 2, 4, 3)
    check_op(lambda: ops.concat([x, y], axis=1), [x, y], seed)
    check_op(lambda: ops.slice_axis(x, 1, 2, 6), [x], seed)
    mask = rng.random((2, 7, 3)) > 0.4
    check_op(lambda: ops.masked_fill(x, mask, -7.5), [x], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_embedding_losses(seed):
    rng = np.random.default_rng(500 + seed)
    table = t64(rng, 6, 4)
    ids = rng.integers(0, 6, size=(3, 5))
    check_op(lambda: ops.embedding_lookup(table, ids), [table], seed)

    logits = t64(rng, 4, 5)
    targets = rng.integers(0, 5, size=4)
    check_op(lambda: ops.cross_entropy(ops.softmax(logits), targets), [logits], seed)

    pred = t64(rng, 3, 4)
    tgt = t64(rng, 3, 4)
    check_op(lambda: ops.mse(pred, tgt), [pred, tgt], seed)


@pytest.mark.parametrize("seed", range(10))
def test_grad_causal_mha(seed):
    rng = np.random.default_rng(600 + seed)
    bsz, t, d, heads = 2, 5, 8, 2
    x = t64(rng, bsz, t, d)
    # moderate weight scale keeps attention logits small enough that the
    # h=1e-3 central-difference truncation error stays under the tolerance
    ws = [ad.param(0.5 * rng.standard_normal((d, d))) for _ in range(4)]
    bs = [ad.param(0.5 * rng.standard_normal(d)) for _ in range(4)]
    mask = np.tril(np.ones((t, t), dtype=bool))
    mask[:2, :2] = True

    def build():
        return ops.causal_mha(x, ws[0], bs[0], ws[1], bs[1], ws[2], bs[2],
                              ws[3], bs[3], heads, mask)

    check_op(build, [x] + ws + bs, seed)


def test_gelu_values():
    z = ad.lift(np.array([0.0]))
    assert ops.gelu(z).data[0] == 0.0
    x = ad.param(np.array([0.0]))
    y = ops.sum_(ops.gelu(x))
    ad.backward(y)
    assert abs(x.grad[0] - 0.5) < 1e-6


def test_layer_norm_constant_vector_is_zero():
    x = ad.lift(np.full((3, 8), 2.5))
    g = ad.lift(np.ones(8))
    b = ad.lift(np.zeros(8))
    out = ops.layer_norm(x, g, b).data
    assert np.allclose(out, 0.0)


def test_softmax_uniform_and_rowsum():
    y = ops.softmax(ad.lift(np.zeros((2, 5)))).data
    assert np.allclose(y, 0.2)
    rng = np.random.default_rng(0)
    z = ops.softmax(ad.lift(rng.standard_normal((10, 7)))).data
    assert np.allclose(z.sum(axis=1), 1.0, atol=1e-6)


def test_l2_normalize_unit_norm():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((20, 6))
    y = ops.l2_normalize(ad.lift(x)).data
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-6)


def test_backward_sum_gives_ones_and_scalar_check():
    x = ad.param(np.arange(6.0).reshape(2, 3))
    ad.backward(ops.sum_(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))
    with pytest.raises(ValueError):
        ad.backward(ops.add(x, x))


def test_mse_zero_at_minimum():
    x = ad.param(np.array([1.0, 2.0, 3.0]))
    target = ad.lift(np.array([1.0, 2.0, 3.0]))
    loss = ops.mse(x, target)
    assert loss.item() == 0.0
    ad.backward(loss)
    assert np.allclose(x.grad, 0.0)


def test_backward_accumulates_until_zeroed():
    x = ad.param(np.ones(3))
    ad.backward(ops.sum_(x))
    ad.backward(ops.sum_(x))
    assert np.array_equal(x.grad, 2 * np.ones(3))
    ad.zero_grad([x])
    assert x.grad is None


def test_shape_errors_name_op():
    with pytest.raises(ops.ShapeError, match="dense"):
        ops.dense(ad.lift(np.zeros((2, 3))), ad.lift(np.zeros((4, 5))))
    with pytest.raises(ops.ShapeError, match="matmul"):
        ops.matmul(ad.lift(np.zeros((2, 3))), ad.lift(np.zeros((2, 3))))


def test_causal_mask_property_bitwise():
    rng = np.random.default_rng(7)
    bsz, t, d, heads = 1, 6, 8, 2
    x = rng.standard_normal((bsz, t, d))
    ws = [rng.standard_normal((d, d)) * 0.3 for _ in range(4)]
    bs = [rng.standard_normal(d) * 0.1 for _ in range(4)]
    mask = np.tril(np.ones((t, t), dtype=bool))

    def run(inp):
        return ops.causal_mha(ad.lift(inp), *[ad.lift(v) for w, b in zip(ws, bs) for v in (w, b)],
                              num_heads=heads, mask=mask).data

    base = run(x)
    for pos in range(1, t):
        poked = x.copy()
        poked[0, pos] += 10.0
        out = run(poked)
        assert np.array_equal(out[0, :pos], base[0, :pos]), f"leak into positions < {pos}"


def test_forward_backward_determinism():
    def once():
        rng = np.random.default_rng(123)
        x = ad.param(rng.standard_normal((4, 6)).astype(np.float32))
        w = ad.param(rng.standard_normal((6, 3)).astype(np.float32))
        loss = ops.sum_(ops.gelu(ops.dense(x, w)))
        ad.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    a = once()
    b = once()
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


# ---------------------------------------------------------------------------
# optimizer / schedule / init
# ---------------------------------------------------------------------------

def test_adamw_zero_grad_zero_decay_is_identity():
    p = {"w": np.ones(4, dtype=np.float64)}
    st = ad.AdamWState(lr=1e-2, weight_decay=0.0)
    ad.adamw_step(p, {"w": np.zeros(4)}, st)
    assert np.array_equal(p["w"], np.ones(4))
    assert st.step == 1


def test_adamw_decay_only_shrinks_geometrically():
    lr, wd = 1e-2, 0.1
    p = {"w": np.full(3, 5.0)}
    st = ad.AdamWState(lr=lr, weight_decay=wd)
    for _ in range(4):
        ad.adamw_step(p, {"w": np.zeros(3)}, st)
    assert np.allclose(p["w"], 5.0 * (1 - lr * wd) ** 4)


def test_adamw_constant_gradient_update_approaches_lr():
    # Closed-form Adam fixed point: with constant g, |step| -> lr * |g|/sqrt(g^2) = lr.
    lr = 1e-3
    p = {"w": np.array([0.0])}
    st = ad.AdamWState(lr=lr, weight_decay=0.0)
    g = np.array([2.5])
    prev = p["w"].copy()
    for i in range(500):
        ad.adamw_step(p, {"w": g}, st)
        delta = p["w"] - prev
        prev = p["w"].copy()
    assert delta[0] < 0  # moves against the gradient
    assert abs(abs(delta[0]) - lr) < 1e-5


def test_cosine_warmup_schedule_endpoints():
    base = 0.5e-3
    assert ad.cosine_warmup_lr(0, 100, 1000, base) == 0.0
    assert ad.cosine_warmup_lr(100, 100, 1000, base) == pytest.approx(base)
    assert ad.cosine_warmup_lr(1000, 100, 1000, base) == pytest.approx(0.0, abs=1e-12)
    mid = ad.cosine_warmup_lr(550, 100, 1000, base)
    assert 0 < mid < base
    with pytest.raises(ValueError):
        ad.cosine_warmup_lr(5, 20, 10, base)


def test_truncated_normal_bounds_and_mean():
    rng = np.random.default_rng(42)
    x = ad.init_truncated_normal((1000, 1000), rng=rng)
    assert np.all(np.abs(x) <= 0.1 + 1e-7)
    assert abs(float(x.mean())) < 1e-3
    y1 = ad.init_truncated_normal((50,), rng=np.random.default_rng(9))
    y2 = ad.init_truncated_normal((50,), rng=np.random.default_rng(9))
    assert np.array_equal(y1, y2)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    arrays = {
        "enc.stem.w": rng.standard_normal((3, 4, 16)).astype(np.float32),
        "enc.stem.b": rng.standard_normal(16).astype(np.float32),
        "meta": np.array(7.0, dtype=np.float32),
    }
    path = tmp_path / "m.kmsp"
    ad.save_arrays(path, arrays)
    back = ad.load_arrays(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == np.float32
        assert arrays[k].shape == back[k].shape
        assert np.array_equal(arrays[k].tobytes(), back[k].tobytes())
    # saving twice produces identical bytes
    path2 = tmp_path / "m2.kmsp"
    ad.save_arrays(path2, arrays)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.kmsp"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ad.CheckpointError):
        ad.load_arrays(p)
