import numpy as np
import pytest

from kmerspace import autodiff as ad
from kmerspace import encoder as enc
from kmerspace import seqcore as sq


@pytest.fixture(scope="module")
def nano():
    cfg = enc.EncoderConfig.preset("nano")
    return enc.build_encoder(cfg, np.random.default_rng(0))


def random_batch(rng, n, k=30):
    codes = rng.integers(0, 4, (n, k))
    return np.stack([sq.one_hot_from_codes(c) for c in codes])


def test_preset_parameter_counts_match_published_sizes():
    expected = {"t": 16.8e6, "s": 29.8e6, "b": 66.5e6}
    for name, target in expected.items():
        cfg = enc.EncoderConfig.preset(name)
        model = enc.build_encoder(cfg, np.random.default_rng(0))
        count = model.param_count()
        assert abs(count - target) / target < 0.05, f"{name}: {count}"


def test_nano_under_half_million(nano):
    assert nano.param_count() < 500_000


def test_stage_lengths_follow_ceil_pooling(nano):
    # 30 -> 15 -> 8 -> 4 through the three pooling steps
    from kmerspace.autodiff import ops
    x = ad.lift(random_batch(np.random.default_rng(1), 2))
    y = ops.avg_pool1d(x, 2, 2)
    assert y.data.shape[1] == 15
    y = ops.avg_pool1d(y, 2, 2)
    assert y.data.shape[1] == 8
    y = ops.avg_pool1d(y, 2, 2)
    assert y.data.shape[1] == 4


def test_output_shapes_and_unit_norm(nano):
    rng = np.random.default_rng(2)
    batch = random_batch(rng, 8)
    h, z = enc.encode(nano, batch)
    assert h.shape == (8, nano.config.rep_dim)
    assert z.shape == (8, nano.config.embed_dim)
    assert np.allclose(np.linalg.norm(h, axis=1), 1.0, atol=1e-5)
    assert np.allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-5)


def test_identical_inputs_identical_rows(nano):
    x = random_batch(np.random.default_rng(3), 1)
    batch = np.repeat(x, 4, axis=0)
    h, z = enc.encode(nano, batch)
    for i in range(1, 4):
        assert np.array_equal(h[0], h[i])
        assert np.array_equal(z[0], z[i])


def test_per_sample_independence(nano):
    rng = np.random.default_rng(4)
    batch = random_batch(rng, 8)
    h8, z8 = enc.encode(nano, batch)
    h1, z1 = enc.encode(nano, batch[3:4])
    assert np.allclose(h1[0], h8[3], atol=1e-5)
    assert np.allclose(z1[0], z8[3], atol=1e-5)


def test_permutation_equivariance(nano):
    rng = np.random.default_rng(5)
    batch = random_batch(rng, 6)
    perm = np.array([5, 2, 0, 1, 4, 3])
    h, z = enc.encode(nano, batch)
    hp, zp = enc.encode(nano, batch[perm])
    assert np.allclose(hp, h[perm], atol=1e-6)
    assert np.allclose(zp, z[perm], atol=1e-6)


def test_fixed_seed_identical_parameters():
    cfg = enc.EncoderConfig.preset("nano")
    m1 = enc.build_encoder(cfg, np.random.default_rng(7))
    m2 = enc.build_encoder(cfg, np.random.default_rng(7))
    assert set(m1.params) == set(m2.params)
    for name in m1.params:
        assert np.array_equal(m1.params[name].data, m2.params[name].data)


def test_wrong_length_rejected(nano):
    with pytest.raises(ValueError):
        enc.encode(nano, np.zeros((2, 31, 4), dtype=np.float32))


def test_norm_first_flag_changes_block_wiring():
    cfg = enc.EncoderConfig.preset("nano", norm_first=True)
    m = enc.build_encoder(cfg, np.random.default_rng(0))
    base = enc.build_encoder(enc.EncoderConfig.preset("nano"), np.random.default_rng(0))
    x = random_batch(np.random.default_rng(8), 2)
    _, z1 = enc.encode(m, x)
    _, z2 = enc.encode(base, x)
    assert not np.allclose(z1, z2)


def test_checkpoint_roundtrip(tmp_path, nano):
    path = tmp_path / "enc.kmsp"
    enc.save_encoder(path, nano)
    back = enc.load_encoder(path)
    assert back.config == nano.config
    x = random_batch(np.random.default_rng(9), 3)
    h0, z0 = enc.encode(nano, x)
    h1, z1 = enc.encode(back, x)
    assert np.array_equal(h0, h1)
    assert np.array_equal(z0, z1)


def test_config_validation():
    with pytest.raises(ValueError):
        enc.EncoderConfig(stage_channels=(1, 2, 3), stage_blocks=(1, 1, 1, 1))
    with pytest.raises(ValueError):
        enc.EncoderConfig(stage_channels=(1, 2, 3, 0), stage_blocks=(1, 1, 1, 1))
