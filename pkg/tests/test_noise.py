import numpy as np
import pytest
from scipy import stats

from kmerspace import noise as nz
from kmerspace import seqcore as sq


def random_genome(rng, length, name="g"):
    return sq.Genome(name, "".join(sq.BASES[i] for i in rng.integers(0, 4, length)))


class TestSamplePositivePair:
    def test_ranges(self):
        rng = np.random.default_rng(0)
        g = random_genome(rng, 100)
        cfg = nz.AugmentConfig(k=30, d=50)
        for _ in range(500):
            ki, kj = nz.sample_positive_pair(g, cfg, rng)
            assert 0 <= ki.coord <= 20
            assert ki.coord <= kj.coord <= ki.coord + 50
            assert kj.coord <= 70
            assert ki.bases == g.bases[ki.coord:ki.coord + 30]
            assert kj.bases == g.bases[kj.coord:kj.coord + 30]

    def test_zero_offset_degenerate(self):
        rng = np.random.default_rng(1)
        g = random_genome(rng, 100)
        cfg = nz.AugmentConfig(k=30, d=0)
        ki, kj = nz.sample_positive_pair(g, cfg, rng)
        assert ki.coord == kj.coord and ki.bases == kj.bases

    def test_seeded_determinism(self):
        g = random_genome(np.random.default_rng(5), 200)
        cfg = nz.AugmentConfig()
        a = nz.sample_positive_pair(g, cfg, np.random.default_rng(42))
        b = nz.sample_positive_pair(g, cfg, np.random.default_rng(42))
        assert (a[0].coord, a[1].coord) == (b[0].coord, b[1].coord)

    def test_too_short_genome(self):
        g = sq.Genome("t", "ACGT" * 20)  # L=80 <= k+d
        with pytest.raises(ValueError):
            nz.sample_positive_pair(g, nz.AugmentConfig(k=30, d=50), np.random.default_rng(0))


class TestApplyNoise:
    def test_zero_noise_identity(self):
        cfg = nz.AugmentConfig(flat_sub_rate=0, deam_rate=0, revcomp_prob=0)
        km = sq.Kmer("ACGTACGTACGTACGTACGTACGTACGTAC")
        out = nz.apply_noise(km, cfg, np.random.default_rng(0))
        assert np.array_equal(out, sq.one_hot(km))

    def test_forced_revcomp_branch(self):
        cfg = nz.AugmentConfig(flat_sub_rate=0, deam_rate=0, revcomp_prob=1)
        km = sq.Kmer("ACGTACGTACGTACGTACGTACGTACGTAC")
        out = nz.apply_noise(km, cfg, np.random.default_rng(0))
        assert np.array_equal(out, sq.reverse_complement(sq.one_hot(km)))

    def test_monte_carlo_substitution_rates(self):
        # all-C 30-mers; measure C->T per position against the analytic rate
        cfg = nz.AugmentConfig(flat_sub_rate=0.01, deam_rate=0.10,
                               deam_end_len=10, revcomp_prob=0)
        km = sq.Kmer("C" * 30)
        rng = np.random.default_rng(123)
        n = 100_000
        t_counts = np.zeros(30)
        for _ in range(n):
            x = nz.apply_noise(km, cfg, rng)
            t_counts += x[:, 3]
        freq = t_counts / n
        end_expect = cfg.deam_rate + cfg.flat_sub_rate / 3
        assert np.all(np.abs(freq[:10] - end_expect) < 0.01)
        assert np.all(np.abs(freq[10:] - cfg.flat_sub_rate / 3) < 0.005)

    def test_shape_and_rowsum_preserved(self):
        cfg = nz.AugmentConfig()
        rng = np.random.default_rng(7)
        km = sq.Kmer("ACGT" * 7 + "AC")
        for _ in range(50):
            x = nz.apply_noise(km, cfg, rng)
            assert x.shape == (30, 4)
            assert np.all(x.sum(axis=1) == 1)


class TestAugmentPair:
    def test_zero_noise_d0_equal_up_to_rc(self):
        cfg = nz.AugmentConfig(d=0, flat_sub_rate=0, deam_rate=0, revcomp_prob=0.5)
        rng = np.random.default_rng(3)
        g = random_genome(np.random.default_rng(8), 200)
        for _ in range(50):
            xi, xj, ci, cj = nz.augment_pair(g, cfg, rng)
            assert ci == cj
            same = np.array_equal(xi, xj)
            flipped = np.array_equal(xi, sq.reverse_complement(xj))
            assert same or flipped

    def test_offset_bound_always_holds(self):
        cfg = nz.AugmentConfig()
        rng = np.random.default_rng(4)
        g = random_genome(np.random.default_rng(9), 500)
        for _ in range(2000):
            _, _, ci, cj = nz.augment_pair(g, cfg, rng)
            assert abs(ci - cj) <= cfg.d

    def test_seeded_determinism(self):
        cfg = nz.AugmentConfig()
        g = random_genome(np.random.default_rng(10), 300)
        a = nz.augment_pair(g, cfg, np.random.default_rng(42))
        b = nz.augment_pair(g, cfg, np.random.default_rng(42))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert a[2:] == b[2:]


class TestSimulateReads:
    def test_noiseless_reads_match_reference(self):
        rng = np.random.default_rng(11)
        g = random_genome(rng, 400)
        cfg = nz.DamageConfig(deam_ss=0, deam_ds=0, seq_error_rate=0)
        rs = nz.simulate_reads(g, 200, cfg, np.random.default_rng(0))
        for r in rs:
            ref = g.bases[r.coord:r.coord + cfg.fragment_len]
            if r.strand == sq.FORWARD:
                assert r.bases == ref
            else:
                assert r.bases == sq.revcomp_bases(ref)

    def test_count_error(self):
        g = random_genome(np.random.default_rng(1), 100)
        with pytest.raises(ValueError):
            nz.simulate_reads(g, 0, nz.DamageConfig(), np.random.default_rng(0))

    def test_geom_p_one_gives_zero_overhang(self):
        rng = np.random.default_rng(12)
        g = random_genome(rng, 300)
        cfg = nz.DamageConfig(overhang_geom_p=1.0, deam_ss=0.7, deam_ds=0.0,
                              seq_error_rate=0.0)
        rs = nz.simulate_reads(g, 500, cfg, np.random.default_rng(0))
        for r in rs:
            ref = g.bases[r.coord:r.coord + 30]
            expect = ref if r.strand == sq.FORWARD else sq.revcomp_bases(ref)
            assert r.bases == expect  # overhang length 0 -> ss rate never applies

    def test_end_vs_interior_deamination_ratio(self):
        rng = np.random.default_rng(13)
        g = random_genome(rng, 2000)
        cfg = nz.DamageConfig()
        rs = nz.simulate_reads(g, 100_000, cfg, np.random.default_rng(7))
        flen = cfg.fragment_len
        c_at = np.zeros(flen)
        ct_at = np.zeros(flen)
        for r in rs:
            ref = g.bases[r.coord:r.coord + flen]
            oriented = ref if r.strand == sq.FORWARD else sq.revcomp_bases(ref)
            for j in range(flen):
                if oriented[j] == "C":
                    c_at[j] += 1
                    if r.bases[j] == "T":
                        ct_at[j] += 1
        freq = ct_at / np.maximum(c_at, 1)
        assert freq[0] / max(freq[15], 1e-9) >= 10

    def test_coordinates_uniform_chisquare(self):
        rng = np.random.default_rng(14)
        g = random_genome(rng, 2000)
        cfg = nz.DamageConfig()
        rs = nz.simulate_reads(g, 100_000, cfg, np.random.default_rng(21))
        coords = rs.coords
        n_slots = g.length - cfg.fragment_len + 1
        bins = np.linspace(0, n_slots, 21)
        observed, _ = np.histogram(coords, bins=bins)
        expected = np.full(20, len(coords) / 20)
        _, p = stats.chisquare(observed, expected)
        assert p > 0.001

    def test_determinism(self):
        g = random_genome(np.random.default_rng(15), 500)
        cfg = nz.DamageConfig()
        a = nz.simulate_reads(g, 50, cfg, np.random.default_rng(5))
        b = nz.simulate_reads(g, 50, cfg, np.random.default_rng(5))
        assert [(r.bases, r.coord, r.strand) for r in a] == \
               [(r.bases, r.coord, r.strand) for r in b]


def test_readset_tsv_roundtrip(tmp_path):
    g = random_genome(np.random.default_rng(16), 300)
    rs = nz.simulate_reads(g, 25, nz.DamageConfig(), np.random.default_rng(1))
    path = tmp_path / "reads.tsv"
    nz.save_readset(path, rs)
    back = nz.load_readset(path, source=g.name)
    assert len(back) == 25
    assert [(r.bases, r.coord, r.strand) for r in back] == \
           [(r.bases, r.coord, r.strand) for r in rs]


def test_config_validation():
    with pytest.raises(ValueError):
        nz.AugmentConfig(flat_sub_rate=1.5)
    with pytest.raises(ValueError):
        nz.AugmentConfig(deam_end_len=40, k=30)
    with pytest.raises(ValueError):
        nz.DamageConfig(fragment_len=0)
