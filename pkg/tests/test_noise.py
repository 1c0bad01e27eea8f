from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decor.errors import EdgeMismatch, MissingSeed
from decor.graph import Graph, build_topology, metropolis_weights, weight_heterogeneity
from decor.noise import (
    EdgeSeed,
    SeedBook,
    clip,
    clip_rows,
    correlated_noise,
    correlated_sums,
    edge_seed_from_master,
    mix64,
    sample_indices,
    standard_normals,
    total_injected_noise,
    uncorrelated_noise,
)

SEED = EdgeSeed((2, 5), 0xDEADBEEF)


def _splitmix_reference(x: int) -> int:
    mask = (1 << 64) - 1
    z = x & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


class TestMixer:
    @settings(max_examples=200)
    @given(st.integers(0, 2**64 - 1))
    def test_matches_integer_reference(self, x):
        assert int(mix64(np.uint64(x))) == _splitmix_reference(x)

    def test_known_splitmix_output(self):
        # first output of the SplitMix64 generator seeded with 0
        assert _splitmix_reference(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF
        assert int(mix64(np.uint64(0x9E3779B97F4A7C15))) == 0xE220A8397B1DCDAF

    def test_edge_seed_is_symmetric(self):
        assert edge_seed_from_master(7, 3, 9) == edge_seed_from_master(7, 9, 3)
        assert edge_seed_from_master(7, 3, 9) != edge_seed_from_master(8, 3, 9)


class TestClip:
    def test_scales_down(self):
        np.testing.assert_allclose(clip(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    def test_identity_inside_ball(self):
        g = np.array([0.1, -0.2])
        np.testing.assert_array_equal(clip(g, 1.0), g)

    def test_zero_threshold(self):
        np.testing.assert_array_equal(clip(np.array([1.0, 2.0]), 0.0), [0.0, 0.0])

    def test_zero_vector(self):
        np.testing.assert_array_equal(clip(np.zeros(3), 1.0), np.zeros(3))

    @settings(max_examples=200)
    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8),
        st.floats(0.0, 100.0),
    )
    def test_norm_and_direction(self, values, c):
        g = np.array(values)
        out = clip(g, c)
        assert np.linalg.norm(out) <= c * (1 + 1e-12) + 1e-300
        if np.linalg.norm(out) > 0:
            cos = out @ g / (np.linalg.norm(out) * np.linalg.norm(g))
            assert cos == pytest.approx(1.0, abs=1e-9)

    def test_rows_match_single(self):
        rng = np.random.default_rng(0)
        g = rng.normal(size=(3, 5, 4)) * 3
        c = np.array([0.5, 1.0, 10.0])
        out = clip_rows(g, c)
        for b in range(3):
            for i in range(5):
                np.testing.assert_allclose(out[b, i], clip(g[b, i], c[b]), rtol=1e-15)


class TestCorrelated:
    def test_antisymmetric_bitwise(self):
        a = correlated_noise(SEED, 3, (2, 5), 17, 1.7)
        b = correlated_noise(SEED, 3, (5, 2), 17, 1.7)
        assert np.array_equal(a, -b)
        assert np.all(a + b == 0.0)

    def test_lower_index_gets_positive(self):
        base = 1.7 * standard_normals(np.array([SEED.seed], dtype=np.uint64), 3, 6)[0]
        np.testing.assert_array_equal(correlated_noise(SEED, 3, (2, 5), 6, 1.7), base)

    def test_edge_mismatch(self):
        with pytest.raises(EdgeMismatch):
            correlated_noise(SEED, 0, (2, 4), 3, 1.0)

    def test_deterministic(self):
        np.testing.assert_array_equal(
            correlated_noise(SEED, 11, (5, 2), 9, 0.3), correlated_noise(SEED, 11, (5, 2), 9, 0.3)
        )

    def test_moments(self):
        sigma = 2.5
        v = correlated_noise(SEED, 0, (2, 5), 100_000, sigma)
        se_mean = sigma / np.sqrt(len(v))
        se_var = sigma**2 * np.sqrt(2 / len(v))
        assert abs(v.mean()) < 4 * se_mean
        assert abs(v.var() - sigma**2) < 4 * se_var

    def test_rounds_uncorrelated(self):
        a = correlated_noise(SEED, 0, (2, 5), 100_000, 1.0)
        b = correlated_noise(SEED, 1, (2, 5), 100_000, 1.0)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.02

    def test_prefix_stable(self):
        # the first coordinates do not depend on the requested length
        short = correlated_noise(SEED, 4, (2, 5), 3, 1.0)
        long = correlated_noise(SEED, 4, (2, 5), 10, 1.0)
        np.testing.assert_array_equal(short, long[:3])


class TestUncorrelated:
    def test_zero_sigma(self):
        np.testing.assert_array_equal(uncorrelated_noise(5, 0, 4, 0.0), np.zeros(4))

    def test_deterministic(self):
        np.testing.assert_array_equal(uncorrelated_noise(5, 2, 8, 1.0), uncorrelated_noise(5, 2, 8, 1.0))

    def test_moments(self):
        v = uncorrelated_noise(12345, 7, 100_000, 0.5)
        assert abs(v.mean()) < 4 * 0.5 / np.sqrt(len(v))
        assert abs(v.var() - 0.25) < 4 * 0.25 * np.sqrt(2 / len(v))

    def test_users_independent(self):
        a = uncorrelated_noise(1, 0, 100_000, 1.0)
        b = uncorrelated_noise(2, 0, 100_000, 1.0)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.02

    def test_standard_normal_tail_mass(self):
        z = standard_normals(np.arange(10, dtype=np.uint64), 0, 20_000).ravel()
        frac = np.mean(np.abs(z) > 1.959964)
        assert abs(frac - 0.05) < 4 * np.sqrt(0.05 * 0.95 / z.size)


class TestTotalNoise:
    def setup_method(self):
        self.g = build_topology("ring", 6)
        self.book = SeedBook.from_master(42, self.g)
        self.seeds = self.book.edge_map()

    def test_cancels_exactly_as_signed_pairs(self):
        total = np.zeros(5)
        for i in range(self.g.n):
            for j in self.g.neighbors(i):
                if i < j:
                    s = self.seeds[(i, j)]
                    total += correlated_noise(s, 3, (i, j), 5, 2.0) + correlated_noise(s, 3, (j, i), 5, 2.0)
        assert np.all(total == 0.0)

    def test_user_totals_sum_to_zero(self):
        total = sum(
            total_injected_noise(i, 3, self.seeds, self.g.neighbors(i), 2.0, 0.0, 5, 0) for i in range(self.g.n)
        )
        np.testing.assert_allclose(total, 0.0, rtol=0, atol=1e-13)

    def test_paired_draws_negate(self):
        for (i, j), s in self.seeds.items():
            assert np.array_equal(correlated_noise(s, 1, (i, j), 4, 1.0), -correlated_noise(s, 1, (j, i), 4, 1.0))

    def test_isolated_user(self):
        out = total_injected_noise(0, 2, {}, [], 5.0, 1.0, 4, 77)
        np.testing.assert_array_equal(out, uncorrelated_noise(77, 2, 4, 1.0))

    def test_missing_seed(self):
        with pytest.raises(MissingSeed):
            total_injected_noise(0, 0, {}, [1], 1.0, 1.0, 3, 0)

    def test_variance_scales_with_degree(self):
        g = build_topology("star", 5)
        book = SeedBook.from_master(9, g)
        d = 100_000
        out = total_injected_noise(0, 0, book.edge_map(), g.neighbors(0), 0.7, 1.2, d, book.users[0])
        expected = 4 * 0.7**2 + 1.2**2
        assert abs(out.var() - expected) < 4 * expected * np.sqrt(2 / d)

    def test_batched_sums_match_per_user(self):
        d = 6
        batched = correlated_sums(self.g, self.book, 5, d)
        for i in range(self.g.n):
            one = total_injected_noise(i, 5, self.seeds, self.g.neighbors(i), 1.0, 0.0, d, 0)
            np.testing.assert_allclose(batched[i], one, rtol=0, atol=1e-15)

    def test_order_independent(self):
        rev = {k: self.seeds[k] for k in reversed(list(self.seeds))}
        for i in range(self.g.n):
            a = total_injected_noise(i, 0, self.seeds, self.g.neighbors(i), 1.0, 1.0, 3, 5)
            b = total_injected_noise(i, 0, rev, list(reversed(self.g.neighbors(i))), 1.0, 1.0, 3, 5)
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)

    def test_seedbook_deterministic(self):
        assert SeedBook.from_master(42, self.g) == self.book
        assert SeedBook.from_master(43, self.g) != self.book


class TestSampling:
    def test_range_and_uniformity(self):
        seeds = np.arange(20_000, dtype=np.uint64)
        idx = sample_indices(seeds, 0, np.full(seeds.shape, 7))
        assert idx.min() >= 0 and idx.max() <= 6
        counts = np.bincount(idx, minlength=7)
        expected = len(seeds) / 7
        assert np.all(np.abs(counts - expected) < 5 * np.sqrt(expected))


@pytest.mark.parametrize("kind", ["ring", "grid", "complete"])
def test_noise_reduction_ratio(kind):
    g = build_topology(kind, 16)
    w = metropolis_weights(g).w
    book = SeedBook.from_master(2024, g)
    d, rounds = 8, 10_000
    num = den = 0.0
    for t in range(rounds):
        n_mat = correlated_sums(g, book, t, d)
        den += float(np.sum(n_mat**2))
        num += float(np.sum((w @ n_mat) ** 2))
    assert den / rounds == pytest.approx(2 * g.num_edges * d, rel=0.03)
    assert (num / rounds) / (2 * g.num_edges * d) == pytest.approx(weight_heterogeneity(g, metropolis_weights(g)), rel=0.03)


def test_empty_graph_has_no_correlated_noise():
    g = Graph(3)
    np.testing.assert_array_equal(correlated_sums(g, SeedBook.from_master(0, g), 0, 4), np.zeros((3, 4)))
