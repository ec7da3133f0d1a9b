"""Gram/style pipeline and user profile tests."""

import numpy as np
import pytest

from socialrec.features import (
    GRAM_SIZE,
    STYLE_DIM,
    STYLE_LAYERS,
    STYLE_LAYER_FILTERS,
    downsample_gram,
    gram_matrix,
    style_vector,
    user_visual_profiles,
)
from socialrec.dataset import InteractionDataset


def random_layer_maps(rng, positions=40):
    return {
        name: rng.random((STYLE_LAYER_FILTERS[name], positions))
        for name in STYLE_LAYERS
    }


class TestGram:
    def test_orthonormal_rows_give_identity(self):
        assert np.array_equal(gram_matrix(np.eye(2)), np.eye(2))

    def test_hand_computed_product(self):
        G = gram_matrix([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(G, [[5.0, 11.0], [11.0, 25.0]])

    def test_duplicated_rows_coincide(self):
        rng = np.random.default_rng(0)
        B = rng.normal(size=(4, 9))
        B[2] = B[0]
        G = gram_matrix(B)
        assert G[0, 0] == pytest.approx(G[2, 2])
        assert G[0, 0] == pytest.approx(G[0, 2])

    def test_symmetric_psd(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            B = rng.normal(size=(rng.integers(2, 40), rng.integers(2, 30)))
            G = gram_matrix(B)
            assert np.allclose(G, G.T)
            assert np.linalg.eigvalsh(G).min() >= -1e-8

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            gram_matrix([[1.0, np.nan]])


class TestDownsample:
    def test_constant_matrix_stays_constant(self):
        for n in (32, 45, 64, 100):
            out = downsample_gram(np.full((n, n), 3.25))
            assert out.shape == (GRAM_SIZE, GRAM_SIZE)
            assert np.allclose(out, 3.25)

    def test_64_matches_2x2_mean_oracle(self):
        rng = np.random.default_rng(2)
        G = rng.normal(size=(64, 64))
        oracle = G.reshape(32, 2, 32, 2).mean(axis=(1, 3))
        assert np.allclose(downsample_gram(G), oracle, atol=1e-12)

    def test_symmetry_preserved(self):
        rng = np.random.default_rng(3)
        B = rng.normal(size=(50, 20))
        G = gram_matrix(B)
        out = downsample_gram(G)
        assert np.allclose(out, out.T)

    def test_uneven_groups_differ_by_at_most_one(self):
        # 45 rows over 32 groups: sizes must be 1 or 2 and exhaustive
        bounds = np.linspace(0, 45, GRAM_SIZE + 1).astype(int)
        sizes = np.diff(bounds)
        assert sizes.min() >= 1 and sizes.max() - sizes.min() <= 1
        assert sizes.sum() == 45

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="downsample"):
            downsample_gram(np.eye(8))


class TestStyleVector:
    def test_all_zero_maps(self):
        maps = {name: np.zeros((STYLE_LAYER_FILTERS[name], 10))
                for name in STYLE_LAYERS}
        v = style_vector(maps)
        assert v.shape == (STYLE_DIM,)
        assert not v.any()

    def test_length_is_5120(self):
        rng = np.random.default_rng(4)
        assert style_vector(random_layer_maps(rng)).shape == (5120,)

    def test_missing_layer_named(self):
        rng = np.random.default_rng(5)
        maps = random_layer_maps(rng)
        del maps["conv3_1"]
        with pytest.raises(ValueError, match="conv3_1"):
            style_vector(maps)

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(6)
        maps = random_layer_maps(rng)
        v0 = style_vector(maps)
        shuffled = {
            name: m[:, rng.permutation(m.shape[1])] for name, m in maps.items()
        }
        assert np.allclose(style_vector(shuffled), v0, atol=1e-9)


class TestUserProfiles:
    def make_ds(self, ratings, n_users=3, n_items=4):
        return InteractionDataset(
            [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)],
            ratings, [], [0] * n_items,
        )

    def test_single_rating_copies_item_row(self):
        ds = self.make_ds([(0, 2, None)])
        content = np.arange(8, dtype=np.float64).reshape(4, 2)
        style = np.arange(12, dtype=np.float64).reshape(4, 3)
        uc, us = user_visual_profiles(ds, content, style)
        assert np.array_equal(uc[0], content[2])
        assert np.array_equal(us[0], style[2])

    def test_opposite_vectors_cancel(self):
        ds = self.make_ds([(0, 0, None), (0, 1, None)])
        content = np.array([[1.0, -2.0], [-1.0, 2.0], [5.0, 5.0], [0.0, 0.0]])
        uc, _ = user_visual_profiles(ds, content, np.zeros((4, 1)))
        assert np.allclose(uc[0], 0.0)

    def test_mean_matches_bruteforce(self):
        rng = np.random.default_rng(7)
        ratings = [(0, int(i), None) for i in rng.choice(20, size=5, replace=False)]
        ds = InteractionDataset(
            ["u0"], [f"i{k}" for k in range(20)], ratings, [], [0] * 20,
        )
        content = rng.normal(size=(20, 6))
        style = rng.normal(size=(20, 9))
        uc, us = user_visual_profiles(ds, content, style)
        items = [i for _, i, _ in ratings]
        oracle_c = sum(content[i] for i in items) / len(items)
        oracle_s = sum(style[i] for i in items) / len(items)
        assert np.allclose(uc[0], oracle_c, atol=1e-12)
        assert np.allclose(us[0], oracle_s, atol=1e-12)

    def test_unrated_user_gets_zeros(self):
        ds = self.make_ds([(0, 0, None)])
        uc, us = user_visual_profiles(ds, np.ones((4, 2)), np.ones((4, 2)))
        assert not uc[1].any() and not us[2].any()
