import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from randrand.errors import ConfigurationError, DimensionError
from randrand.sketching import KINDS, check_epsilon_embedding, draw_sketch, fwht, sketch_apply


def _draw(kind, l, n, seed):
    params = {"l1": min(n, 4 * l)} if kind == "multilevel" else None
    return draw_sketch(kind, l, n, seed, params)


class TestDrawSketch:
    def test_column_sample_rows_of_identity(self):
        S = draw_sketch("column_sample", 2, 4, seed=0)
        X = S.materialize()
        assert X.shape == (2, 4)
        assert np.all(X.sum(axis=1) == 1.0)
        assert len({int(np.argmax(r)) for r in X}) == 2

    def test_sparse_column_structure(self):
        X = draw_sketch("sparse", 4, 3, seed=0, params={"gamma": 2}).materialize()
        for j in range(3):
            nz = X[:, j][X[:, j] != 0]
            assert nz.size == 2
            np.testing.assert_allclose(np.abs(nz), 1 / np.sqrt(2), rtol=0, atol=1e-15)

    def test_gaussian_moments(self):
        l = n = 100
        X = draw_sketch("gaussian", l, n, seed=0).materialize()
        assert abs(X.mean()) <= 3 / np.sqrt(l * n * l)
        assert abs(np.mean(np.sum(X * X, axis=0)) - 1) <= 0.1

    def test_sparse_gamma_too_large(self):
        with pytest.raises(ConfigurationError):
            draw_sketch("sparse", 2, 10, params={"gamma": 3})

    def test_multilevel_inner_too_small(self):
        with pytest.raises(ConfigurationError):
            draw_sketch("multilevel", 8, 100, params={"l1": 4})

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            draw_sketch("cauchy", 2, 4)

    @pytest.mark.parametrize("kind", KINDS)
    def test_seed_determinism(self, kind):
        M = np.random.default_rng(0).standard_normal((50, 3))
        a = sketch_apply(_draw(kind, 6, 50, 11), M)
        b = sketch_apply(_draw(kind, 6, 50, 11), M)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("n", [5, 64, 200])
    def test_sparse_column_norms(self, n):
        X = draw_sketch("sparse", 5, n, seed=3).materialize()
        np.testing.assert_allclose(np.linalg.norm(X, axis=0), 1.0, rtol=0, atol=1e-15)


class TestSketchApply:
    def test_column_sample_left(self):
        S = draw_sketch("column_sample", 3, 3, seed=0)
        np.testing.assert_array_equal(sketch_apply(S, np.eye(3), "left_X"), np.eye(3))

    def test_sparse_on_unit_vectors(self):
        S = draw_sketch("sparse", 6, 20, seed=2)
        X = S.materialize()
        for j in range(20):
            e = np.zeros(20)
            e[j] = 1.0
            np.testing.assert_array_equal(sketch_apply(S, e), X[:, j])

    def test_srht_two_by_two(self):
        # l = s = 2 keeps both rows; pick a seed whose sign flips are both +1
        for seed in range(100):
            S = draw_sketch("srht", 2, 2, seed=seed)
            if np.all(S._data["signs"] == 1.0):
                break
        np.testing.assert_allclose(sketch_apply(S, np.array([1.0, 0.0])), [2 ** -0.5, 2 ** -0.5], rtol=1e-15)

    def test_dimension_mismatch(self):
        S = draw_sketch("gaussian", 3, 10)
        with pytest.raises(DimensionError):
            sketch_apply(S, np.ones(9))
        with pytest.raises(DimensionError):
            sketch_apply(S, np.ones((2, 9)), "right_XT")

    def test_right_products(self, rng):
        S = draw_sketch("srht", 4, 12, seed=5)
        X = S.materialize()
        M = rng.standard_normal((3, 12))
        np.testing.assert_allclose(sketch_apply(S, M, "right_XT"), M @ X.T, atol=1e-13)
        W = rng.standard_normal((3, 4))
        np.testing.assert_allclose(sketch_apply(S, W, "right_X"), W @ X, atol=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from(KINDS), st.integers(8, 256), st.integers(1, 8), st.integers(0, 10_000))
    def test_adjoint_consistency(self, kind, n, l, seed):
        S = _draw(kind, l, n, seed)
        rng = np.random.default_rng(seed)
        u, w = rng.standard_normal(n), rng.standard_normal(l)
        lhs = sketch_apply(S, u, "left_X") @ w
        rhs = u @ sketch_apply(S, w, "left_XT")
        scale = np.linalg.norm(sketch_apply(S, u)) * np.linalg.norm(w) + np.linalg.norm(u) * np.linalg.norm(w)
        assert abs(lhs - rhs) <= 1e-12 * scale

    def test_srht_isometry_on_average(self):
        v = np.random.default_rng(0).standard_normal(64)
        sq = [np.sum(sketch_apply(draw_sketch("srht", 16, 64, seed=s), v) ** 2) for s in range(500)]
        assert abs(np.mean(sq) / (v @ v) - 1) <= 0.05


class TestFwht:
    def test_first_column(self):
        np.testing.assert_array_equal(fwht(np.array([1.0, 0, 0, 0])), [1, 1, 1, 1])

    def test_constant_vector(self):
        np.testing.assert_array_equal(fwht(np.ones(4)), [4, 0, 0, 0])

    def test_not_power_of_two(self):
        with pytest.raises(DimensionError):
            fwht(np.ones(6))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4))
    def test_involution(self, v):
        v = np.array(v)
        np.testing.assert_allclose(fwht(fwht(v.copy())), 4 * v, atol=1e-9 * (1 + np.abs(v).max()))

    def test_matches_hadamard_matrix(self):
        from scipy.linalg import hadamard

        M = np.random.default_rng(0).standard_normal((16, 3))
        np.testing.assert_allclose(fwht(M.copy()), hadamard(16) @ M, atol=1e-12)


class TestEmbeddingCheck:
    def test_identity_sampler(self, rng):
        B = rng.standard_normal((10, 3))
        res = check_epsilon_embedding(draw_sketch("column_sample", 10, 10), B, epsilon=0.1)
        assert res.passed and res.observed <= 1e-14

    def test_zero_map_fails(self, rng):
        res = check_epsilon_embedding(np.zeros((4, 10)), rng.standard_normal((10, 3)), epsilon=0.9)
        assert not res.passed
        assert np.all(np.array(res.sampled_ratios) == 0.0)

    def test_rank_deficient_columns_skipped(self):
        B = np.zeros((10, 2))
        res = check_epsilon_embedding(np.eye(10), B)
        assert res.passed and res.sampled_ratios == []

    def test_gaussian_oversampled_passes(self):
        n, l = 512, 8
        B = np.random.default_rng(99).standard_normal((n, l))
        passes = sum(check_epsilon_embedding(draw_sketch("gaussian", 20 * l, n, seed=s), B, trials=50,
                                             seed=s, epsilon=0.5).passed for s in range(100))
        assert passes >= 99
