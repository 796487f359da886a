import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from randrand.errors import BreakdownError
from randrand.operators import ShiftedOperator, dense_operator, diagonal_operator
from randrand.orthogonalization import (
    build_basis,
    build_recycle_pack,
    cholesky_with_fallback,
    explicit_qr,
    orthogonality_measure,
    qless_chol_qr,
    qless_precond_chol_qr,
    rank_deficient,
    recycle_factor,
)

from conftest import random_orthogonal, spd_matrix


def identity_op(n):
    return ShiftedOperator(diagonal_operator(np.ones(n)), 0.0)


def conditioned_block(n, l, cond, seed):
    rng = np.random.default_rng(seed)
    U = random_orthogonal(n, rng)[:, :l]
    V = random_orthogonal(l, rng)
    return (U * np.logspace(0, -np.log10(cond), l)) @ V.T


def q_from_r(B, R):
    return sla.solve_triangular(R, B.T, trans="T", lower=False).T


class TestExplicitQR:
    def test_identity(self):
        Q, R = explicit_qr(np.eye(3))
        np.testing.assert_allclose(Q, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(R, np.eye(3), atol=1e-15)

    def test_scaled_columns(self):
        B = np.vstack([np.diag([2.0, 3.0]), np.zeros((2, 2))])
        _, R = explicit_qr(B)
        np.testing.assert_allclose(R, np.diag([2.0, 3.0]), atol=1e-15)

    def test_random_factorization(self, rng):
        B = rng.standard_normal((50, 5))
        Q, R = explicit_qr(B)
        assert np.linalg.norm(Q.T @ Q - np.eye(5)) <= 1e-13
        assert np.linalg.norm(Q @ R - B) <= 1e-13 * np.linalg.norm(B)

    def test_rank_deficiency_flagged(self, rng):
        B = rng.standard_normal((20, 3))
        B[:, 2] = B[:, 0] - B[:, 1]
        _, R = explicit_qr(B)
        assert rank_deficient(R)


class TestQlessCholQR:
    def test_identity_orthonormal_omega(self, rng):
        omega = random_orthogonal(6, rng)[:, :3]
        np.testing.assert_allclose(qless_chol_qr(identity_op(6), omega), np.eye(3), atol=1e-14)

    def test_scaled_omega(self):
        np.testing.assert_allclose(qless_chol_qr(identity_op(2), np.diag([2.0, 3.0])), np.diag([2.0, 3.0]))

    def test_diagonal_operator(self):
        op = ShiftedOperator(diagonal_operator([1.0, 10.0]), 0.0)
        np.testing.assert_allclose(qless_chol_qr(op, np.eye(2)), np.diag([1.0, 10.0]))

    def test_matvec_count(self, rng):
        A, _ = spd_matrix(40, 1)
        base = dense_operator(A)
        qless_chol_qr(ShiftedOperator(base, 0.1), rng.standard_normal((40, 7)))
        assert base.matvecs == 14

    def test_breakdown_reports_pivot(self):
        omega = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        with pytest.raises(BreakdownError) as err:
            qless_chol_qr(identity_op(3), omega)
        assert err.value.pivot == 1

    def test_fallback_regularizes(self):
        omega = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
        R = qless_chol_qr(identity_op(3), omega, fallback=True)
        assert np.all(np.isfinite(R))
        _, alpha = cholesky_with_fallback(omega.T @ omega)
        assert alpha > 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(10, 400), st.integers(1, 10), st.floats(0.0, 6.0), st.integers(0, 10_000))
    def test_gram_identity(self, n, l, log_cond, seed):
        l = min(l, n)
        B = conditioned_block(n, l, 10.0 ** log_cond, seed)
        R = qless_chol_qr(identity_op(n), B)
        assert np.linalg.norm(R.T @ R - B.T @ B, 2) <= 1e-9 * np.linalg.norm(B, 2) ** 2


class TestPreconditionedCholQR:
    def test_sampler_example(self):
        B = np.array([[3.0, 0.0], [0.0, 4.0], [0.0, 0.0]])
        theta = np.eye(3)[:2]
        R, r_sk = qless_precond_chol_qr(identity_op(3), B, theta=theta)
        np.testing.assert_allclose(r_sk, np.diag([3.0, 4.0]))
        np.testing.assert_allclose(R, np.diag([3.0, 4.0]))

    def test_full_sampler_matches_householder(self, rng):
        B = rng.standard_normal((30, 4))
        R, _ = qless_precond_chol_qr(identity_op(30), B, theta=np.eye(30))
        _, R_ref = explicit_qr(B)
        np.testing.assert_allclose(R, R_ref, rtol=1e-12, atol=1e-12)

    def test_stability_against_plain(self):
        B = conditioned_block(400, 10, 1e10, seed=0)
        R3, _ = qless_precond_chol_qr(identity_op(400), B, seed=0)
        assert orthogonality_measure(q_from_r(B, R3)) <= 1e-4
        try:
            R2 = qless_chol_qr(identity_op(400), B)
        except BreakdownError:
            return
        assert orthogonality_measure(q_from_r(B, R2)) >= 1e-1

    def test_dominance_over_seeds(self):
        for seed in range(50):
            cond = (1e6, 1e8, 1e10)[seed % 3]
            B = conditioned_block(300, 8, cond, seed)
            op = identity_op(300)
            try:
                R2 = qless_chol_qr(op, B)
            except BreakdownError:
                continue
            R3, _ = qless_precond_chol_qr(op, B, seed=seed)
            assert orthogonality_measure(q_from_r(B, R3)) <= orthogonality_measure(q_from_r(B, R2))


class TestRecycling:
    def test_unit_shift(self):
        pack = build_recycle_pack(diagonal_operator([1.0, 2.0]), np.eye(2))
        np.testing.assert_allclose(recycle_factor(pack, 1.0), np.diag([2.0, 3.0]), rtol=1e-13)

    def test_zero_shift_matches_fresh(self, rng):
        A, _ = spd_matrix(30, 2)
        omega = rng.standard_normal((30, 5))
        pack = build_recycle_pack(dense_operator(A), omega)
        fresh = qless_chol_qr(ShiftedOperator(dense_operator(A), 0.0), omega)
        np.testing.assert_allclose(recycle_factor(pack, 0.0), fresh, rtol=1e-10, atol=1e-10 * np.abs(fresh).max())

    @pytest.mark.parametrize("mu", [1e-3, 0.1, 1.0, 10.0, 100.0])
    def test_shift_grid_matches_fresh(self, mu, rng):
        A, _ = spd_matrix(60, 4, top=1e2)
        omega = rng.standard_normal((60, 6))
        pack = build_recycle_pack(dense_operator(A), omega)
        fresh = qless_chol_qr(ShiftedOperator(dense_operator(A), mu), omega)
        R = recycle_factor(pack, mu)
        assert np.linalg.norm(R - fresh) <= 1e-10 * np.linalg.norm(fresh)

    def test_small_shift_uses_stabilized_path(self, rng):
        A, _ = spd_matrix(40, 5)
        omega = rng.standard_normal((40, 4))
        pack = build_recycle_pack(dense_operator(A), omega)
        assert pack.alpha > 0
        mu = 0.5 * pack.alpha
        fresh = qless_chol_qr(ShiftedOperator(dense_operator(A), mu), omega)
        assert np.linalg.norm(recycle_factor(pack, mu) - fresh) <= 1e-8 * np.linalg.norm(fresh)

    def test_pack_matvecs(self, rng):
        A, _ = spd_matrix(30, 6)
        base = dense_operator(A)
        build_recycle_pack(base, rng.standard_normal((30, 5)))
        assert base.matvecs == 15


class TestOrthogonalityMeasure:
    def test_orthonormal(self, rng):
        assert orthogonality_measure(random_orthogonal(10, rng)[:, :4]) <= 1e-14

    def test_scaled_columns(self):
        Q = np.zeros((5, 2))
        Q[0, 0], Q[1, 1] = 2.0, 1.0
        assert orthogonality_measure(Q) == pytest.approx(3.0)

    def test_implicit_matches_explicit(self, rng):
        for seed in range(5):
            A, _ = spd_matrix(100, seed)
            op = ShiftedOperator(dense_operator(A), 0.01)
            omega = np.random.default_rng(seed).standard_normal((100, 8))
            basis = build_basis(op, omega, mode="basisless", orth="chol")
            Qm = q_from_r(op.matmat(omega), basis.r)
            implicit = orthogonality_measure(lambda V: op.matmat(omega @ basis.r_solve(V)), 8)
            probed = orthogonality_measure(lambda V: op.matmat(omega @ basis.r_solve(V)), 8, probes=60,
                                           qt=lambda W: basis.rt_solve(omega.T @ op.rmatmat(W)))
            explicit = orthogonality_measure(Qm)
            assert abs(implicit - explicit) <= 1e-8
            assert probed <= explicit * (1 + 1e-8) + 1e-12
