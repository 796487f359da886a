import numpy as np
import pytest

from randrand.operators import ShiftedOperator, dense_operator


def random_orthogonal(n, rng):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def spd_matrix(n, seed, top=1e4, decay=0.5, n_head=5, floor=1e-3):
    """Dense spd matrix with a few large eigenvalues and a power-law tail."""
    rng = np.random.default_rng(seed)
    head = top * np.logspace(0, -2, n_head)
    tail = np.arange(1, n - n_head + 1, dtype=float) ** -decay
    lam = np.concatenate([head, tail]) + floor
    U = random_orthogonal(n, rng)
    A = (U * lam) @ U.T
    return 0.5 * (A + A.T), np.sort(lam)


def indefinite_matrix(n, seed, n_neg=4, top=1e3):
    rng = np.random.default_rng(seed)
    lam = np.concatenate([top * np.logspace(0, -2, 6), np.arange(1, n - 5, dtype=float) ** -0.5])
    lam[6:6 + n_neg] *= -1
    U = random_orthogonal(n, rng)
    A = (U * lam) @ U.T
    return 0.5 * (A + A.T), lam


def shifted(A, mu, definiteness=None):
    if definiteness is None:
        definiteness = "spd" if np.linalg.eigvalsh(A)[0] >= 0 else "symmetric-indefinite"
    return ShiftedOperator(dense_operator(A, symmetric=True, definiteness=definiteness), mu)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
