"""Orthogonalization of the deflation basis ``A_mu @ Omega``.

Three routes produce the triangular transform ``R`` with
``(A_mu Omega)^T (A_mu Omega) = R^T R``:

* Householder QR of the materialized block (explicit ``Q`` kept);
* Q-less Cholesky QR from the Gram matrix, cheap but with orthogonality
  loss growing like ``u cond^2``;
* Q-less Cholesky QR preconditioned by the R factor of a small sketch,
  with loss growing like ``u cond``.

For sequences of shifts the Gram matrix separates as
``G_aa + 2 mu G_a + mu^2 G_i``, so one set of products with ``A`` serves
every shift (:class:`RecyclePack`, :func:`recycle_factor`).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import BreakdownError, ConfigurationError, DimensionError
from .sketching import SketchOp, draw_sketch, sketch_apply

UNIT_ROUNDOFF = np.finfo(np.float64).eps / 2
FALLBACK_SCALES = tuple(10.0 ** -k for k in range(14, 0, -1))
TRUNCATION_RTOL = 1e-12


def _sym(W):
    return 0.5 * (W + W.T)


def upper_cholesky(W):
    """Upper-triangular ``R`` with ``R^T R = W``.

    Raises :class:`BreakdownError` with the failing pivot when ``W`` is not
    numerically positive definite.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {W.shape}")
    if not np.all(np.isfinite(W)):
        raise BreakdownError(0, "Gram matrix has non-finite entries")
    c, info = lapack.dpotrf(W, lower=0, clean=1)
    if info > 0:
        raise BreakdownError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf argument {-info} invalid")
    return np.triu(c)


def cholesky_with_fallback(W, scales=FALLBACK_SCALES):
    """Cholesky factor of ``W``, regularized only if needed.

    On breakdown, ``W + alpha I`` is factorized for the smallest
    ``alpha`` in ``scales * ||W||`` that succeeds.  Returns ``(R, alpha)``.
    """
    try:
        return upper_cholesky(W), 0.0
    except BreakdownError as err:
        last = err
    norm_w = np.linalg.norm(W, 2)
    eye = np.eye(W.shape[0])
    for s in scales:
        alpha = s * norm_w
        try:
            return upper_cholesky(W + alpha * eye), alpha
        except BreakdownError as err:
            last = err
    raise last


def _fix_signs(Q, R):
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d, R * d[:, None]


def explicit_qr(B):
    """Householder QR with a non-negative diagonal in ``R``.

    Rank deficiency is not fatal; it shows up as near-zero diagonal entries
    in ``R`` (see :func:`rank_deficient`).
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] < B.shape[1]:
        raise DimensionError(f"explicit_qr needs a tall matrix, got shape {B.shape}")
    Q, R = np.linalg.qr(B, mode="reduced")
    return _fix_signs(Q, R)


def rank_deficient(R, rtol=TRUNCATION_RTOL):
    """True when a diagonal entry of ``R`` is negligible."""
    d = np.abs(np.diag(R))
    return bool(d.size and d.min() <= rtol * max(d.max(), np.finfo(float).tiny))


def _gram_right_to_left(op_mu, omega):
    Y = op_mu.matmat(omega)
    Z = op_mu.rmatmat(Y)
    return _sym(omega.T @ Z)


def qless_chol_qr(op_mu, omega, fallback=False):
    """Fast Q-less Cholesky QR.

    Forms ``Omega^T A_mu^T A_mu Omega`` right to left with exactly ``2 l``
    operator applications and returns its upper Cholesky factor.  With
    ``fallback=True`` a breakdown triggers the regularized retry of
    :func:`cholesky_with_fallback`; otherwise :class:`BreakdownError`
    propagates.
    """
    omega = np.asarray(omega, dtype=np.float64)
    W = _gram_right_to_left(op_mu, omega)
    if fallback:
        return cholesky_with_fallback(W)[0]
    return upper_cholesky(W)


def default_sketch_rows(l, n):
    return min(n, 4 * l + 8)


def _precond_parts(op_mu, omega, theta=None, seed=0, fallback=False):
    n, l = omega.shape
    if theta is None:
        theta = draw_sketch("gaussian", default_sketch_rows(l, n), n, seed)
    if isinstance(theta, SketchOp):
        if theta.n != n:
            raise DimensionError("sketch ambient dimension does not match the operator")
        if theta.l < l:
            raise ConfigurationError(f"sketch has {theta.l} rows, fewer than l={l}")
        S = sketch_apply(theta, op_mu.matmat(omega), "left_X")
    else:
        S = np.asarray(theta) @ op_mu.matmat(omega)
    _, r_sk = np.linalg.qr(S, mode="reduced")
    r_sk = r_sk * np.where(np.diag(r_sk) < 0, -1.0, 1.0)[:, None]
    # preconditioned block, applied right to left: A_mu (Omega R_sk^{-1})
    W = sla.solve_triangular(r_sk, omega.T, trans="T", lower=False).T
    Z = op_mu.matmat(W)
    G = _sym(Z.T @ Z)
    r_chol = cholesky_with_fallback(G)[0] if fallback else upper_cholesky(G)
    return r_chol @ r_sk, r_sk, r_chol


def qless_precond_chol_qr(op_mu, omega, theta=None, seed=0, fallback=False):
    """Q-less Cholesky QR preconditioned by a sketched QR.

    ``R_sk`` is the R factor of ``theta @ A_mu @ Omega``.  The Gram matrix
    of the well-conditioned block ``A_mu Omega R_sk^{-1}`` is factorized as
    ``R_chol^T R_chol`` and ``R = R_chol R_sk``.  When ``theta`` is omitted
    a Gaussian sketch with ``min(n, 4 l + 8)`` rows is drawn from ``seed``.

    Returns ``(R, R_sk)``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    R, r_sk, _ = _precond_parts(op_mu, omega, theta, seed, fallback)
    return R, r_sk


@dataclass
class RecyclePack:
    """Shift-independent Gram blocks of a test matrix.

    ``g_aa = Omega^T A^T A Omega``, ``g_a = Omega^T A Omega`` (symmetrized)
    and ``g_i = Omega^T Omega``.  When ``r_alpha`` is present it is the
    factor at the stabilizing shift ``alpha`` and ``w_aa``, ``w_a``,
    ``w_i`` are the same three blocks for ``A + alpha I`` in the basis
    ``W = Omega R_alpha^{-1}``.
    """

    g_aa: np.ndarray
    g_a: np.ndarray
    g_i: np.ndarray
    alpha: float = 0.0
    r_alpha: np.ndarray = None
    w_aa: np.ndarray = None
    w_a: np.ndarray = None
    w_i: np.ndarray = None
    a_omega: np.ndarray = field(default=None, repr=False)

    def gram(self, mu):
        return self.g_aa + 2.0 * mu * self.g_a + mu * mu * self.g_i


def build_recycle_pack(base, omega, alpha=None, shifted=True):
    """Precompute the Gram blocks of ``omega`` for ``base``.

    Costs ``2 l`` applications of ``base`` (``A Omega`` then ``A^T (A
    Omega)``) plus ``l`` more for the shifted blocks when ``shifted``.
    ``alpha`` defaults to ``sqrt(u) * ||A||`` with ``||A||`` estimated from
    the blocks themselves, which needs no further products.
    """
    omega = np.asarray(omega, dtype=np.float64)
    Y = base.matmat(omega)
    Z = base.rmatmat(Y)
    g_aa = _sym(omega.T @ Z)
    g_a = _sym(omega.T @ Y)
    g_i = _sym(omega.T @ omega)
    pack = RecyclePack(g_aa, g_a, g_i, a_omega=Y)
    if not shifted:
        return pack
    if alpha is None:
        # largest Rayleigh quotient of A^T A over range(Omega): a lower
        # bound on ||A||^2 that is accurate when Omega captures the top
        lam = sla.eigh(g_aa, g_i, eigvals_only=True, subset_by_index=[g_i.shape[0] - 1] * 2)
        alpha = np.sqrt(UNIT_ROUNDOFF) * np.sqrt(max(lam[-1], 0.0))
    alpha = float(alpha)
    if alpha <= 0:
        return pack
    r_alpha = cholesky_with_fallback(pack.gram(alpha))[0]
    W = sla.solve_triangular(r_alpha, omega.T, trans="T", lower=False).T
    AW = base.matmat(W)
    AaW = AW + alpha * W
    pack.alpha = alpha
    pack.r_alpha = r_alpha
    pack.w_aa = _sym(AaW.T @ AaW)
    pack.w_a = _sym(W.T @ AaW)
    pack.w_i = _sym(W.T @ W)
    return pack


def recycle_factors(pack, mu, fallback=False):
    """Triangular factors whose product is ``R(mu)``, left to right."""
    chol = cholesky_with_fallback if fallback else (lambda W: (upper_cholesky(W), 0.0))
    if pack.r_alpha is not None and 0.0 <= mu <= pack.alpha:
        d = mu - pack.alpha
        G = pack.w_aa + 2.0 * d * pack.w_a + d * d * pack.w_i
        r_chol = chol(_sym(G))[0]
        return (r_chol, pack.r_alpha)
    return (chol(_sym(pack.gram(mu)))[0],)


def recycle_factor(pack, mu, fallback=False):
    """``R`` for the shift ``mu`` from precomputed Gram blocks.

    No products with ``A`` are needed.  For ``0 <= mu <= alpha`` the
    shifted-Cholesky path returns ``R_chol @ R_alpha``.
    """
    factors = recycle_factors(pack, float(mu), fallback)
    R = factors[0]
    for F in factors[1:]:
        R = R @ F
    return R


@dataclass
class DeflationBasis:
    """The pair ``(Omega, R)`` spanning ``range(A_mu Omega)``.

    ``factors`` holds upper-triangular matrices whose product is ``R``;
    inverses are applied factor by factor, which keeps the preconditioned
    factorization's accuracy.  ``q_factor`` is the explicit orthonormal
    basis in explicit mode.
    """

    omega: np.ndarray
    r: np.ndarray
    mode: str = "explicit"
    q_factor: np.ndarray = None
    r_sk: np.ndarray = None
    factors: tuple = None
    recycle: RecyclePack = None
    truncated: bool = False
    orth: str = "qr"
    transform: np.ndarray = None

    def __post_init__(self):
        if self.factors is None:
            self.factors = (self.r,)

    @property
    def n(self):
        return self.omega.shape[0]

    @property
    def l(self):
        return self.omega.shape[1]

    def r_solve(self, V):
        """``R^{-1} V``; with ``R = F_1 F_2 ...`` the leftmost factor is undone first."""
        out = V
        for F in self.factors:
            out = sla.solve_triangular(F, out, lower=False)
        return out

    def rt_solve(self, V):
        """``R^{-T} V``."""
        out = V
        for F in reversed(self.factors):
            out = sla.solve_triangular(F, out, trans="T", lower=False)
        return out

    def cond_r(self):
        return float(np.linalg.cond(self.r))


def truncation_transform(S, rtol=TRUNCATION_RTOL):
    """Right singular vectors of ``S`` whose singular values exceed ``rtol * s_max``."""
    _, s, Vt = np.linalg.svd(S, full_matrices=False)
    keep = s > rtol * s[0] if s.size else np.zeros(0, bool)
    return Vt[keep].T, int(np.count_nonzero(keep)) < S.shape[1]


def build_basis(op_mu, omega, mode="explicit", orth=None, theta=None, seed=0,
                truncate=False, fallback=False):
    """Orthogonalize ``A_mu @ Omega`` and package the result.

    ``mode`` is ``explicit`` (Householder QR, ``Q`` stored) or
    ``basisless`` (only ``R`` stored).  In basis-less mode ``orth`` selects
    ``chol`` (fast Q-less Cholesky QR) or ``precond_chol`` (the sketched
    variant, the default).  ``truncate`` drops directions of the test
    matrix whose sketched singular values fall below ``1e-12`` of the
    largest; the applied orthogonal transform is kept in ``transform``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != op_mu.n:
        raise DimensionError("test matrix must have n rows")
    transform = None
    truncated = False
    if truncate:
        n, l = omega.shape
        if mode == "explicit":
            S = op_mu.matmat(omega)
        else:
            th = theta if theta is not None else draw_sketch("gaussian", default_sketch_rows(l, n), n, seed)
            S = sketch_apply(th, op_mu.matmat(omega), "left_X") if isinstance(th, SketchOp) else th @ op_mu.matmat(omega)
        transform, truncated = truncation_transform(S)
        omega = omega @ transform
    if mode == "explicit":
        Q, R = explicit_qr(op_mu.matmat(omega))
        return DeflationBasis(omega, R, "explicit", q_factor=Q, truncated=truncated or rank_deficient(R),
                              orth="qr", transform=transform)
    if mode != "basisless":
        raise ConfigurationError(f"unknown basis mode {mode!r}")
    orth = orth or "precond_chol"
    if orth == "chol":
        R = qless_chol_qr(op_mu, omega, fallback=fallback)
        return DeflationBasis(omega, R, "basisless", truncated=truncated, orth="chol", transform=transform)
    if orth == "precond_chol":
        R, r_sk, r_chol = _precond_parts(op_mu, omega, theta, seed, fallback)
        return DeflationBasis(omega, R, "basisless", r_sk=r_sk, factors=(r_chol, r_sk),
                              truncated=truncated, orth="precond_chol", transform=transform)
    raise ConfigurationError(f"unknown orthogonalization {orth!r}")


def basis_from_pack(op_mu, omega, pack, fallback=False):
    """Basis-less basis for ``op_mu`` using recycled Gram blocks."""
    factors = recycle_factors(pack, op_mu.mu, fallback)
    R = factors[0]
    for F in factors[1:]:
        R = R @ F
    return DeflationBasis(np.asarray(omega, dtype=np.float64), R, "basisless", factors=factors,
                          recycle=pack, orth="recycled")


def orthogonality_measure(q, l=None, probes=None, seed=0, qt=None):
    """``||I - Q^T Q||_2`` for an explicit or implicit ``Q``.

    ``q`` is either an ``n x l`` array or a callable mapping an ``l x k``
    block ``V`` to ``Q V``.  By default the ``l x l`` Gram matrix is formed
    exactly (``l`` applications).  With ``probes`` set, the norm is
    estimated by that many power iterations on ``(I - Q^T Q)^2``; an
    implicit ``Q`` then also needs ``qt`` mapping an ``n x k`` block to
    ``Q^T`` times it.
    """
    if isinstance(q, np.ndarray):
        Q = q
        l = Q.shape[1]
        apply = lambda V: Q @ V  # noqa: E731
        qt = lambda W: Q.T @ W  # noqa: E731
    else:
        if l is None:
            raise ConfigurationError("l is required for an implicit Q")
        apply = q
    if l == 0:
        return 0.0
    if probes is None:
        Qm = apply(np.eye(l))
        M = np.eye(l) - Qm.T @ Qm
        return float(np.max(np.abs(np.linalg.eigvalsh(_sym(M)))))
    if qt is None:
        raise ConfigurationError("probe estimates of an implicit Q need its transpose action")
    from .operators import power_iteration

    def defect(v):
        return v - qt(apply(v[:, None]))[:, 0]

    lam, _, _ = power_iteration(lambda v: defect(defect(v)), l, seed, max_iters=int(probes), rel_tol=0.0)
    return float(np.sqrt(max(lam, 0.0)))
