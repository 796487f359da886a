"""Projection onto ``range(A_mu Omega)`` and the companion map ``A_mu^{-1} Pi``.

Both maps are expressed through the pair ``(Omega, R)``:

    Pi u            = Q Q^T u
    A_mu^{-1} Pi u  = Omega R^{-1} Q^T u

where ``Q = A_mu Omega R^{-1}`` is either stored (explicit mode) or applied
on the fly with one product by ``A_mu`` (basis-less mode).  No inverse of
``A_mu`` is ever formed.  Loss of orthogonality in ``Q`` can be corrected
by refining the coefficient vector ``Q^T u`` (Neumann or iterative forms)
or by computing it as a least-squares solution with a sketched normal
matrix (Newton sketch).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, DimensionError
from .orthogonalization import orthogonality_measure
from .sketching import SketchOp, draw_sketch, sketch_apply

REFINEMENTS = ("none", "neumann", "iterative")
LSQ_MODES = ("second_level_preconditioned", "newton_sketch")


@dataclass
class LsqConfig:
    """Settings for computing ``(A_mu Omega)^+ u`` by iterative refinement.

    ``d_matrix`` is the sketched normal matrix
    ``(Theta A_mu Omega)^T (Theta A_mu Omega)``; ``inner`` selects a
    Cholesky solve (``"cholesky"``) or an inner conjugate-gradient solve
    (``"cg"``) with ``D``.
    """

    mode: str
    d_matrix: np.ndarray
    max_refine_iters: int = 60
    tol: float = 1e-12
    inner: str = "cholesky"
    inner_tol: float = 1e-12

    def __post_init__(self):
        if self.mode not in LSQ_MODES:
            raise ConfigurationError(f"unknown least-squares mode {self.mode!r}")
        self.d_matrix = 0.5 * (self.d_matrix + self.d_matrix.T)
        self._factor = sla.cho_factor(self.d_matrix) if self.inner == "cholesky" else None

    def solve_d(self, g):
        if self._factor is not None:
            return sla.cho_solve(self._factor, g)
        return _small_cg(self.d_matrix, g, self.inner_tol)


def _small_cg(D, g, tol):
    x = np.zeros_like(g)
    r = g.copy()
    p = r.copy()
    rr = r @ r
    stop = (tol * np.linalg.norm(g)) ** 2
    for _ in range(10 * len(g) + 10):
        if rr <= stop:
            break
        Dp = D @ p
        a = rr / (p @ Dp)
        x += a * p
        r -= a * Dp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


@dataclass
class LsqResult:
    v: np.ndarray
    iters: int
    converged: bool
    achieved: float


def make_lsq_config(basis, op_mu, theta=None, mode="newton_sketch", seed=0, **kwargs):
    """Build an :class:`LsqConfig` for ``basis``.

    ``newton_sketch`` sketches ``A_mu Omega`` with ``theta``.  The
    refinement contracts only if ``theta`` embeds ``range(A_mu Omega)``
    with distortion below 1/2, so the default is a Gaussian sketch with
    ``20 l`` rows (the exact Gram matrix when ``20 l >= n``).  In
    ``second_level_preconditioned`` mode the factor ``R_sk`` already held
    by a preconditioned Q-less basis is reused, ``D = R_sk^T R_sk``; the
    same distortion condition then applies to the sketch that built it.
    """
    if mode == "second_level_preconditioned" and basis.r_sk is not None:
        D = basis.r_sk.T @ basis.r_sk
    else:
        n, l = basis.omega.shape
        if theta is None and 20 * l >= n:
            theta = np.eye(n)
        elif theta is None:
            theta = draw_sketch("gaussian", 20 * l, n, seed)
        Y = op_mu.matmat(basis.omega)
        S = sketch_apply(theta, Y, "left_X") if isinstance(theta, SketchOp) else np.asarray(theta) @ Y
        D = S.T @ S
    return LsqConfig(mode, D, **kwargs)


def newton_sketch_lstsq(basis, lsq, u, op_mu):
    """Approximate ``(A_mu Omega)^+ u`` by sketched iterative refinement.

    Iterates ``v <- v + D^{-1} (A_mu Omega)^T (u - A_mu Omega v)`` from
    ``v = 0`` until the normal-equation residual drops below ``lsq.tol``
    relative to ``||(A_mu Omega)^T u||`` or ``lsq.max_refine_iters`` updates
    were made.  Each update costs two products with ``A_mu``.
    """
    u = np.asarray(u, dtype=np.float64)
    omega = basis.omega
    l = omega.shape[1]
    g = omega.T @ op_mu.rmatvec(u)
    g0 = np.linalg.norm(g)
    v = np.zeros(l)
    if g0 == 0.0:
        return LsqResult(v, 0, True, 0.0)
    achieved = 1.0
    for it in range(1, lsq.max_refine_iters + 1):
        v = v + lsq.solve_d(g)
        r = u - op_mu.matvec(omega @ v)
        g = omega.T @ op_mu.rmatvec(r)
        achieved = np.linalg.norm(g) / g0
        if achieved <= lsq.tol:
            return LsqResult(v, it, True, float(achieved))
    return LsqResult(v, lsq.max_refine_iters, False, float(achieved))


def _parse_refinement(refinement, steps):
    if isinstance(refinement, (tuple, list)):
        refinement, steps = refinement
    if refinement is None:
        refinement = "none"
    if refinement not in REFINEMENTS:
        raise ConfigurationError(f"unknown refinement {refinement!r}")
    steps = int(steps)
    if refinement == "iterative" and steps < 1:
        raise ConfigurationError("iterative refinement needs at least one step")
    return refinement, steps


def default_refinement(basis):
    """Refinement used when none is requested.

    Householder bases need none.  Basis-less bases get the Neumann form;
    for the unpreconditioned Cholesky route with ``cond(R) > 1e7`` two
    iterative steps are used instead.
    """
    if basis.mode == "explicit":
        return "none"
    if basis.orth == "chol" and basis.cond_r() > 1e7:
        return ("iterative", 2)
    return "neumann"


class ProjectionEngine:
    """Applies ``Pi``, ``I - Pi`` and ``A_mu^{-1} Pi`` for a deflation basis.

    Parameters
    ----------
    basis : DeflationBasis
    op_mu : ShiftedOperator
        The operator ``A_mu`` the basis was built for.
    refinement : str or tuple
        ``"none"``, ``"neumann"`` or ``("iterative", k)``; ``"auto"`` picks
        :func:`default_refinement`.
    reorthogonalize : bool
        Apply the complement twice, ``(I - Pi)(I - Pi) u``.
    reorth_stride : int
        Solvers reorthogonalize only every ``reorth_stride``-th application.
    lsq : LsqConfig, optional
        Compute coefficients as least-squares solutions instead of
        ``Q^T u``.
    """

    def __init__(self, basis, op_mu, refinement="auto", steps=2, reorthogonalize=False,
                 reorth_stride=1, lsq=None):
        if op_mu.n != basis.n:
            raise DimensionError("basis and operator dimensions differ")
        if refinement == "auto":
            refinement = default_refinement(basis)
        self.refinement, self.steps = _parse_refinement(refinement, steps)
        self.basis = basis
        self.op_mu = op_mu
        self.reorthogonalize = bool(reorthogonalize)
        self.reorth_stride = max(1, int(reorth_stride))
        self.lsq = lsq
        self._qtq = None
        self._calls = 0

    @property
    def n(self):
        return self.basis.n

    @property
    def l(self):
        return self.basis.l

    @property
    def mode(self):
        return self.basis.mode

    # ---- the orthonormal factor, explicit or implicit
    def q(self, V):
        """``Q V`` for a coefficient vector or block."""
        V = np.asarray(V, dtype=np.float64)
        if self.basis.q_factor is not None:
            return self.basis.q_factor @ V
        W = self.basis.omega @ self.basis.r_solve(V)
        return self.op_mu.matvec(W) if W.ndim == 1 else self.op_mu.matmat(W)

    def qt(self, U):
        """``Q^T U`` for a vector or block."""
        U = np.asarray(U, dtype=np.float64)
        if self.basis.q_factor is not None:
            return self.basis.q_factor.T @ U
        AU = self.op_mu.rmatvec(U) if U.ndim == 1 else self.op_mu.rmatmat(U)
        return self.basis.rt_solve(self.basis.omega.T @ AU)

    def qtq(self):
        """Realized ``Q^T Q`` (``l x l``), computed once."""
        if self._qtq is None:
            if self.basis.q_factor is not None:
                Q = self.basis.q_factor
                M = Q.T @ Q
            else:
                M = self.qt(self.q(np.eye(self.l)))
            self._qtq = 0.5 * (M + M.T)
        return self._qtq

    def orthogonality(self):
        """``||I - Q^T Q||`` of the realized factor."""
        return orthogonality_measure(self.q, self.l)

    # ---- coefficients of Pi u in the basis Q
    def coeffs(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.n:
            raise DimensionError(f"expected length {self.n}, got {u.shape}")
        if self.lsq is not None:
            raise ConfigurationError("least-squares engines have no Q coefficients")
        v = self.qt(u)
        if self.refinement == "neumann":
            v = 2.0 * v - self.qtq() @ v
        elif self.refinement == "iterative":
            for _ in range(self.steps - 1):
                v = v + self.qt(u - self.q(v))
        return v

    def _lsq_solution(self, u):
        res = newton_sketch_lstsq(self.basis, self.lsq, u, self.op_mu)
        return res.v

    def project(self, u):
        """``Pi u``."""
        if self.lsq is not None:
            return self.op_mu.matvec(self.basis.omega @ self._lsq_solution(u))
        return self.q(self.coeffs(u))

    def complement(self, u, reorth=None):
        """``(I - Pi) u``; applied twice when reorthogonalizing."""
        u = np.asarray(u, dtype=np.float64)
        if reorth is None:
            reorth = self.reorthogonalize
        c = u - self.project(u)
        if reorth:
            c = c - self.project(c)
        return c

    def ainv_project(self, u):
        """``A_mu^{-1} Pi u = Omega R^{-1} Q^T u``."""
        if self.lsq is not None:
            return self.basis.omega @ self._lsq_solution(u)
        return self.basis.omega @ self.basis.r_solve(self.coeffs(u))

    def ainv_project_t(self, w):
        """``(A_mu^{-1} Pi)^T w = Q R^{-T} Omega^T w``.

        With any refinement the coefficients get the Neumann correction
        ``(2 I - Q^T Q)``, the transpose of the refined ``coeffs``.
        """
        w = np.asarray(w, dtype=np.float64)
        v = self.basis.rt_solve(self.basis.omega.T @ w)
        if self.refinement != "none" and self.basis.q_factor is None:
            v = 2.0 * v - self.qtq() @ v
        return self.q(v)

    def tick(self):
        """Whether the next solver-side complement should reorthogonalize."""
        self._calls += 1
        return self.reorthogonalize and (self._calls % self.reorth_stride == 0)

    def describe(self):
        return {
            "mode": self.basis.mode,
            "orth": self.basis.orth,
            "l": self.l,
            "refinement": self.refinement if self.refinement != "iterative" else f"iterative({self.steps})",
            "reorthogonalize": self.reorthogonalize,
            "reorth_stride": self.reorth_stride,
            "lsq": None if self.lsq is None else self.lsq.mode,
            "truncated": bool(self.basis.truncated),
        }


def project(engine, u):
    return engine.project(u)


def ainv_project(engine, u):
    return engine.ainv_project(u)
