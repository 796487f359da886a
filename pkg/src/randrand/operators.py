"""Matrix-free operators, shifted application and power-iteration estimates.

An operator is anything that maps a length-``n`` vector to a length-``n``
vector.  :class:`LinearOperatorSpec` wraps such a map together with its
structural flags and an instrumented matvec counter, and
:class:`ShiftedOperator` realizes ``A + mu I`` on top of it.
"""

import threading

import numpy as np

from ._random import stream
from .errors import ConfigurationError, DimensionError

DEFINITENESS = ("spd", "symmetric-indefinite", "general")
ALLOWED_POWERS = (0, 1, 2)


def _as_vector(v, n):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionError(f"expected a vector of length {n}, got shape {v.shape}")
    return v


def _as_block(V, n):
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.ndim != 2 or V.shape[0] != n:
        raise DimensionError(f"expected a block with {n} rows, got shape {V.shape}")
    return V


class LinearOperatorSpec:
    """A dimension-``n`` real operator known only through its action.

    Parameters
    ----------
    n : int
        Dimension.
    apply : callable
        Maps a float64 vector of length ``n`` to a vector of length ``n``.
    symmetric : bool
        Whether the operator is symmetric.
    definiteness : str
        One of ``"spd"``, ``"symmetric-indefinite"`` or ``"general"``.
    apply_t : callable, optional
        Transposed action; required for non-symmetric operators when the
        transpose is needed.
    apply_block : callable, optional
        Fast path mapping an ``n x k`` block to ``A @ block``.  Each column
        still counts as one matvec.
    matvec_cost_hint : float, optional
        Relative cost of a single matvec, used only for reporting.

    Every call through :meth:`matvec` or :meth:`matmat` increments the
    ``matvecs`` counter (one per column), so solver reports can be checked
    against the instrumented count.
    """

    def __init__(self, n, apply, symmetric=True, definiteness=None, apply_t=None,
                 apply_block=None, apply_t_block=None, matvec_cost_hint=None, name=None):
        n = int(n)
        if n < 1:
            raise ConfigurationError("operator dimension must be positive")
        if definiteness is None:
            definiteness = "spd" if symmetric else "general"
        if definiteness not in DEFINITENESS:
            raise ConfigurationError(f"unknown definiteness {definiteness!r}")
        if definiteness != "general" and not symmetric:
            raise ConfigurationError(f"definiteness {definiteness!r} requires symmetric=True")
        self.n = n
        self.symmetric = bool(symmetric)
        self.definiteness = definiteness
        self.matvec_cost_hint = matvec_cost_hint
        self.name = name
        self._apply = apply
        self._apply_t = apply_t
        self._apply_block = apply_block
        self._apply_t_block = apply_t_block
        self._count = 0
        self._lock = threading.Lock()

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def matvecs(self):
        """Number of single-vector applications performed so far."""
        return self._count

    def reset_count(self):
        with self._lock:
            self._count = 0

    def _bump(self, k):
        with self._lock:
            self._count += k

    def matvec(self, v):
        v = _as_vector(v, self.n)
        self._bump(1)
        return np.asarray(self._apply(v), dtype=np.float64).reshape(self.n)

    def matmat(self, V):
        V = _as_block(V, self.n)
        k = V.shape[1]
        self._bump(k)
        if self._apply_block is not None:
            return np.asarray(self._apply_block(V), dtype=np.float64).reshape(self.n, k)
        out = np.empty((self.n, k))
        for j in range(k):
            out[:, j] = self._apply(np.ascontiguousarray(V[:, j]))
        return out

    def rmatvec(self, v):
        if self.symmetric:
            return self.matvec(v)
        if self._apply_t is None:
            raise ConfigurationError("transpose action not available for this operator")
        v = _as_vector(v, self.n)
        self._bump(1)
        return np.asarray(self._apply_t(v), dtype=np.float64).reshape(self.n)

    def rmatmat(self, V):
        if self.symmetric:
            return self.matmat(V)
        if self._apply_t is None:
            raise ConfigurationError("transpose action not available for this operator")
        V = _as_block(V, self.n)
        k = V.shape[1]
        self._bump(k)
        if self._apply_t_block is not None:
            return np.asarray(self._apply_t_block(V), dtype=np.float64).reshape(self.n, k)
        out = np.empty((self.n, k))
        for j in range(k):
            out[:, j] = self._apply_t(np.ascontiguousarray(V[:, j]))
        return out

    def apply(self, v):
        return self.matvec(v)

    def __repr__(self):
        label = self.name or "LinearOperatorSpec"
        return f"<{label} n={self.n} {self.definiteness}>"


def dense_operator(A, symmetric=None, definiteness=None, name="dense"):
    """Wrap a dense square array as a :class:`LinearOperatorSpec`.

    Symmetry is detected when not given.  Definiteness defaults to
    ``"spd"`` for symmetric input with a positive smallest eigenvalue and
    ``"symmetric-indefinite"`` otherwise.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    if symmetric is None:
        symmetric = bool(np.allclose(A, A.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(A).max(initial=0.0))))
    if definiteness is None:
        if not symmetric:
            definiteness = "general"
        else:
            lam_min = np.linalg.eigvalsh((A + A.T) / 2)[0] if A.shape[0] else 0.0
            definiteness = "spd" if lam_min >= 0 else "symmetric-indefinite"
    AT = A.T
    op = LinearOperatorSpec(
        A.shape[0],
        lambda v: A @ v,
        symmetric=symmetric,
        definiteness=definiteness,
        apply_t=lambda v: AT @ v,
        apply_block=lambda V: A @ V,
        apply_t_block=lambda V: AT @ V,
        name=name,
    )
    op.dense = A
    return op


def diagonal_operator(d, name="diagonal"):
    """Symmetric operator ``diag(d)``."""
    d = np.asarray(d, dtype=np.float64).ravel()
    definiteness = "spd" if np.all(d >= 0) else "symmetric-indefinite"
    op = LinearOperatorSpec(
        d.size,
        lambda v: d * v,
        symmetric=True,
        definiteness=definiteness,
        apply_block=lambda V: d[:, None] * V,
        name=name,
    )
    op.dense = np.diag(d)
    return op


def zero_operator(n):
    return diagonal_operator(np.zeros(int(n)), name="zero")


def gram_product_operator(Z, d=None, name="gram_product"):
    """Matrix-free ``Z^T diag(d) Z`` for a tall ``m x n`` array ``Z``.

    This is the shape of the normal-equations systems met inside
    interior-point methods; add the shift with :class:`ShiftedOperator`.
    ``d`` defaults to all ones and must be nonnegative.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise DimensionError(f"expected a 2-d array, got shape {Z.shape}")
    d = np.ones(Z.shape[0]) if d is None else np.asarray(d, dtype=np.float64).ravel()
    if d.size != Z.shape[0]:
        raise DimensionError(f"weights have length {d.size}, expected {Z.shape[0]}")
    if np.any(d < 0):
        raise ConfigurationError("weights must be nonnegative")
    return LinearOperatorSpec(
        Z.shape[1],
        lambda v: Z.T @ (d * (Z @ v)),
        symmetric=True,
        definiteness="spd",
        apply_block=lambda V: Z.T @ (d[:, None] * (Z @ V)),
        name=name,
    )


class ShiftedOperator:
    """The shifted operator ``A_mu = A + mu I``.

    Matvec counts are recorded on the base operator, so one shifted
    application counts as one application of ``A``.
    """

    def __init__(self, base, mu=0.0):
        self.base = base
        self.mu = float(mu)

    @property
    def n(self):
        return self.base.n

    @property
    def shape(self):
        return self.base.shape

    @property
    def symmetric(self):
        return self.base.symmetric

    @property
    def matvecs(self):
        return self.base.matvecs

    def matvec(self, v):
        v = _as_vector(v, self.n)
        return self.base.matvec(v) + self.mu * v

    def matmat(self, V):
        V = _as_block(V, self.n)
        return self.base.matmat(V) + self.mu * V

    def rmatvec(self, v):
        v = _as_vector(v, self.n)
        return self.base.rmatvec(v) + self.mu * v

    def rmatmat(self, V):
        V = _as_block(V, self.n)
        return self.base.rmatmat(V) + self.mu * V

    def apply(self, v):
        return self.matvec(v)

    def with_shift(self, mu):
        return ShiftedOperator(self.base, mu)

    def pre_shift(self, alpha):
        """Move ``alpha`` from the shift into the operator.

        Returns an operator for ``A + alpha I`` with shift ``mu - alpha``;
        the represented matrix ``A_mu`` is unchanged.
        """
        alpha = float(alpha)
        base = self.base

        def block(V):
            if base._apply_block is not None:
                return base._apply_block(V) + alpha * V
            return np.column_stack([base._apply(V[:, j]) for j in range(V.shape[1])]) + alpha * V

        apply_t = None
        if base._apply_t is not None:
            apply_t = lambda v: base._apply_t(v) + alpha * v  # noqa: E731
        inner = LinearOperatorSpec(
            base.n,
            lambda v: base._apply(v) + alpha * v,
            symmetric=base.symmetric,
            definiteness=base.definiteness,
            apply_t=apply_t,
            apply_block=block,
            name=f"pre-shifted({base.name})",
        )
        return ShiftedOperator(inner, self.mu - alpha)

    def dense(self):
        """Materialize ``A_mu`` column by column."""
        return self.matmat(np.eye(self.n))

    def __repr__(self):
        return f"<ShiftedOperator mu={self.mu:g} base={self.base!r}>"


def apply_shifted(op, v):
    """Return ``op.base(v) + op.mu * v``."""
    return op.matvec(v)


def as_apply(op):
    """Return ``(apply, n)`` for an operator object or a ``(callable, n)`` pair."""
    if isinstance(op, tuple):
        fn, n = op
        return fn, int(n)
    if hasattr(op, "matvec"):
        return op.matvec, op.n
    raise ConfigurationError("expected an operator or a (callable, n) pair")


def power_iteration(apply, n, seed=0, max_iters=30, rel_tol=1e-2):
    """Rayleigh-quotient power iteration for a symmetric psd map.

    Returns ``(lam, x, iters)`` where ``lam`` is the last Rayleigh quotient
    and ``x`` the normalized iterate it was computed from.
    """
    if max_iters < 1:
        raise ConfigurationError("max_iters must be at least 1")
    x = stream(seed, 0x504F574552).standard_normal(n)
    x /= np.linalg.norm(x)
    lam_prev = None
    lam = 0.0
    for it in range(1, max_iters + 1):
        y = np.asarray(apply(x), dtype=np.float64)
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0:
            return 0.0, x, it
        lam = float((x @ y) / (x @ x))
        # exact eigenvector: nothing left to improve
        if np.linalg.norm(y - lam * x) <= 1e-14 * ynorm:
            return lam, x, it
        if lam_prev is not None and abs(lam - lam_prev) <= rel_tol * abs(lam):
            return lam, x, it
        lam_prev = lam
        x = y / ynorm
    return lam, x, max_iters


def estimate_spectral_norm(op, seed=0, max_iters=30, rel_tol=1e-2):
    """Estimate the largest eigenvalue of a symmetric psd operator.

    The start vector is drawn from the package's keyed generator, so the
    result is deterministic given ``seed``.  Iteration stops when two
    successive Rayleigh quotients agree to ``rel_tol`` or after
    ``max_iters`` applications.  Since the value is a Rayleigh quotient it
    never exceeds the true norm.

    ``op`` may be an operator object or a ``(callable, n)`` pair.
    """
    apply, n = as_apply(op)
    lam, _, _ = power_iteration(apply, n, seed, max_iters, rel_tol)
    return max(lam, 0.0)


def estimate_operator_norm(apply, apply_t, n, seed=0, max_iters=30, rel_tol=1e-2):
    """Estimate ``||M||`` for a possibly non-symmetric map via ``M^T M``."""
    lam, _, _ = power_iteration(lambda v: apply_t(apply(v)), n, seed, max_iters, rel_tol)
    return float(np.sqrt(max(lam, 0.0)))


def subspace_iterate(op, X_T, q):
    """Form the test matrix ``A^q X^T`` by repeated application.

    Symmetric operators use ``A^q``; general operators use ``(A^T A)^q``.
    No intermediate orthogonalization is performed.
    """
    if q not in ALLOWED_POWERS:
        raise ConfigurationError(f"power q must be one of {ALLOWED_POWERS}, got {q!r}")
    Omega = _as_block(X_T, op.n).copy()
    for _ in range(q):
        Omega = op.matmat(Omega)
        if not op.symmetric:
            Omega = op.rmatmat(Omega)
    return Omega
