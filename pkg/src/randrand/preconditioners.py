"""Range-deflation preconditioners and the Nystrom baseline.

Given a projection engine for ``Pi`` (the orthogonal projector onto
``range(A_mu Omega)``) three preconditioners are available:

* reducing form (``r_right``, ``r_left``, ``r_split``): the preconditioned
  operator is ``E + tau Pi`` with ``E = (I - Pi) A_mu (I - Pi)``;
* correcting form (``c``): ``P = (I - Pi) + tau Pi A_mu^{-1} Pi``, spd for
  spd ``A_mu``;
* generalized form (``g``): ``P = (I - Pi) + tau (Pi A_mu^{-2} Pi)^{1/2}``,
  spd for any invertible ``A_mu`` and used with MINRES.

Both ``c`` and ``g`` are applied as ``u + Q (tau G Q^T u - Q^T u)`` with a
small ``l x l`` core matrix ``G``.  The scalar ``tau`` is chosen by one of
the policies in :func:`select_tau` from norm estimates obtained by power
iteration.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError
from .operators import estimate_operator_norm, power_iteration
from .orthogonalization import cholesky_with_fallback

KINDS = ("r_right", "r_left", "r_split", "c", "g", "nystrom")
POLICIES = {
    "r_enorm": ("r_right", "r_left", "r_split"),
    "c_fixed_rho": ("c",),
    "c_optimal_rho": ("c",),
    "c_bound_min": ("c",),
    "c_nys_inv_norm": ("c",),
    "c_nys_smallest_eig": ("c",),
    "g_fixed_rho": ("g",),
    "g_optimal_rho": ("g",),
}
DEFAULT_POLICY = {
    "r_right": ("r_enorm", 1.0),
    "r_left": ("r_enorm", 1.0),
    "r_split": ("r_enorm", 1.0),
    "c": ("c_bound_min", None),
    "g": ("g_fixed_rho", 0.5),
}


@dataclass
class NormEstimates:
    """Norms feeding the choice of ``tau`` and the condition-number bounds.

    ``e_norm``       ``||(I - Pi) A_mu (I - Pi)||``
    ``f_est``        estimate of ``1 / lambda_min(A_mu)`` (or ``1/sigma_min``)
    ``pi_a_pia``     ``lambda_max(Pi A_mu Pi A_mu^{-1} Pi)``
    ``ia_pi_a``      ``||A_mu^{-1} Pi A_mu||``
    ``proj_err``     ``||(I - Pi) A_mu||``
    ``c1``, ``c2``   cross-term norms of the refined bound (or upper bounds)
    ``ainv_pi``      ``||A_mu^{-1} Pi||``
    ``pi_ainv_pi``   ``||Pi A_mu^{-1} Pi||``
    ``pi_ainv_pi_min`` smallest nonzero eigenvalue of ``Pi A_mu^{-1} Pi``
    ``lambda_min``   smallest eigenvalue (or singular value) of ``A_mu``
    ``f_norm``       ``||(I - Pi) A_mu^{-1} (I - Pi)||``
    ``compl_ainv``   ``||(I - Pi) A_mu^{-1}||``
    """

    e_norm: float = None
    f_est: float = None
    pi_a_pia: float = None
    ia_pi_a: float = None
    proj_err: float = None
    c1: float = None
    c2: float = None
    ainv_pi: float = None
    pi_ainv_pi: float = None
    pi_ainv_pi_min: float = None
    lambda_min: float = None
    f_norm: float = None
    compl_ainv: float = None
    compl_ainv_pi: float = None
    compl_a_pi: float = None

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigurationError(f"estimate {name!r} is required but missing")
        return tuple(getattr(self, name) for name in names)

    def to_dict(self):
        return {k: (None if v is None else float(v)) for k, v in asdict(self).items()}

    def merged(self, other):
        """Copy with every field set in ``other`` overriding this one."""
        d = asdict(self)
        d.update({k: v for k, v in asdict(other).items() if v is not None})
        return NormEstimates(**d)


@dataclass(frozen=True)
class TauPolicy:
    """A rule for ``tau``; ``rho`` is used by the fixed-rho rules."""

    name: str
    rho: float = None

    @classmethod
    def parse(cls, spec, kind=None):
        if spec is None:
            if kind not in DEFAULT_POLICY:
                raise ConfigurationError(f"kind {kind!r} has no tau policy")
            return cls(*DEFAULT_POLICY[kind])
        if isinstance(spec, TauPolicy):
            return spec
        if isinstance(spec, dict):
            return cls(spec["name"], spec.get("rho"))
        if isinstance(spec, (tuple, list)):
            return cls(spec[0], None if len(spec) < 2 else spec[1])
        text = str(spec).strip()
        if text.endswith(")") and "(" in text:
            name, arg = text[:-1].split("(", 1)
            return cls(name.strip(), float(arg))
        return cls(text)

    def __str__(self):
        return self.name if self.rho is None else f"{self.name}({self.rho:g})"


def _refined_bound(tau, e_norm, pi_a_pia, f_est, c1, c2):
    rho = tau * pi_a_pia / e_norm
    low = min(max(f_est, 1.0 / tau) + c1 / math.sqrt(tau), f_est + 1.0 / tau)
    high = min(e_norm * max(1.0, rho) + math.sqrt(tau) * c2, e_norm * (1.0 + rho))
    return low * high


def _cross_terms(est, tau, surrogate=True):
    if surrogate and est.c1 is not None and est.c2 is not None:
        return est.c1, est.c2
    rho = tau * est.pi_a_pia / est.e_norm
    c1 = max(math.sqrt(est.f_est), 1.0 / math.sqrt(tau))
    c2 = math.sqrt(est.e_norm) * max(1.0, math.sqrt(rho))
    return c1, c2


def minimize_refined_bound(est, surrogate=True):
    """``tau`` minimizing the refined correcting-form bound.

    The bound is piecewise smooth in ``log tau``; a coarse log grid over
    six decades around ``||E|| / lambda_max`` is followed by a bounded
    scalar refinement around the best grid point.
    """
    e_norm, pi_a_pia, f_est = est.require("e_norm", "pi_a_pia", "f_est")
    if e_norm <= 0 or pi_a_pia <= 0:
        raise ConfigurationError("refined bound needs positive e_norm and pi_a_pia")
    ref = e_norm / pi_a_pia

    def score(logt):
        t = math.exp(logt)
        c1, c2 = _cross_terms(est, t, surrogate)
        return _refined_bound(t, e_norm, pi_a_pia, f_est, c1, c2)

    grid = np.linspace(math.log(ref) - 3 * math.log(10), math.log(ref) + 3 * math.log(10), 241)
    vals = [score(g) for g in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best_t, best_v = grid[i], vals[i]
    if hi > lo:
        res = minimize_scalar(score, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
        if res.fun < best_v:
            best_t, best_v = res.x, res.fun
    return math.exp(best_t)


def select_tau(kind, policy, est):
    """Return ``(tau, rho)`` for the given policy and estimates.

    Policies: ``r_enorm(rho)``; ``c_fixed_rho(rho)``, ``c_optimal_rho``,
    ``c_bound_min``, ``c_nys_inv_norm``, ``c_nys_smallest_eig``;
    ``g_fixed_rho(rho)``, ``g_optimal_rho``.  For rules that fix ``tau``
    directly, ``rho`` is the value implied by the fixed-rho formula.
    """
    policy = TauPolicy.parse(policy, kind)
    if policy.name not in POLICIES:
        raise ConfigurationError(f"unknown tau policy {policy.name!r}")
    if kind not in POLICIES[policy.name]:
        raise ConfigurationError(f"policy {policy.name!r} does not apply to kind {kind!r}")
    name = policy.name

    if name == "r_enorm":
        rho = 1.0 if policy.rho is None else float(policy.rho)
        (e_norm,) = est.require("e_norm")
        return rho * e_norm, rho

    if name.startswith("c_"):
        e_norm, pi_a_pia = est.require("e_norm", "pi_a_pia")
        if name == "c_fixed_rho":
            rho = 1.0 if policy.rho is None else float(policy.rho)
        elif name == "c_optimal_rho":
            (f_est,) = est.require("f_est")
            rho = (f_est * e_norm / pi_a_pia) ** -0.5
        else:
            if name == "c_bound_min":
                tau = minimize_refined_bound(est)
            elif name == "c_nys_inv_norm":
                tau = 1.0 / est.require("ainv_pi")[0]
            else:
                tau = 1.0 / est.require("pi_ainv_pi")[0]
            return tau, tau * pi_a_pia / e_norm
        return rho * e_norm / pi_a_pia, rho

    proj_err, ia_pi_a = est.require("proj_err", "ia_pi_a")
    if name == "g_fixed_rho":
        rho = 0.5 if policy.rho is None else float(policy.rho)
    else:
        (f_est,) = est.require("f_est")
        rho = ia_pi_a / (f_est * proj_err)
    return math.sqrt(rho) * proj_err / ia_pi_a, rho


BOUND_FORMS = ("primary", "coarse", "refined")


def cond_bound(kind, est, tau, rho, form="primary"):
    """Evaluate a condition-number bound for a built preconditioner.

    reducing kinds: ``rho ||E|| / lambda_min``.

    ``c``, ``primary``: ``(1+rho) ||E||/lambda_min + (1+1/rho) lambda_max(Pi A Pi A^{-1} Pi)``;
    ``coarse`` replaces the last factor by ``(1 + sqrt(||E||/lambda_min))^2``;
    ``refined`` is the min-max product bound using ``f_est``, ``c1``, ``c2``.

    ``g``: the square root of
    ``(1+rho) r^2 + (1+1/rho) ||A^{-1} Pi A||^2`` (``primary``) or of
    ``(1+rho) r^2 + (1+1/rho) (1+r)^2`` (``coarse``), ``r = ||(I-Pi)A|| / sigma_min``.

    ``lambda_min`` falls back to ``1 / f_est`` when not set.
    """
    if form not in BOUND_FORMS:
        raise ConfigurationError(f"unknown bound form {form!r}")
    lam = est.lambda_min if est.lambda_min is not None else (
        None if est.f_est is None else 1.0 / est.f_est)
    if kind in ("r_right", "r_left", "r_split"):
        (e_norm,) = est.require("e_norm")
        if lam is None:
            raise ConfigurationError("estimate 'lambda_min' is required but missing")
        return rho * e_norm / lam
    if kind == "c":
        (e_norm,) = est.require("e_norm")
        if form == "refined":
            pi_a_pia, f_est = est.require("pi_a_pia", "f_est")
            c1, c2 = _cross_terms(est, tau)
            return _refined_bound(tau, e_norm, pi_a_pia, f_est, c1, c2)
        if lam is None:
            raise ConfigurationError("estimate 'lambda_min' is required but missing")
        ratio = e_norm / lam
        if form == "primary":
            (pi_a_pia,) = est.require("pi_a_pia")
            return (1 + rho) * ratio + (1 + 1 / rho) * pi_a_pia
        return (1 + rho) * ratio + (1 + 1 / rho) * (1 + math.sqrt(ratio)) ** 2
    if kind == "g":
        (proj_err,) = est.require("proj_err")
        if lam is None:
            raise ConfigurationError("estimate 'lambda_min' is required but missing")
        r = proj_err / lam
        if form == "primary":
            (ia_pi_a,) = est.require("ia_pi_a")
            sq = (1 + rho) * r * r + (1 + 1 / rho) * ia_pi_a ** 2
        else:
            sq = (1 + rho) * r * r + (1 + 1 / rho) * (1 + r) ** 2
        return math.sqrt(sq)
    raise ConfigurationError(f"no bound for kind {kind!r}")


# ---------------------------------------------------------------------------
# core matrices

def omega_a_omega(engine):
    """``Omega^T A_mu Omega``, from the basis when available."""
    basis = engine.basis
    cached = getattr(basis, "omega_a_omega", None)
    if cached is not None:
        return cached
    if basis.q_factor is not None:
        M = basis.omega.T @ (basis.q_factor @ basis.r)
    elif basis.recycle is not None:
        M = basis.recycle.g_a + engine.op_mu.mu * basis.recycle.g_i
    else:
        M = basis.omega.T @ engine.op_mu.matmat(basis.omega)
    M = 0.5 * (M + M.T)
    basis.omega_a_omega = M
    return M


def correcting_core(engine):
    """``G = R^{-T} (Omega^T A_mu Omega) R^{-1}`` assembled as ``K^T K``.

    ``K = R_half R^{-1}`` with ``R_half^T R_half = Omega^T A_mu Omega``, so
    the computed core stays numerically positive semidefinite.  Returns
    ``(G, K)``.
    """
    r_half = cholesky_with_fallback(omega_a_omega(engine))[0]
    K = engine.basis.rt_solve(r_half.T).T
    G = K.T @ K
    return 0.5 * (G + G.T), K


def generalized_core(engine):
    """``G = (R^{-T} Omega^T Omega R^{-1})^{1/2}``.

    With ``Omega = Q_w R_w`` and ``K = R_w R^{-1} = U S V^T`` the square
    root is ``V S V^T``; singular values are non-negative, so no clipping
    of negative eigenvalues can be needed.  Returns ``(G, K)``.
    """
    _, r_w = np.linalg.qr(engine.basis.omega, mode="reduced")
    K = engine.basis.rt_solve(r_w.T).T
    _, s, Vt = np.linalg.svd(K, full_matrices=False)
    G = (Vt.T * s) @ Vt
    return 0.5 * (G + G.T), K


# ---------------------------------------------------------------------------
# norm estimation

def _complement_norm_a(engine, op_mu, seed, max_iters, rel_tol):
    # ||(I - Pi) A_mu||
    c = engine.complement
    return estimate_operator_norm(lambda u: c(op_mu.matvec(u)), lambda w: op_mu.rmatvec(c(w)),
                                  op_mu.n, seed, max_iters, rel_tol)


def estimate_e_norm(engine, op_mu, seed=0, max_iters=30, rel_tol=1e-2, spd=True):
    """Power-iteration estimate of ``||(I - Pi) A_mu (I - Pi)||``."""
    c = engine.complement

    def E(u):
        return c(op_mu.matvec(c(u)))

    if spd:
        lam, _, _ = power_iteration(E, op_mu.n, seed, max_iters, rel_tol)
        return max(lam, 0.0)
    return estimate_operator_norm(E, E, op_mu.n, seed, max_iters, rel_tol)


def estimate_pi_a_pia(engine, op_mu, K, seed=0, max_iters=30, rel_tol=1e-2):
    """``lambda_max(Pi A_mu Pi A_mu^{-1} Pi)`` by power iteration.

    With ``Q^T A_mu^{-1} Q = K^T K`` the eigenvalues equal those of the
    symmetric ``K Q^T A_mu Q K^T``, which is iterated in ``l`` dimensions.
    """
    def M(v):
        w = K.T @ v
        return K @ engine.qt(op_mu.matvec(engine.q(w)))

    lam, _, _ = power_iteration(M, K.shape[0], seed, max_iters, rel_tol)
    return max(lam, 0.0)


def estimate_ia_pi_a(engine, op_mu, seed=0, max_iters=30, rel_tol=1e-2):
    """``||A_mu^{-1} Pi A_mu||`` by power iteration on its normal map."""
    return estimate_operator_norm(
        lambda u: engine.ainv_project(op_mu.matvec(u)),
        lambda w: op_mu.rmatvec(engine.ainv_project_t(w)),
        op_mu.n, seed, max_iters, rel_tol)


def estimate_cross_norms(engine, op_mu, seed=0, max_iters=30, rel_tol=1e-2):
    """``||(I - Pi) A_mu^{-1} Pi||`` and ``||(I - Pi) A_mu Pi||``."""
    c = engine.complement
    p = engine.project
    ainv = estimate_operator_norm(lambda u: c(engine.ainv_project(u)),
                                  lambda w: engine.ainv_project_t(c(w)),
                                  op_mu.n, seed, max_iters, rel_tol)
    a = estimate_operator_norm(lambda u: c(op_mu.matvec(p(u))),
                               lambda w: p(op_mu.rmatvec(c(w))),
                               op_mu.n, seed + 1, max_iters, rel_tol)
    return ainv, a


def surrogate_f(est):
    """Computable surrogate for ``1 / lambda_min(A_mu)``.

    Maximum of ``||A^{-1} Pi||^2 / ||Pi A^{-1} Pi||``, ``1 / ||E||`` and
    ``||E|| ||A^{-1} Pi||^2 / lambda_max(Pi A Pi A^{-1} Pi)``.
    """
    ainv_pi, pi_ainv_pi, e_norm, pi_a_pia = est.require("ainv_pi", "pi_ainv_pi", "e_norm", "pi_a_pia")
    terms = [ainv_pi ** 2 / pi_ainv_pi, e_norm * ainv_pi ** 2 / pi_a_pia]
    if e_norm > 0:
        terms.append(1.0 / e_norm)
    return max(terms)


# ---------------------------------------------------------------------------
# the preconditioner object

class Preconditioner:
    """A built preconditioner.

    Use :meth:`apply` for ``P u`` (``c``, ``g``, ``nystrom``; for
    ``r_left`` it returns the transformed right-hand side ``P^T b``),
    :meth:`operator` for the preconditioned map of the reducing kinds and
    :meth:`recover` to map a preconditioned solution back to ``x``.
    """

    def __init__(self, kind, engine, op_mu, tau, rho, g_core=None, estimates=None,
                 policy=None, build_matvecs=0, extras=None):
        if kind not in KINDS:
            raise ConfigurationError(f"unknown preconditioner kind {kind!r}")
        if not tau > 0:
            raise ConfigurationError(f"tau must be positive, got {tau!r}")
        self.kind = kind
        self.engine = engine
        self.op_mu = op_mu
        self.tau = float(tau)
        self.rho = None if rho is None else float(rho)
        self.g_core = g_core
        self.estimates = estimates or NormEstimates()
        self.policy = policy
        self.build_matvecs = int(build_matvecs)
        self.extras = extras or {}

    @property
    def n(self):
        return self.op_mu.n

    # P u
    def apply(self, u):
        u = np.asarray(u, dtype=np.float64)
        kind = self.kind
        if kind == "nystrom":
            return self._nystrom_apply(u)
        eng = self.engine
        if kind == "r_left":
            # P^T b = (I - Pi) b - (I - Pi) A_mu (Pi A_mu^{-1} b) + tau Pi A_mu^{-1} b
            z = eng.ainv_project_t(u)
            return eng.complement(u - self.op_mu.matvec(z)) + self.tau * z
        if kind not in ("c", "g"):
            raise ConfigurationError(f"kind {kind!r} is applied through operator()")
        if eng.reorthogonalize and eng.tick():
            cc = eng.complement(u, reorth=True)
            if kind == "c":
                a = eng.ainv_project(u)
                return cc + self.tau * (a - eng.complement(a, reorth=True))
            return cc + self.tau * eng.q(self.g_core @ eng.coeffs(u))
        v = eng.coeffs(u)
        return u + eng.q(self.tau * (self.g_core @ v) - v)

    # A_mu P u for the reducing kinds
    def operator(self, u):
        u = np.asarray(u, dtype=np.float64)
        eng = self.engine
        if self.kind in ("r_right", "r_left"):
            reorth = eng.reorthogonalize and eng.tick()
            cu = eng.complement(u, reorth=reorth)
            return eng.complement(self.op_mu.matvec(cu), reorth=reorth) + self.tau * eng.project(u)
        if self.kind == "r_split":
            reorth = eng.reorthogonalize and eng.tick()
            return eng.complement(self.op_mu.matvec(u), reorth=reorth)
        raise ConfigurationError(f"kind {self.kind!r} has no reduced operator")

    def split_rhs(self, b, reorth=True):
        """Right-hand side ``(I - Pi) b`` of the split system, by default
        with the complement applied twice."""
        return self.engine.complement(b, reorth=reorth)

    def recover(self, y, b=None, refine=True):
        """Solution ``x`` of ``A_mu x = b`` from a preconditioned solution ``y``.

        ``refine`` applies the Neumann-refined projector once for basis-less
        engines running without refinement.
        """
        y = np.asarray(y, dtype=np.float64)
        if self.kind in ("c", "g", "nystrom", "r_left"):
            return y.copy()
        eng = self.engine
        swap = refine and eng.basis.mode == "basisless" and eng.refinement == "none" and eng.lsq is None
        if swap:
            eng.refinement = "neumann"
        try:
            cy = eng.complement(y, reorth=eng.reorthogonalize)
            if self.kind == "r_right":
                rhs = self.tau * y - self.op_mu.matvec(cy)
            else:
                if b is None:
                    raise ConfigurationError("split recovery needs the right-hand side b")
                rhs = np.asarray(b, dtype=np.float64) - self.op_mu.matvec(cy)
            return eng.ainv_project(rhs) + cy
        finally:
            if swap:
                eng.refinement = "none"

    def _nystrom_apply(self, u):
        Y = self.extras["a_omega_apply"]
        C = self.extras["chol"]
        if C is None:
            return u / self.extras["mu"]
        w = Y(u, transpose=True)
        w = sla.solve_triangular(C, w, trans="T", lower=False)
        w = sla.solve_triangular(C, w, lower=False)
        return (u - Y(w)) / self.extras["mu"]

    def dense(self):
        """Materialize ``P`` (or the preconditioned operator) column by column."""
        n = self.n
        fn = self.apply if self.kind in ("c", "g", "nystrom") else self.operator
        out = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            out[:, j] = fn(e)
        return out

    def metadata(self):
        meta = {
            "kind": self.kind,
            "tau": self.tau,
            "rho": self.rho,
            "policy": None if self.policy is None else str(self.policy),
            "estimates": self.estimates.to_dict(),
            "build_matvecs": self.build_matvecs,
        }
        if self.engine is not None:
            meta.update(self.engine.describe())
        else:
            meta["l"] = self.extras.get("l")
        for form in ("primary", "coarse", "refined"):
            try:
                meta.setdefault("bounds", {})[form] = cond_bound(self.kind, self.estimates, self.tau, self.rho, form)
            except (ConfigurationError, ZeroDivisionError, TypeError):
                pass
        return meta


def apply_preconditioner(P, u):
    return P.apply(u)


def apply_preconditioned_operator(P, op_mu, u):
    if op_mu is not P.op_mu and op_mu.n != P.n:
        raise ConfigurationError("operator does not match the preconditioner")
    return P.operator(u)


def recover_solution(P, op_mu, y, b=None):
    return P.recover(y, b)


def build_preconditioner(kind, engine, op_mu, policy=None, seed=0, max_iters=30, rel_tol=1e-2,
                         f_est=None, estimates=None):
    """Estimate norms, choose ``tau`` and assemble the core matrix.

    ``estimates`` may supply (exact) values that are then not estimated.
    ``f_est`` overrides the default ``1 / |mu|`` (``mu != 0``) or, for the
    correcting kind with ``mu == 0``, the computable surrogate.
    """
    if kind not in KINDS or kind == "nystrom":
        raise ConfigurationError(f"build_preconditioner does not build kind {kind!r}")
    policy = TauPolicy.parse(policy, kind)
    start = op_mu.matvecs
    given = estimates or NormEstimates()
    est = NormEstimates().merged(given)
    spd = op_mu.base.definiteness == "spd" and op_mu.mu >= 0
    g_core = None

    if f_est is not None:
        est.f_est = float(f_est)
    elif est.f_est is None and op_mu.mu != 0:
        est.f_est = 1.0 / abs(op_mu.mu)

    if kind in ("r_right", "r_left", "r_split"):
        if est.e_norm is None:
            est.e_norm = estimate_e_norm(engine, op_mu, seed, max_iters, rel_tol, spd=spd)
    elif kind == "c":
        g_core, K = correcting_core(engine)
        if est.e_norm is None:
            est.e_norm = estimate_e_norm(engine, op_mu, seed, max_iters, rel_tol, spd=spd)
        if est.pi_a_pia is None:
            est.pi_a_pia = estimate_pi_a_pia(engine, op_mu, K, seed + 1, max_iters, rel_tol)
        eig = np.linalg.eigvalsh(g_core)
        if est.pi_ainv_pi is None:
            est.pi_ainv_pi = float(eig[-1])
        if est.pi_ainv_pi_min is None:
            est.pi_ainv_pi_min = float(max(eig[0], 0.0))
        if est.ainv_pi is None:
            # ||Omega R^{-1}|| exactly from the small factor of Omega
            _, r_w = np.linalg.qr(engine.basis.omega, mode="reduced")
            est.ainv_pi = float(np.linalg.norm(engine.basis.rt_solve(r_w.T).T, 2))
        if est.f_est is None:
            est.f_est = surrogate_f(est)
        if policy.name == "c_bound_min" and (est.c1 is None or est.c2 is None):
            if est.compl_ainv_pi is None or est.compl_a_pi is None:
                est.compl_ainv_pi, est.compl_a_pi = estimate_cross_norms(engine, op_mu, seed + 2, max_iters, rel_tol)
            if est.pi_ainv_pi_min > 0:
                est.c1 = 2.0 * est.compl_ainv_pi / math.sqrt(est.pi_ainv_pi_min)
            est.c2 = 2.0 * est.compl_a_pi * math.sqrt(est.pi_ainv_pi)
    else:
        g_core, _ = generalized_core(engine)
        if est.proj_err is None:
            est.proj_err = _complement_norm_a(engine, op_mu, seed, max_iters, rel_tol)
        if est.ia_pi_a is None:
            est.ia_pi_a = estimate_ia_pi_a(engine, op_mu, seed + 1, max_iters, rel_tol)

    tau, rho = select_tau(kind, policy, est)
    return Preconditioner(kind, engine, op_mu, tau, rho, g_core=g_core, estimates=est,
                          policy=policy, build_matvecs=op_mu.matvecs - start)


def build_nystrom_baseline(op_mu, omega, mu=None):
    """Basis-less randomized Nystrom preconditioner.

    ``P = mu^{-1} (I - A Omega C^{-1} C^{-T} Omega^T A)`` with
    ``C^T C = Omega^T A^2 Omega + mu Omega^T A Omega`` (regularized on
    breakdown).  This equals ``(A_nys + mu I)^{-1}`` for the Nystrom
    approximation ``A_nys = A Omega (Omega^T A Omega)^{-1} Omega^T A``.
    Products with ``A Omega`` are recomputed on demand, one operator
    application each.
    """
    mu = op_mu.mu if mu is None else float(mu)
    if not mu > 0:
        raise ConfigurationError("the Nystrom baseline needs mu > 0")
    base = op_mu.base
    omega = np.asarray(omega, dtype=np.float64)
    start = base.matvecs
    Y = base.matmat(omega)
    W = Y.T @ Y + mu * (omega.T @ Y)
    W = 0.5 * (W + W.T)
    if not np.any(W):
        C, alpha = None, 0.0
    else:
        C, alpha = cholesky_with_fallback(W)

    def a_omega(v, transpose=False):
        if transpose:
            return omega.T @ base.rmatvec(v)
        return base.matvec(omega @ v)

    extras = {"a_omega_apply": a_omega, "chol": C, "mu": mu, "alpha": alpha, "l": omega.shape[1],
              "omega": omega}
    return Preconditioner("nystrom", None, op_mu, mu, None, extras=extras,
                          build_matvecs=base.matvecs - start)
