"""Krylov solvers and the randomized deflation solve drivers.

:func:`cg` and :func:`minres` are plain (optionally preconditioned)
implementations that track the unpreconditioned residual.
:func:`randrand_solve` goes from the sketch to the test matrix, then to
the basis, the preconditioner and a restarted Krylov solve.
:func:`multi_shift_solve` reuses one set of Gram blocks across several
shifts.
"""

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .operators import ShiftedOperator, estimate_operator_norm, subspace_iterate
from .orthogonalization import basis_from_pack, build_basis, build_recycle_pack
from .preconditioners import build_nystrom_baseline, build_preconditioner
from .projectors import ProjectionEngine
from .sketching import draw_sketch, gaussian_rows, sketch_apply

SOLVERS = ("cg", "minres")
STAGNATION_WINDOW = 50
STAGNATION_FACTOR = 0.9


@dataclass
class SolveConfig:
    """Settings for :func:`randrand_solve`.

    ``refinement`` is passed to the projection engine (``"auto"``,
    ``"none"``, ``"neumann"`` or ``"iterative:k"``).  ``basis_mode`` is
    ``explicit`` or ``basisless``; ``orth`` picks the basis-less
    factorization.  ``tau_policy`` accepts the forms understood by
    :class:`~randrand.preconditioners.TauPolicy`.  ``orthonormalize_omega``
    replaces ``A^q X^T`` by an orthonormal basis of its range (see
    :func:`form_test_matrix`).
    """

    solver: str = "minres"
    precond_kind: str = "c"
    sketch_kind: str = "gaussian"
    l: int = 20
    gamma: int = None
    seed: int = 0
    q: int = 0
    tau_policy: object = None
    tol: float = 1e-10
    max_iters: int = 1000
    restart_eta: float = 1e-2
    reorthogonalize: bool = False
    reorth_stride: int = 1
    refinement: str = "auto"
    basis_mode: str = "explicit"
    orth: str = None
    split_reorth: bool = True
    power_iters: int = 30
    orthonormalize_omega: bool = True

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if not 0 < self.tol < 1:
            raise ConfigurationError("tol must lie in (0, 1)")
        if not 0 < self.restart_eta <= 1:
            raise ConfigurationError("restart_eta must lie in (0, 1]")
        if self.precond_kind == "g" and self.solver != "minres":
            raise ConfigurationError("the generalized preconditioner requires minres")
        if self.l < 1 or self.max_iters < 1:
            raise ConfigurationError("l and max_iters must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown solve config keys: {', '.join(unknown)}")
        return cls(**known)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def refinement_arg(self):
        ref = self.refinement
        if isinstance(ref, str) and ref.startswith("iterative"):
            _, _, k = ref.partition(":")
            return ("iterative", int(k or 2))
        return ref

    def to_dict(self):
        d = asdict(self)
        d["tau_policy"] = None if self.tau_policy is None else str(self.tau_policy)
        return d


@dataclass
class SolveReport:
    """Outcome of a solve.

    ``residual_history[t]`` is ``||r_t|| / ||b||`` after ``t`` iterations
    (index 0 is the starting residual); ``restarts`` lists the iteration
    counts at which the solver was restarted from the true residual.
    """

    iters: int
    residual_history: list
    restarts: list = field(default_factory=list)
    matvecs_A: int = 0
    converged: bool = False
    t_bound: float = None
    stagnated: bool = False
    breakdown: bool = False
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["residual_history"] = [float(v) for v in self.residual_history]
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=str)

    def write_trace_csv(self, path):
        marks = set(self.restarts)
        with open(path, "w") as fh:
            fh.write("iter,rel_residual,restarted\n")
            for i, v in enumerate(self.residual_history):
                fh.write(f"{i},{v:.17g},{int(i in marks)}\n")


def _matvec_fn(op):
    if callable(op) and not hasattr(op, "matvec"):
        return op, None
    return op.matvec, op


def _stagnated(history, window=STAGNATION_WINDOW, factor=STAGNATION_FACTOR):
    """True when some ``window`` iterations passed without a 10% gain."""
    best = history[0]
    since = 0
    for v in history[1:]:
        if v < factor * best:
            best = v
            since = 0
        else:
            since += 1
            if since >= window:
                return True
    return False


def _start(op, b, x0):
    apply, counted = _matvec_fn(op)
    b = np.asarray(b, dtype=np.float64)
    start = counted.matvecs if counted is not None else 0
    calls = [0]

    def A(v):
        calls[0] += 1
        return apply(v)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A(x) if x0 is not None and np.any(x) else b.copy()
    return A, counted, start, calls, b, x, r


def _finish(counted, start, calls, x, hist, iters, converged, breakdown, t0):
    mv = counted.matvecs - start if counted is not None else calls[0]
    rep = SolveReport(iters, hist, matvecs_A=mv, converged=converged,
                      stagnated=_stagnated(hist), breakdown=breakdown,
                      wall_time=time.perf_counter() - t0)
    return x, rep


def cg(op, b, precond=None, x0=None, tol=1e-10, max_iters=1000):
    """Preconditioned conjugate gradients.

    ``op`` is an operator with ``matvec`` or a callable; ``precond`` a
    callable applying an spd preconditioner.  A non-positive curvature
    ``<p, A p> <= 0`` stops the iteration with ``breakdown`` set.
    """
    t0 = time.perf_counter()
    A, counted, start, calls, b, x, r = _start(op, b, x0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return _finish(counted, start, calls, np.zeros_like(b), [0.0], 0, True, False, t0)
    hist = [np.linalg.norm(r) / bnorm]
    if hist[0] <= tol:
        return _finish(counted, start, calls, x, hist, 0, True, False, t0)
    M = precond if precond is not None else (lambda v: v)
    z = M(r)
    p = z.copy()
    rz = r @ z
    breakdown = False
    it = 0
    while it < max_iters:
        Ap = A(p)
        pAp = p @ Ap
        if not pAp > 0 or not rz > 0:
            breakdown = True
            break
        it += 1
        a = rz / pAp
        x += a * p
        r -= a * Ap
        hist.append(np.linalg.norm(r) / bnorm)
        if hist[-1] <= tol:
            break
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return _finish(counted, start, calls, x, hist, it, hist[-1] <= tol, breakdown, t0)


def minres(op, b, precond=None, x0=None, tol=1e-10, max_iters=1000):
    """Preconditioned MINRES for symmetric (possibly indefinite) systems.

    Lanczos with the preconditioner ``precond`` (spd) and Givens-rotation
    updates.  Besides the iterate, the product ``A w`` of every search
    direction is carried along, so the unpreconditioned residual is
    updated without extra operator applications; it is what
    ``residual_history`` records and what the stopping test uses.
    """
    t0 = time.perf_counter()
    A, counted, start, calls, b, x, r = _start(op, b, x0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return _finish(counted, start, calls, np.zeros_like(b), [0.0], 0, True, False, t0)
    hist = [np.linalg.norm(r) / bnorm]
    if hist[0] <= tol:
        return _finish(counted, start, calls, x, hist, 0, True, False, t0)
    M = precond if precond is not None else (lambda v: v)
    r1 = r.copy()
    r2 = r.copy()
    y = M(r1)
    beta1 = r1 @ y
    if beta1 < 0:
        raise ConfigurationError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1)
    beta, oldb = beta1, 0.0
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    n = b.shape[0]
    w = np.zeros(n)
    w2 = np.zeros(n)
    aw = np.zeros(n)
    aw2 = np.zeros(n)
    res = r.copy()
    eps = np.finfo(float).eps
    breakdown = False
    it = 0
    while it < max_iters:
        it += 1
        v = y / beta
        Av = A(v)
        y = Av.copy()
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = v @ y
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        y = M(r2)
        oldb = beta
        beta = r2 @ y
        if beta < 0:
            raise ConfigurationError("preconditioner is not positive definite")
        beta = math.sqrt(beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        aw1, aw2 = aw2, aw
        aw = (Av - oldeps * aw1 - delta * aw2) / gamma
        x += phi * w
        res -= phi * aw
        hist.append(np.linalg.norm(res) / bnorm)
        if hist[-1] <= tol:
            break
        if beta <= eps * beta1:
            # invariant Krylov space: the iterate is exact up to rounding
            breakdown = True
            break
    return _finish(counted, start, calls, x, hist, it, hist[-1] <= tol, breakdown, t0)


def _krylov(name):
    return cg if name == "cg" else minres


# ---------------------------------------------------------------------------
# drivers

def orthonormal_range(omega):
    """Orthonormal basis of ``range(omega)`` (Householder QR).

    Every preconditioner here depends on the test matrix only through its
    range, so this changes nothing in exact arithmetic.  It keeps
    ``A_mu Omega`` as well conditioned as ``A_mu`` itself; with ``q >= 1``
    the columns of ``A^q X^T`` all lean towards the top eigenvectors and
    the triangular factor otherwise loses most of its digits.
    """
    Q, R = np.linalg.qr(omega)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def form_test_matrix(A, n, config, seed=None):
    """``Omega = A^q X^T`` for the configured sketch (``q l`` products).

    With ``config.orthonormalize_omega`` the result is passed through
    :func:`orthonormal_range`.
    """
    seed = config.seed if seed is None else seed
    params = {} if config.gamma is None else {"gamma": config.gamma}
    X = draw_sketch(config.sketch_kind, config.l, n, seed, params)
    X_T = sketch_apply(X, np.eye(config.l), "left_XT")
    omega = subspace_iterate(A, X_T, config.q)
    return orthonormal_range(omega) if config.orthonormalize_omega else omega


def _prepare(config, op_mu, omega=None, basis=None):
    """Build the basis, engine and preconditioner for one shift."""
    if config.precond_kind == "nystrom":
        if omega is None:
            omega = form_test_matrix(op_mu.base, op_mu.n, config)
        return build_nystrom_baseline(op_mu, omega)
    if basis is None:
        if omega is None:
            omega = form_test_matrix(op_mu.base, op_mu.n, config)
        basis = build_basis(op_mu, omega, mode=config.basis_mode, orth=config.orth, seed=config.seed)
    engine = ProjectionEngine(basis, op_mu, refinement=config.refinement_arg(),
                              reorthogonalize=config.reorthogonalize,
                              reorth_stride=config.reorth_stride)
    return build_preconditioner(config.precond_kind, engine, op_mu, policy=config.tau_policy,
                                seed=config.seed, max_iters=config.power_iters)


def _inner_step(config, P, op_mu, r, tol, max_iters):
    """Solve for a correction ``dx`` with ``A_mu dx ~ r``."""
    solver = _krylov(config.solver)
    if P is None:
        dx, rep = solver(op_mu.matvec, r, tol=tol, max_iters=max_iters)
        return dx, rep, np.linalg.norm(r)
    kind = P.kind
    if kind == "r_right":
        y, rep = solver(P.operator, r, tol=tol, max_iters=max_iters)
        return P.recover(y), rep, np.linalg.norm(r)
    if kind == "r_split":
        rhs = P.split_rhs(r, reorth=config.split_reorth)
        y, rep = solver(P.operator, rhs, tol=tol, max_iters=max_iters)
        return P.recover(y, r), rep, np.linalg.norm(rhs)
    if kind == "r_left":
        rhs = P.apply(r)
        dx, rep = solver(P.operator, rhs, tol=tol, max_iters=max_iters)
        return dx, rep, np.linalg.norm(rhs)
    dx, rep = solver(op_mu.matvec, r, precond=P.apply, tol=tol, max_iters=max_iters)
    return dx, rep, np.linalg.norm(r)


def solve_with_preconditioner(config, P, op_mu, b):
    """Restarted Krylov solve of ``A_mu x = b`` with a built preconditioner.

    The inner solver runs until its residual drops by ``restart_eta`` (or
    to what is left of the overall target); then the true residual
    ``b - A_mu x`` is recomputed and the solver restarts from it.  The
    loop ends on convergence, when the iteration budget is spent or when a
    restart fails to lower the true residual.  ``P=None`` runs the same
    protocol without preconditioning.
    """
    b = np.asarray(b, dtype=np.float64)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, SolveReport(0, [0.0], converged=True)
    r = b.copy()
    rnorm = bnorm
    hist = [1.0]
    restarts = []
    total = 0
    converged = False
    breakdown = False
    while total < config.max_iters:
        target = max(config.restart_eta, config.tol * bnorm / rnorm)
        dx, rep, rhs_norm = _inner_step(config, P, op_mu, r, target, config.max_iters - total)
        breakdown = breakdown or rep.breakdown
        x += dx
        r = b - op_mu.matvec(x)
        new = np.linalg.norm(r)
        scale = rhs_norm / bnorm
        hist.extend(v * scale for v in rep.residual_history[1:])
        total += rep.iters
        if rep.iters:
            hist[-1] = new / bnorm
        if new <= config.tol * bnorm:
            converged = True
            rnorm = new
            break
        if rep.iters == 0 or new >= rnorm:
            rnorm = min(rnorm, new)
            break
        rnorm = new
        restarts.append(total)
    if hist[-1] != rnorm / bnorm:
        hist[-1] = rnorm / bnorm
    return x, SolveReport(total, hist, restarts=restarts, converged=converged,
                          stagnated=_stagnated(hist), breakdown=breakdown)


def randrand_solve(config, A, mu, b, omega=None):
    """Solve ``(A + mu I) x = b`` with randomized range deflation.

    Draws the sketch, forms ``Omega = A^q X^T`` (or uses ``omega``),
    builds the basis and the preconditioner, then runs the restarted
    solve.  ``matvecs_A`` in the report counts every product with ``A``,
    including the build.
    """
    t0 = time.perf_counter()
    op_mu = ShiftedOperator(A, mu)
    start = A.matvecs
    P = _prepare(config, op_mu, omega=omega)
    build = A.matvecs - start
    x, rep = solve_with_preconditioner(config, P, op_mu, b)
    rep.matvecs_A = A.matvecs - start
    rep.extra["build_matvecs"] = build
    rep.extra["tau"] = P.tau
    rep.extra["rho"] = P.rho
    est = P.estimates
    if est.e_norm is not None and est.f_est is not None:
        rep.t_bound = math.sqrt(max(est.e_norm, 0.0) * est.f_est)
    rep.wall_time = time.perf_counter() - t0
    return x, rep


def multi_shift_solve(A, b, shifts, config, omega=None):
    """Solve ``(A + mu I) x = b`` for several shifts with one test matrix.

    ``A Omega`` and the shift-independent Gram blocks are computed once;
    each shift gets its triangular factor from them without new products
    for the basis.  Failures are reported per shift: the entry is then
    ``(None, report)`` with ``report.extra["error"]`` set.  Every report
    carries the shared ``basis_matvecs`` count.
    """
    if any(not math.isfinite(float(m)) for m in shifts):
        raise ConfigurationError("shifts must be finite")
    if config.precond_kind == "nystrom":
        raise ConfigurationError("multi-shift recycling applies to range-deflation kinds")
    start = A.matvecs
    if omega is None:
        omega = form_test_matrix(A, A.n, config)
    pack = build_recycle_pack(A, omega)
    basis_matvecs = A.matvecs - start
    out = []
    for mu in shifts:
        t0 = time.perf_counter()
        op_mu = ShiftedOperator(A, float(mu))
        before = A.matvecs
        try:
            basis = basis_from_pack(op_mu, omega, pack)
            P = _prepare(config, op_mu, basis=basis)
            x, rep = solve_with_preconditioner(config, P, op_mu, b)
            rep.extra["tau"] = P.tau
        except Exception as exc:  # noqa: BLE001 - isolate per-shift failures
            x, rep = None, SolveReport(0, [1.0], extra={"error": f"{type(exc).__name__}: {exc}"})
        rep.matvecs_A = A.matvecs - before
        rep.extra["basis_matvecs"] = basis_matvecs
        rep.extra["mu"] = float(mu)
        rep.wall_time = time.perf_counter() - t0
        out.append((x, rep))
    return out


@dataclass
class AdaptiveResult:
    basis: object
    l_final: int
    proj_err: float
    threshold: float
    history: list
    stagnated: bool
    omega: np.ndarray = field(repr=False, default=None)


def adaptation_threshold(f, n, l_max, q, mu):
    """``f (n / l_max)^{1/(2q+2)} |mu|``."""
    return f * (n / l_max) ** (1.0 / (2 * q + 2)) * abs(mu)


def adaptive_sketch_dim(op_mu, f, l0, growth=2.0, l_max=None, q=0, seed=0, mode="explicit",
                        power_iters=30):
    """Grow the sketch until the projection error is small enough.

    Starting from ``l0`` Gaussian columns, ``l`` is multiplied by
    ``growth`` until the estimated ``||(I - Pi) A_mu||`` is at most
    :func:`adaptation_threshold` or ``l_max`` is reached.  A growth step
    that improves the error by less than 10% sets ``stagnated``.  New
    columns extend the old ones (each Gaussian row of ``X`` is keyed by its
    index), so only the added columns are passed through ``A^q``; the
    basis is built from :func:`orthonormal_range` of all columns.  With
    ``mu = 0`` the threshold is zero, so growth stops at the first
    stagnating step instead.
    """
    n = op_mu.n
    l_max = n if l_max is None else int(l_max)
    if not f > 0:
        raise ConfigurationError("f must be positive")
    if not growth > 1:
        raise ConfigurationError("growth must exceed 1")
    if not 1 <= l0 <= l_max <= n:
        raise ConfigurationError("need 1 <= l0 <= l_max <= n")
    if op_mu.mu == 0:
        warnings.warn("mu = 0: the size criterion is degenerate, stopping on stagnation only",
                      RuntimeWarning, stacklevel=2)
    threshold = adaptation_threshold(f, n, l_max, q, op_mu.mu)
    omega = np.empty((n, 0))
    l = int(l0)
    history = []
    prev = None
    stagnated = False
    while True:
        new = gaussian_rows(seed, n, omega.shape[1], l).T
        omega = np.hstack([omega, subspace_iterate(op_mu.base, new, q)])
        basis = build_basis(op_mu, orthonormal_range(omega), mode=mode, seed=seed)
        engine = ProjectionEngine(basis, op_mu)
        err = estimate_operator_norm(lambda u: engine.complement(op_mu.matvec(u)),
                                     lambda w: op_mu.rmatvec(engine.complement(w)),
                                     n, seed, power_iters, 1e-2)
        history.append((l, err))
        if err <= threshold:
            break
        if prev is not None and err > STAGNATION_FACTOR * prev:
            stagnated = True
            if op_mu.mu == 0:
                break
        if l >= l_max:
            break
        prev = err
        l = min(l_max, max(l + 1, int(math.ceil(l * growth))))
    return AdaptiveResult(basis, l, err, threshold, history, stagnated, omega)


@dataclass
class IterationBound:
    t: float
    bound: float
    expected_bound: float


def iteration_bound_report(n, d, q, proj_err, lambda_min_mu):
    """Iteration constant ``T`` and its a priori bounds.

    ``t = sqrt(proj_err / lambda_min_mu)``; ``bound = 1 + (3240 n/d)^{1/(4q+4)}``
    holds with high probability and ``expected_bound = 1 + (148 n/d)^{1/(4q+4)}``
    bounds its mean.  About ``t/2 * log(2/eps)`` iterations reduce the error
    by ``eps``.
    """
    if min(n, d, proj_err, lambda_min_mu) <= 0 or q < 0:
        raise ConfigurationError("inputs must be positive")
    e = 1.0 / (4 * q + 4)
    return IterationBound(math.sqrt(proj_err / lambda_min_mu),
                          1.0 + (3240.0 * n / d) ** e,
                          1.0 + (148.0 * n / d) ** e)
