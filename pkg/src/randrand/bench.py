"""Synthetic test problems, dense oracles and the experiment runner.

Everything here that materializes an ``n x n`` matrix is meant for
desk-scale checks (``n`` up to a few thousand); the cap is enforced by
``dense_cap`` where it matters.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._random import stream
from .errors import ConfigurationError, NotPositiveDefiniteError
from .io import read_matrix_market, read_points, write_csv, write_json
from .operators import LinearOperatorSpec, ShiftedOperator, dense_operator
from .orthogonalization import build_basis
from .preconditioners import NormEstimates, build_preconditioner, cond_bound
from .projectors import ProjectionEngine
from .solvers import SolveConfig, _prepare, form_test_matrix, solve_with_preconditioner

DENSE_CAP = 2000
CSV_HEADERS = (
    "matrix", "kind", "policy", "l", "q", "seed", "n", "mu",
    "cond_exact", "cond_bound", "proj_err", "e_norm", "tau", "rho",
    "iters", "converged", "matvecs", "wall_ms", "error",
)
_TAG_U = 0x55


@dataclass
class SpectrumModel:
    """Eigenvalues of a synthetic symmetric matrix ``U diag(lam) U^T``.

    The spectrum is a head of ``head_count`` values decaying
    geometrically from ``head_top`` down to the first tail value,
    followed by a tail:

    * ``("poly", alpha)``: ``tail_scale * j^{-alpha}``, ``j = 1, 2, ...``;
    * ``("step", [(count, value), ...])``: piecewise constant levels, the
      last level filling the remainder;
    * ``("flat", value)``: constant.

    ``spike = (count, smallest)`` replaces the last ``count`` values by a
    geometric run down to ``smallest``.  ``flip_signs = (first, last)``
    negates eigenvalues ``first..last`` (1-based, inclusive) after
    sorting by decreasing value.
    """

    n: int
    head_count: int = 20
    head_top: float = 1e6
    tail_law: tuple = ("poly", 0.5)
    tail_scale: float = 1.0
    spike: tuple = None
    flip_signs: tuple = None
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("tail_law", "spike", "flip_signs"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    def eigenvalues(self):
        n = int(self.n)
        h = min(int(self.head_count), n)
        m = n - h
        law = self.tail_law[0]
        if law == "poly":
            tail = self.tail_scale * np.arange(1, m + 1, dtype=float) ** (-float(self.tail_law[1]))
        elif law == "flat":
            tail = np.full(m, float(self.tail_law[1]))
        elif law == "step":
            levels = [tuple(v) for v in self.tail_law[1]]
            parts = []
            left = m
            for i, (count, value) in enumerate(levels):
                c = left if i == len(levels) - 1 else min(int(count), left)
                parts.append(np.full(c, float(value)))
                left -= c
            tail = np.concatenate(parts) if parts else np.zeros(0)
        else:
            raise ConfigurationError(f"unknown tail law {law!r}")
        start = tail[0] if m else self.head_top
        head = self.head_top * (start / self.head_top) ** (np.arange(h) / max(h, 1)) if h else np.zeros(0)
        lam = np.concatenate([head, tail])
        if self.spike is not None:
            count, smallest = int(self.spike[0]), float(self.spike[1])
            if count > 0:
                top = lam[n - count - 1] if n - count - 1 >= 0 else lam[0]
                lam[n - count:] = top * (smallest / top) ** (np.arange(1, count + 1) / count)
        lam = np.sort(lam)[::-1].copy()
        if self.flip_signs is not None:
            a, b = int(self.flip_signs[0]), int(self.flip_signs[1])
            lam[a - 1:b] *= -1.0
        return lam


def random_orthogonal(n, seed):
    """Orthogonal factor of the QR of a seeded Gaussian matrix (signs fixed)."""
    G = stream(seed, _TAG_U).standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def gen_spectrum(model, dense_cap=DENSE_CAP):
    """Return ``(A, lam)`` with ``A = U diag(lam) U^T``."""
    if model.n > dense_cap:
        raise ConfigurationError(f"n={model.n} exceeds the dense cap {dense_cap}")
    lam = model.eigenvalues()
    U = random_orthogonal(model.n, model.seed)
    A = (U * lam) @ U.T
    return 0.5 * (A + A.T), lam


# ---------------------------------------------------------------------------
# spectral diagnostics

def stable_rank(sigmas, k):
    """``sum_{j>=k} sigma_j / sigma_k`` (``k`` is 1-based)."""
    s = np.sort(np.abs(np.asarray(sigmas, dtype=float)))[::-1]
    return float(np.sum(s[k - 1:]) / s[k - 1])


def stable_cond(sigmas, k, mu=0.0):
    """``1/(n-k+1) sum_{j>=k} sigma_j / (sigma_n + |mu|)`` (``k`` is 1-based)."""
    s = np.sort(np.abs(np.asarray(sigmas, dtype=float)))[::-1]
    return float(np.mean(s[k - 1:]) / (s[-1] + abs(mu)))


def quasi_optimal_bound(lam_mu, k, c=2.0, C3=2 * 18 ** 2):
    """``1 + (C3 n / ((c-1) k))^{1/2} cond_k(A_mu^2)^{1/2}`` for ``q = 0``.

    ``lam_mu`` are the eigenvalues of the spd ``A_mu``.
    """
    lam_mu = np.asarray(lam_mu, dtype=float)
    n = lam_mu.size
    return 1.0 + math.sqrt(C3 * n / ((c - 1.0) * k)) * math.sqrt(stable_cond(lam_mu ** 2, k))


# ---------------------------------------------------------------------------
# dense oracles

def _sym_norm(M):
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    return float(max(abs(w[0]), abs(w[-1])))


def _norm2(M):
    """Spectral norm of a dense (possibly rectangular) matrix."""
    if M.shape[0] > M.shape[1]:
        M = M.T
    return math.sqrt(max(_sym_norm(M @ M.T), 0.0))


def exact_projector(A_mu, omega):
    """Orthonormal basis of ``range(A_mu omega)`` and the projector onto it."""
    Q, _ = np.linalg.qr(A_mu @ omega)
    return Q, Q @ Q.T


def exact_estimates(A_mu, omega):
    """All :class:`NormEstimates` fields computed exactly from dense matrices.

    The projector is recomputed here from a Householder QR of
    ``A_mu omega``, independently of the engine under test.
    """
    n = A_mu.shape[0]
    Q, Pi = exact_projector(A_mu, omega)
    C = np.eye(n) - Pi
    Ainv = np.linalg.inv(A_mu)
    Ainv = 0.5 * (Ainv + Ainv.T)
    evals = np.linalg.eigvalsh(0.5 * (A_mu + A_mu.T))
    sig_min = float(np.min(np.abs(evals)))
    H = Q.T @ A_mu @ Q
    Gc = Q.T @ Ainv @ Q
    Gc = 0.5 * (Gc + Gc.T)
    gw, gv = np.linalg.eigh(Gc)
    est = NormEstimates(
        e_norm=_sym_norm(C @ A_mu @ C),
        lambda_min=sig_min,
        f_est=1.0 / sig_min,
        proj_err=_norm2(C @ A_mu),
        ia_pi_a=_norm2(Ainv @ Pi @ A_mu),
        ainv_pi=_norm2(Ainv @ Pi),
        f_norm=_sym_norm(C @ Ainv @ C),
        compl_ainv=_norm2(C @ Ainv),
        compl_ainv_pi=_norm2(C @ Ainv @ Pi),
        compl_a_pi=_norm2(C @ A_mu @ Pi),
    )
    if evals[0] > 0 and gw[0] > 0:
        est.pi_a_pia = float(np.max(np.real(np.linalg.eigvals(H @ Gc))))
        est.pi_ainv_pi = float(gw[-1])
        est.pi_ainv_pi_min = float(gw[0])
        # cross terms of the refined bound
        isq = Q @ (gv / np.sqrt(gw)) @ gv.T @ Q.T
        sq = Q @ (gv * np.sqrt(gw)) @ gv.T @ Q.T
        C1 = C @ Ainv @ Pi @ isq
        C2 = C @ A_mu @ Pi @ sq
        est.c1 = _sym_norm(C1 + C1.T)
        est.c2 = _sym_norm(C2 + C2.T)
    return est


def effective_rho(kind, est, tau):
    """The ``rho`` that the actual ``tau`` corresponds to under exact norms."""
    if kind == "c":
        return tau * est.pi_a_pia / est.e_norm
    if kind == "g":
        return (tau * est.ia_pi_a / est.proj_err) ** 2
    # smallest rho admitted by lambda_min / rho <= tau <= rho ||E||
    return max(1.0, tau / est.e_norm, est.lambda_min / tau)


DEFAULT_BOUND_FORM = {"r_right": "primary", "r_left": "primary", "r_split": "primary",
                      "c": "refined", "g": "primary"}


def exact_bound(P, A_mu, form=None):
    """Condition bound of ``P`` evaluated with exact dense quantities.

    For the Nystrom baseline this is ``1 + ||A - A_nys|| / mu``.
    """
    if P.kind == "nystrom":
        mu = P.extras["mu"]
        A = A_mu - mu * np.eye(A_mu.shape[0])
        return 1.0 + _norm2(A - nystrom_dense(A, P.extras["omega"])) / mu
    omega = P.engine.basis.omega
    est = exact_estimates(A_mu, omega)
    rho = effective_rho(P.kind, est, P.tau)
    form = form or DEFAULT_BOUND_FORM[P.kind]
    if P.kind == "c" and form == "refined":
        # F is the exact 1/lambda_min; cross terms exact
        return cond_bound("c", est, P.tau, rho, "refined")
    return cond_bound(P.kind, est, P.tau, rho, form)


def nystrom_dense(A, omega):
    """``A omega (omega^T A omega)^+ omega^T A`` formed densely."""
    Y = A @ omega
    return Y @ np.linalg.pinv(omega.T @ Y, rcond=1e-15) @ Y.T


def preconditioned_dense(P, A_mu):
    """Symmetric dense preconditioned matrix.

    ``E + tau Pi`` for ``r_right``/``r_left``, ``E = (I - Pi) A_mu (I - Pi)``
    for ``r_split`` (its map ``(I - Pi) A_mu`` has the same nonzero
    spectrum) and ``P^{1/2} A_mu P^{1/2}`` for the others (square root from
    an eigendecomposition of the materialized ``P``).
    """
    if P is None:
        return 0.5 * (A_mu + A_mu.T)
    M = P.dense()
    if P.kind == "r_split":
        n = A_mu.shape[0]
        C = np.column_stack([P.engine.complement(e) for e in np.eye(n)])
        M = M @ C
    if P.kind in ("r_right", "r_left", "r_split"):
        return 0.5 * (M + M.T)
    Ms = 0.5 * (M + M.T)
    asym = np.linalg.norm(M - M.T) / max(np.linalg.norm(M), 1e-300)
    w, V = np.linalg.eigh(Ms)
    if w[0] < -1e-10 * max(abs(w[-1]), 1e-300) or asym > 1e-8:
        raise NotPositiveDefiniteError(max(-w[0] / max(abs(w[-1]), 1e-300), asym))
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    B = S @ A_mu @ S
    return 0.5 * (B + B.T)


def exact_cond(A_dense, mu, P=None, dense_cap=DENSE_CAP):
    """Exact condition number of the preconditioned system.

    Ratio of extreme eigenvalue magnitudes of :func:`preconditioned_dense`
    (singular values, as the map is symmetric).  For G the singular values
    of ``P A_mu`` are used instead; on indefinite systems they differ from
    the eigenvalues of ``P^{1/2} A_mu P^{1/2}``.  For ``r_split`` the
    ``l`` directions annihilated by ``(I - Pi)`` are discarded.
    """
    A_dense = np.asarray(A_dense, dtype=float)
    n = A_dense.shape[0]
    if n > dense_cap:
        raise ConfigurationError(f"n={n} exceeds the dense cap {dense_cap}")
    A_mu = A_dense + mu * np.eye(n)
    if P is not None and P.kind == "g":
        s = np.linalg.svd(P.dense() @ A_mu, compute_uv=False)[::-1]
        return float(s[-1] / s[0])
    B = preconditioned_dense(P, A_mu)
    s = np.sort(np.abs(np.linalg.eigvalsh(B)))
    if P is not None and P.kind == "r_split":
        s = s[P.engine.l:]
    return float(s[-1] / s[0])


def sqrt_c_on_square(A_mu, omega, policy=None, seed=0):
    """Square root of the C preconditioner built for ``A_mu^2``.

    A comparison point for G on indefinite systems: the C preconditioner of
    the spd matrix ``A_mu^2`` (zero shift, test matrix ``omega``) is
    materialized and its psd square root ``S`` returned; compare the
    singular values of ``A_mu S``.  Squaring ``A_mu`` squares its condition
    number, which limits this route to modest conditioning.
    """
    A_mu = np.asarray(A_mu, dtype=float)
    sq = dense_operator(A_mu @ A_mu, symmetric=True, definiteness="spd")
    op = ShiftedOperator(sq, 0.0)
    engine = ProjectionEngine(build_basis(op, omega), op)
    P = build_preconditioner("c", engine, op, policy=policy, seed=seed)
    M = P.dense()
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] < -1e-10 * max(abs(w[-1]), 1e-300):
        raise NotPositiveDefiniteError(-w[0] / max(abs(w[-1]), 1e-300))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


# ---------------------------------------------------------------------------
# kernel operators

def rbf_kernel_operator(points, gamma_kernel, block_size=256, mu=None):
    """Operator ``(1/n) K`` for the Gaussian kernel ``exp(-gamma ||u_i - u_j||^2)``.

    ``points`` is an ``(n, d)`` array or a path read with
    :func:`~randrand.io.read_points`.  Products stream ``K`` in column
    blocks of ``block_size`` so at most ``n * block_size`` kernel entries
    exist at a time.  A block made of unit columns (column sampling) is
    answered with the sampled kernel columns directly.  ``mu`` is only
    recorded on the operator as ``mu_hint``.
    """
    if isinstance(points, (str, os.PathLike)):
        points = read_points(points)
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    block_size = int(block_size)
    if block_size < 1:
        raise ConfigurationError("block_size must be at least 1")
    sq = np.einsum("ij,ij->i", X, X)

    def columns(idx):
        d2 = sq[:, None] + sq[None, idx] - 2.0 * X @ X[idx].T
        return np.exp(-gamma_kernel * np.maximum(d2, 0.0)) / n

    def apply_block(V):
        V = np.asarray(V, dtype=float).reshape(n, -1)
        nz = V != 0
        if np.all(nz.sum(axis=0) == 1) and np.all(V[nz] == 1.0):
            return columns(np.argmax(nz, axis=0))
        out = np.zeros_like(V)
        for s in range(0, n, block_size):
            idx = np.arange(s, min(n, s + block_size))
            out += columns(idx) @ V[idx]
        return out

    op = LinearOperatorSpec(n, lambda v: apply_block(v[:, None])[:, 0], symmetric=True,
                            definiteness="spd", apply_block=apply_block, name="rbf_kernel")
    op.columns = columns
    op.mu_hint = mu
    return op


# ---------------------------------------------------------------------------
# experiment runner

@dataclass
class ExperimentReport:
    config: dict
    rows: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _load_matrix(spec, dense_cap):
    kind = spec.get("type", "synthetic")
    if kind == "synthetic":
        model = SpectrumModel.from_dict(spec["model"])
        A, lam = gen_spectrum(model, dense_cap=max(dense_cap, model.n))
        return {"dense": A, "lam": lam}
    if kind == "mtx":
        op = read_matrix_market(spec["path"])
        dense = op.sparse.toarray() if hasattr(op, "sparse") else getattr(op, "dense", None)
        return {"dense": dense, "op": op}
    if kind == "rbf":
        op = rbf_kernel_operator(spec["points"], spec.get("gamma", 1.0), spec.get("block_size", 256))
        dense = op.matmat(np.eye(op.n)) if op.n <= dense_cap else None
        return {"dense": dense, "op": op}
    raise ConfigurationError(f"unknown matrix type {kind!r}")


def _fresh_op(mat):
    if mat.get("dense") is not None:
        return dense_operator(mat["dense"], symmetric=True,
                              definiteness="spd" if mat.get("lam") is None or mat["lam"].min() >= 0
                              else "symmetric-indefinite")
    return mat["op"]


def run_cell(mat_name, mat, mu, method, l, q, seed, dense_cap=DENSE_CAP, solve=None):
    """Build one preconditioner, measure it and optionally solve with it."""
    t0 = time.perf_counter()
    A = _fresh_op(mat)
    n = A.n
    row = {"matrix": mat_name, "kind": method["kind"], "policy": method.get("policy"),
           "l": l, "q": q, "seed": seed, "n": n, "mu": mu}
    start = A.matvecs
    try:
        cfg_kwargs = {k: v for k, v in method.items() if k not in ("kind", "policy", "name")}
        cfg = SolveConfig(precond_kind=method["kind"], tau_policy=method.get("policy"), l=l, q=q,
                          seed=seed, **cfg_kwargs, **(solve or {}))
        op_mu = ShiftedOperator(A, mu)
        omega = form_test_matrix(A, n, cfg)
        P = _prepare(cfg, op_mu, omega=omega)
        row["tau"] = P.tau
        row["rho"] = P.rho
        row["e_norm"] = P.estimates.e_norm
        row["proj_err"] = P.estimates.proj_err
        dense = mat.get("dense")
        if dense is not None and n <= dense_cap:
            A_mu = dense + mu * np.eye(n)
            row["cond_exact"] = exact_cond(dense, mu, P, dense_cap)
            row["cond_bound"] = exact_bound(P, A_mu)
            if P.kind != "nystrom":
                ex = exact_estimates(A_mu, P.engine.basis.omega)
                row["proj_err"], row["e_norm"] = ex.proj_err, ex.e_norm
        if solve is not None:
            b = stream(seed, 0xB).standard_normal(n)
            _, rep = solve_with_preconditioner(cfg, P, op_mu, b)
            row["iters"] = rep.iters
            row["converged"] = int(rep.converged)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["matvecs"] = A.matvecs - start
    row["wall_ms"] = round(1e3 * (time.perf_counter() - t0), 3)
    return row


def run_experiment(config, out_dir=None, threads=1, dense_cap=None, seed=None):
    """Run a sweep described by a JSON file or dictionary.

    Keys: ``matrices`` (list of ``{"name", "type", "mu", ...}``),
    ``methods`` (list of ``{"kind", "policy", ...}``), ``l`` and ``q``
    (lists), ``seeds`` (list) and optionally ``solve`` (solver settings,
    or ``false`` to skip the solves) and ``dense_cap``.  One CSV row is
    produced per cell.
    """
    if isinstance(config, (str, os.PathLike)):
        import json
        with open(config) as fh:
            config = json.load(fh)
    config = dict(config)
    cap = int(dense_cap or config.get("dense_cap", DENSE_CAP))
    base_seed = int(seed if seed is not None else config.get("seed", 0))
    seeds = config.get("seeds") or [base_seed]
    ls = config.get("l", [20])
    qs = config.get("q", [0])
    methods = config.get("methods", [])
    report = ExperimentReport(config)
    cells = []
    mats = {}
    for spec in config.get("matrices", []):
        name = spec.get("name", f"m{len(mats)}")
        mats[name] = (_load_matrix(spec, cap), float(spec.get("mu", 0.0)))
        for s in seeds:
            for l in ls:
                for q in qs:
                    for m in methods:
                        cells.append((name, m, int(l), int(q), int(s)))
    solve = config.get("solve", {})
    if solve is False:
        solve = None

    def work(cell):
        name, m, l, q, s = cell
        mat, mu = mats[name]
        return run_cell(name, mat, mu, m, l, q, s, cap, solve)

    if threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            report.rows = list(pool.map(work, cells))
    else:
        report.rows = [work(c) for c in cells]
    report.errors = [r for r in report.rows if r.get("error")]
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "cells.csv")
        json_path = os.path.join(out_dir, "report.json")
        write_csv(csv_path, report.rows, CSV_HEADERS)
        report.paths = {"csv": csv_path, "json": json_path}
        write_json(json_path, report.to_dict())
    return report
