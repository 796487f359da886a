"""Command-line entry point.

Subcommands::

    randrand solve          --config cfg.json [--out DIR]
    randrand sweep          --config sweep.json [--out DIR] [--threads K]
    randrand spectrum       --config model.json [--out DIR]
    randrand precond-report --config cfg.json [--out DIR]

``solve`` and ``precond-report`` read ``{"matrix": {...}, "mu": float,
"solve": {...SolveConfig fields...}}`` plus optional ``"rhs"`` (``"ones"``,
``"random"`` or a Matrix Market path) and ``"r_factor"`` (a stored ``R``
written by an earlier ``precond-report``, reused instead of refactoring).
The matrix block uses the same layout as a sweep entry.  ``spectrum``
reads ``{"model": {...SpectrumModel fields...}}``.

Exit codes: 0 on success (per-cell sweep failures are reported, not
fatal), 1 on harness errors, 2 on invalid configuration or input files.
"""

import argparse
import json
import os
import sys

import numpy as np
import scipy.linalg as sla

from . import __version__
from ._random import stream
from .bench import DENSE_CAP, SpectrumModel, _fresh_op, _load_matrix, exact_cond, run_experiment
from .errors import ConfigurationError, DimensionError, ParseError
from .io import read_dense_matrix_market, write_csv, write_json, write_matrix_market
from .operators import ShiftedOperator
from .orthogonalization import DeflationBasis
from .solvers import SolveConfig, _prepare, form_test_matrix, solve_with_preconditioner


def _load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, path=path) from exc


def _override_seed(cfg, seed):
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _rhs(spec, n, seed):
    if spec is None or spec == "random":
        return stream(seed, 0xB).standard_normal(n)
    if spec == "ones":
        return np.ones(n)
    b = read_dense_matrix_market(spec).ravel()
    if b.size != n:
        raise DimensionError(f"right-hand side has length {b.size}, expected {n}")
    return b


def _setup(cfg, args):
    """Shared part of ``solve`` and ``precond-report``."""
    if "matrix" not in cfg:
        raise ConfigurationError("config needs a 'matrix' block")
    cap = args.dense_cap
    mat = _load_matrix(cfg["matrix"], cap)
    A = _fresh_op(mat)
    mu = float(cfg.get("mu", cfg["matrix"].get("mu", 0.0)))
    solve = dict(cfg.get("solve", {}))
    if args.seed is not None:
        solve["seed"] = args.seed
    config = SolveConfig.from_dict(solve)
    op_mu = ShiftedOperator(A, mu)
    omega = form_test_matrix(A, A.n, config)
    basis = None
    if cfg.get("r_factor"):
        R = read_dense_matrix_market(cfg["r_factor"])
        if R.shape != (config.l, config.l):
            raise DimensionError(f"stored R has shape {R.shape}, expected {(config.l, config.l)}")
        # one block product replaces the factorization
        Q = sla.solve_triangular(R, op_mu.matmat(omega).T, trans="T", lower=False).T
        basis = DeflationBasis(omega, R, mode="explicit", q_factor=Q, orth="loaded")
    P = _prepare(config, op_mu, omega=omega, basis=basis)
    return mat, A, mu, config, op_mu, P


def _cmd_solve(args):
    cfg = _load_config(args.config)
    mat, A, mu, config, op_mu, P = _setup(cfg, args)
    b = _rhs(cfg.get("rhs"), A.n, config.seed)
    x, report = solve_with_preconditioner(config, P, op_mu, b)
    report.matvecs_A = A.matvecs
    report.extra.update({"tau": P.tau, "rho": P.rho, "build_matvecs": P.build_matvecs})
    out = {"config": cfg, "report": report.to_dict(), "preconditioner": P.metadata()}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "report.json"), out)
        report.write_trace_csv(os.path.join(args.out, "trace.csv"))
        write_matrix_market(os.path.join(args.out, "x.mtx"), x.reshape(-1, 1))
    print(f"iters={report.iters} converged={report.converged} "
          f"rel_residual={report.residual_history[-1]:.3e} matvecs={report.matvecs_A}")
    return 0


def _cmd_precond_report(args):
    cfg = _load_config(args.config)
    mat, A, mu, config, op_mu, P = _setup(cfg, args)
    meta = P.metadata()
    dense = mat.get("dense")
    if dense is not None and A.n <= args.dense_cap:
        meta["cond_exact"] = exact_cond(dense, mu, P, args.dense_cap)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "precond.json"), {"config": cfg, "preconditioner": meta})
        if P.engine is not None:
            write_matrix_market(os.path.join(args.out, "R.mtx"), P.engine.basis.r,
                                comment=f"R factor, l={config.l} seed={config.seed}")
    print(json.dumps({k: meta[k] for k in ("kind", "tau", "rho", "build_matvecs", "cond_exact")
                      if k in meta}))
    return 0


def _cmd_sweep(args):
    cfg = _override_seed(_load_config(args.config), args.seed)
    report = run_experiment(cfg, out_dir=args.out, threads=args.threads, dense_cap=args.dense_cap)
    print(f"cells={len(report.rows)} errors={len(report.errors)}")
    for row in report.errors:
        print(f"  {row['matrix']} {row['kind']} l={row['l']} q={row['q']} seed={row['seed']}: "
              f"{row['error']}", file=sys.stderr)
    return 0


def _cmd_spectrum(args):
    cfg = _load_config(args.config)
    model = dict(cfg.get("model", cfg))
    if args.seed is not None:
        model["seed"] = args.seed
    lam = SpectrumModel.from_dict(model).eigenvalues()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "spectrum.csv"),
                  [{"index": i + 1, "eigenvalue": float(v)} for i, v in enumerate(lam)],
                  ("index", "eigenvalue"))
    else:
        for v in lam:
            print(repr(float(v)))
    return 0


COMMANDS = {
    "solve": (_cmd_solve, "solve one shifted system"),
    "sweep": (_cmd_sweep, "run a grid experiment and write cells.csv and report.json"),
    "spectrum": (_cmd_spectrum, "emit the eigenvalues of a synthetic spectrum model"),
    "precond-report": (_cmd_precond_report, "build a preconditioner and report diagnostics"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="randrand", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--dense-cap", type=int, default=DENSE_CAP,
                       help="largest n for dense oracles (default %(default)s)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command][0](args)
    except (ConfigurationError, ParseError, DimensionError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a harness failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
