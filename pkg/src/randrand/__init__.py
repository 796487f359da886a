"""Randomized range-deflation preconditioners for shifted symmetric systems.

Solves ``(A + mu I) x = b`` with CG or MINRES, preconditioned by deflating
the range of ``A_mu Omega`` for a random test matrix ``Omega``.
"""

__version__ = "0.1.0"

from .errors import BreakdownError, ConfigurationError, DimensionError, NotPositiveDefiniteError, ParseError
from .operators import (
    LinearOperatorSpec,
    ShiftedOperator,
    dense_operator,
    diagonal_operator,
    estimate_spectral_norm,
    gram_product_operator,
    power_iteration,
    subspace_iterate,
    zero_operator,
)
from .sketching import SketchOp, check_epsilon_embedding, draw_sketch, fwht, sketch_apply
from .orthogonalization import (
    DeflationBasis,
    build_basis,
    build_recycle_pack,
    basis_from_pack,
    explicit_qr,
    orthogonality_measure,
    qless_chol_qr,
    qless_precond_chol_qr,
)
from .projectors import ProjectionEngine, ainv_project, newton_sketch_lstsq, project
from .preconditioners import (
    NormEstimates,
    Preconditioner,
    TauPolicy,
    apply_preconditioned_operator,
    apply_preconditioner,
    build_nystrom_baseline,
    build_preconditioner,
    cond_bound,
    recover_solution,
    select_tau,
)
from .solvers import (
    SolveConfig,
    SolveReport,
    adaptive_sketch_dim,
    cg,
    iteration_bound_report,
    minres,
    multi_shift_solve,
    randrand_solve,
    solve_with_preconditioner,
)
from .bench import SpectrumModel, exact_cond, gen_spectrum, rbf_kernel_operator, run_experiment

__all__ = [name for name in dir() if not name.startswith("_")]
