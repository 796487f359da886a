# %% [markdown]
# # Deflating the top of a spectrum
#
# A shifted spd system `(A + mu I) x = b` whose matrix has a few huge
# eigenvalues and a slowly decaying tail is hard for plain MINRES.  Here we
# deflate `range(A_mu Omega)` for a Gaussian test matrix `Omega` and look at
# what happens to the condition number and the iteration count.

# %%
import numpy as np

from randrand import SolveConfig, SpectrumModel, exact_cond, gen_spectrum, randrand_solve
from randrand.operators import ShiftedOperator, dense_operator
from randrand.solvers import solve_with_preconditioner

model = SpectrumModel(600, head_count=20, head_top=1e6, tail_law=("poly", 0.5), seed=0)
A, lam = gen_spectrum(model)
mu = 1e-3
print(f"largest {lam[0]:.1e}, smallest {lam[-1]:.1e}, cond(A_mu) = {(lam[0] + mu) / (lam[-1] + mu):.2e}")

# %% [markdown]
# ## Building preconditioners
#
# `randrand_solve` draws the sketch, builds the basis and the preconditioner
# and runs the restarted solve.  For the dense oracles we rebuild the same
# preconditioners by hand (same seed, same test matrix).

# %%
from randrand import build_basis, build_preconditioner, ProjectionEngine
from randrand.solvers import form_test_matrix

def preconditioner(kind, l, q=0):
    op = ShiftedOperator(dense_operator(A, symmetric=True, definiteness="spd"), mu)
    cfg = SolveConfig(precond_kind=kind, l=l, q=q)
    omega = form_test_matrix(op.base, A.shape[0], cfg)
    engine = ProjectionEngine(build_basis(op, omega), op)
    return build_preconditioner(kind, engine, op), op

print("unpreconditioned", f"{exact_cond(A, mu):.2e}")
for kind in ("r_right", "c"):
    for l in (10, 20, 40, 80):
        P, _ = preconditioner(kind, l)
        print(f"{kind:8s} l={l:3d} tau={P.tau:.3g} cond={exact_cond(A, mu, P):.3g}")

# %% [markdown]
# The first twenty eigenvalues span six decades, so with `l = 10` the
# deflation cannot remove the whole head; from `l = 20` on the condition
# number falls to the tail's own spread.

# %% [markdown]
# ## Iteration counts

# %%
x_star = np.random.default_rng(1).standard_normal(600)
b = A @ x_star + mu * x_star

cfg = SolveConfig(precond_kind="r_right", l=40, tol=1e-10, max_iters=3000)
x, rep = randrand_solve(cfg, dense_operator(A, symmetric=True, definiteness="spd"), mu, b)
print(f"r_right: {rep.iters} iterations, {len(rep.restarts)} restarts, {rep.matvecs_A} products with A")

op = ShiftedOperator(dense_operator(A, symmetric=True, definiteness="spd"), mu)
_, plain = solve_with_preconditioner(cfg, None, op, b)
print(f"plain:   {plain.iters} iterations, converged={plain.converged}")
print("error of the preconditioned solution:", np.linalg.norm(x - x_star) / np.linalg.norm(x_star))

# %% [markdown]
# ## Subspace iteration
#
# With `q = 1` the test matrix is `A X^T`, which leans towards the top
# eigenvectors.  It pays off once `l` sits where the spectrum has stopped
# decaying quickly.

# %%
for q in (0, 1):
    P, _ = preconditioner("c", 40, q)
    print(f"c, l=40, q={q}: cond={exact_cond(A, mu, P):.3g}")
