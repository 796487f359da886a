# %% [markdown]
# # Indefinite systems and the command line
#
# Flipping a few eigenvalues and shifting by a negative `mu` gives a
# symmetric indefinite system.  The generalized preconditioner (kind `g`)
# is spd, so MINRES still applies.  We compare a sketch of size `2l`
# against size `l` with one power step, which costs the same number of
# products with `A`.

# %%
import json
import os
import tempfile

import numpy as np

from randrand import SolveConfig, SpectrumModel, build_basis, build_preconditioner, exact_cond, gen_spectrum
from randrand.operators import ShiftedOperator, dense_operator
from randrand.projectors import ProjectionEngine
from randrand.solvers import form_test_matrix

model = SpectrumModel(500, tail_law=("poly", 0.25), flip_signs=(21, 25), seed=9)
A, lam = gen_spectrum(model)
mu = -100.0
print("negative eigenvalues of A_mu:", int(np.sum(lam + mu < 0)))

def g_cond(l, q, seed=0):
    op = ShiftedOperator(dense_operator(A, symmetric=True, definiteness="symmetric-indefinite"), mu)
    omega = form_test_matrix(op.base, 500, SolveConfig(l=l, q=q, seed=seed))
    P = build_preconditioner("g", ProjectionEngine(build_basis(op, omega), op), op)
    return exact_cond(A, mu, P)

print("unpreconditioned sigma-cond", f"{exact_cond(A, mu):.3g}")
for l in (15, 30, 60):
    print(f"l={l:3d}: q=0 with 2l columns {g_cond(2 * l, 0):8.3g}   q=1 with l columns {g_cond(l, 1):8.3g}")

# %% [markdown]
# ## The same experiment from the command line
#
# `randrand sweep` takes a JSON grid and writes one CSV row per cell.

# %%
from randrand.cli import main

work = tempfile.mkdtemp()
cfg = {
    "matrices": [{"name": "flipped", "mu": mu,
                  "model": {"n": 300, "tail_law": ["poly", 0.25], "flip_signs": [21, 25]}}],
    "methods": [{"kind": "g"}],
    "l": [20, 40], "q": [0, 1], "seeds": [0, 1],
}
path = os.path.join(work, "sweep.json")
with open(path, "w") as fh:
    json.dump(cfg, fh)
main(["sweep", "--config", path, "--out", os.path.join(work, "out")])
with open(os.path.join(work, "out", "cells.csv")) as fh:
    for line in fh.read().splitlines()[:5]:
        print(line)
