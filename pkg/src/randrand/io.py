"""Reading and writing operators, factors, point clouds and reports."""

import csv
import json
import os

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ParseError
from .operators import LinearOperatorSpec, dense_operator


def read_matrix_market(path, definiteness=None):
    """Load a Matrix Market file as an operator.

    Sparse inputs stay sparse; symmetry is taken from the file header
    (``symmetric`` entries are expanded by the reader).  ``definiteness``
    defaults to ``"spd"`` for symmetric files, since the solvers here
    target shifted spd systems; pass ``"symmetric-indefinite"`` otherwise.
    """
    try:
        info = scipy.io.mminfo(path)
        M = scipy.io.mmread(path)
    except (ValueError, OSError, IndexError) as exc:
        raise ParseError(str(exc), path=path) from exc
    rows, cols = info[0], info[1]
    if rows != cols:
        raise ParseError(f"matrix is {rows} x {cols}, expected square", path=path)
    symmetric = info[5] == "symmetric"
    if not sp.issparse(M):
        return dense_operator(np.asarray(M, dtype=np.float64), symmetric=symmetric or None,
                              definiteness=definiteness, name=os.path.basename(path))
    M = sp.csr_matrix(M, dtype=np.float64)
    if not symmetric:
        symmetric = (abs(M - M.T) > 1e-14 * abs(M).max()).nnz == 0
    if definiteness is None:
        definiteness = "spd" if symmetric else "general"
    MT = M.T.tocsr()
    op = LinearOperatorSpec(rows, lambda v: M @ v, symmetric=symmetric, definiteness=definiteness,
                            apply_t=lambda v: MT @ v, apply_block=lambda V: M @ V,
                            apply_t_block=lambda V: MT @ V, name=os.path.basename(path))
    op.sparse = M
    return op


def write_matrix_market(path, M, comment=""):
    """Write a dense or sparse matrix (e.g. an ``R`` factor) in Matrix Market format."""
    if not sp.issparse(M):
        M = np.asarray(M, dtype=np.float64)
    scipy.io.mmwrite(path, M, comment=comment)


def read_dense_matrix_market(path):
    """Load a Matrix Market file as a dense array (e.g. a stored ``R``)."""
    M = scipy.io.mmread(path)
    return np.asarray(M.toarray() if sp.issparse(M) else M, dtype=np.float64)


def _is_float(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_points(path):
    """Read a whitespace-separated point cloud, one point per line.

    Blank lines and lines starting with ``#`` are skipped.  A trailing
    non-numeric column is treated as a label and ignored.  Every point
    must have the same number of coordinates.
    """
    pts = []
    dim = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if not _is_float(toks[-1]) and len(toks) > 1:
                toks = toks[:-1]
            bad = [t for t in toks if not _is_float(t)]
            if bad:
                raise ParseError(f"non-numeric coordinate {bad[0]!r}", line=lineno, path=path)
            if dim is None:
                dim = len(toks)
            elif len(toks) != dim:
                raise ParseError(f"expected {dim} coordinates, found {len(toks)}", line=lineno, path=path)
            pts.append([float(t) for t in toks])
    if not pts:
        raise ParseError("no points found", path=path)
    return np.array(pts)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def write_csv(path, rows, headers):
    """Write dictionaries as CSV with a fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(headers), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in headers})
