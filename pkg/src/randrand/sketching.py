"""Oblivious subspace embeddings with deterministic, keyed seeding.

Five families are provided: dense Gaussian, subsampled randomized Hadamard
transform (SRHT) with zero padding, sparse sign embeddings, two-level
compositions (a Gaussian map applied after a sparse or SRHT map) and
uniform column sampling.  A :class:`SketchOp` is immutable; its random
parts are generated once, keyed by ``(seed, index)`` so that the same
parameters always give bit-identical matrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._random import derive_seed, stream
from .errors import ConfigurationError, DimensionError

KINDS = ("gaussian", "srht", "sparse", "multilevel", "column_sample")

# stream tags, fixed so that draws are reproducible across versions
_TAG_SIGNS = 1
_TAG_ROWS = 2
_TAG_SAMPLE = 3
_TAG_PROBE = 4


def _next_pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def _log2_ceil(n):
    return int(math.ceil(math.log2(max(n, 2))))


def gaussian_rows(seed, n, start, stop):
    """Rows ``start:stop`` of an unscaled standard Gaussian sketch.

    Row ``i`` is drawn from its own stream keyed by ``(seed, i)``, so a
    sketch can be extended with new rows without touching old ones.
    """
    out = np.empty((stop - start, n))
    for r, i in enumerate(range(start, stop)):
        out[r] = stream(seed, i).standard_normal(n)
    return out


@dataclass(frozen=True, eq=False)
class SketchOp:
    """A random embedding ``X`` of shape ``(l, n)``.

    Attributes
    ----------
    kind : str
        One of ``gaussian``, ``srht``, ``sparse``, ``multilevel`` or
        ``column_sample``.
    l, n : int
        Number of rows and ambient dimension.
    seed : int
        Seed the random parts were drawn from.
    gamma : int or None
        Nonzeros per column for sparse sketches.
    inner : SketchOp or None
        First-level map of a multilevel sketch.
    padded_len : int or None
        Hadamard size ``s`` for SRHT, the smallest power of two ``>= n``.
    """

    kind: str
    l: int
    n: int
    seed: int
    gamma: int = None
    inner: "SketchOp" = None
    padded_len: int = None
    _data: dict = field(default_factory=dict, repr=False)

    @property
    def shape(self):
        return (self.l, self.n)

    def materialize(self):
        """Dense ``l x n`` array of the sketch."""
        return _apply_X(self, np.eye(self.n))

    def to_dict(self):
        d = {"kind": self.kind, "l": self.l, "n": self.n, "seed": self.seed}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        if self.inner is not None:
            d["inner"] = self.inner.to_dict()
        if self.padded_len is not None:
            d["padded_len"] = self.padded_len
        return d


def draw_sketch(kind, l, n, seed=0, params=None):
    """Draw a sketch of the given family.

    ``params`` may hold ``gamma`` (sparse nonzeros per column), and for
    multilevel sketches ``l1`` (rows of the inner map), ``inner_kind``
    (``sparse`` or ``srht``) and ``gamma``.
    """
    params = dict(params or {})
    l, n, seed = int(l), int(n), int(seed)
    if kind not in KINDS:
        raise ConfigurationError(f"unknown sketch kind {kind!r}")
    if l < 1 or n < 1:
        raise ConfigurationError("sketch dimensions must be positive")

    if kind == "gaussian":
        if l > n:
            raise ConfigurationError(f"gaussian sketch needs l <= n, got l={l}, n={n}")
        X = gaussian_rows(seed, n, 0, l) / np.sqrt(l)
        return SketchOp(kind, l, n, seed, _data={"dense": X})

    if kind == "column_sample":
        if l > n:
            raise ConfigurationError(f"column sampling needs l <= n, got l={l}, n={n}")
        idx = stream(seed, _TAG_SAMPLE).choice(n, size=l, replace=False)
        return SketchOp(kind, l, n, seed, _data={"rows": np.sort(idx)})

    if kind == "srht":
        s = _next_pow2(n)
        if l > s:
            raise ConfigurationError(f"srht sketch needs l <= {s}, got l={l}")
        signs = stream(seed, _TAG_SIGNS).choice(np.array([-1.0, 1.0]), size=s)
        rows = np.sort(stream(seed, _TAG_ROWS).choice(s, size=l, replace=False))
        return SketchOp(kind, l, n, seed, padded_len=s, _data={"signs": signs, "rows": rows})

    if kind == "sparse":
        gamma = params.get("gamma")
        if gamma is None:
            gamma = min(l, _log2_ceil(n))
        gamma = int(gamma)
        if gamma < 1:
            raise ConfigurationError("gamma must be at least 1")
        if gamma > l:
            raise ConfigurationError(f"gamma={gamma} exceeds the number of rows l={l}")
        return SketchOp(kind, l, n, seed, gamma=gamma, _data={"mat": _sparse_matrix(seed, l, n, gamma)})

    # multilevel
    l1 = params.get("l1")
    if l1 is None:
        l1 = min(n, int(math.ceil(l * math.log2(max(n, 2)))))
    l1 = int(l1)
    if l1 < l:
        raise ConfigurationError(f"inner sketch rows l1={l1} must be at least l={l}")
    inner_kind = params.get("inner_kind", "sparse")
    if inner_kind not in ("sparse", "srht"):
        raise ConfigurationError("multilevel inner sketch must be sparse or srht")
    inner_params = {}
    if inner_kind == "sparse":
        inner_params["gamma"] = params.get("gamma", min(l1, _log2_ceil(n)))
    inner = draw_sketch(inner_kind, l1, n, derive_seed(seed, 1), inner_params)
    outer = draw_sketch("gaussian", l, l1, derive_seed(seed, 2))
    return SketchOp(kind, l, n, seed, gamma=inner.gamma, inner=inner, _data={"outer": outer})


def _sparse_matrix(seed, l, n, gamma):
    rows = np.empty(n * gamma, dtype=np.int64)
    vals = np.empty(n * gamma)
    scale = 1.0 / np.sqrt(gamma)
    for j in range(n):
        g = stream(seed, j)
        rows[j * gamma:(j + 1) * gamma] = g.choice(l, size=gamma, replace=False)
        vals[j * gamma:(j + 1) * gamma] = np.where(g.random(gamma) < 0.5, -scale, scale)
    indptr = np.arange(0, n * gamma + 1, gamma)
    return sp.csc_matrix((vals, rows, indptr), shape=(l, n))


def fwht(v):
    """Unnormalized fast Walsh-Hadamard transform along the first axis.

    The length must be a power of two.  A float64 ndarray argument is
    overwritten with its transform; the transformed array is returned in
    every case.  Applying the transform twice multiplies by the length.
    """
    arr = np.asarray(v, dtype=np.float64)
    s = arr.shape[0] if arr.ndim else 0
    if s < 1 or s & (s - 1):
        raise DimensionError(f"fwht needs a power-of-two length, got {s}")
    rest = arr.shape[1:]
    x = arr.reshape(s, -1).copy()
    h = 1
    while h < s:
        x = x.reshape(-1, 2, h, x.shape[-1])
        a = x[:, 0] + x[:, 1]
        b = x[:, 0] - x[:, 1]
        x = np.stack((a, b), axis=1).reshape(s, -1)
        h *= 2
    x = x.reshape((s,) + rest)
    if isinstance(v, np.ndarray) and v.dtype == np.float64 and v.flags.writeable:
        v[...] = x
        return v
    return x


def _apply_X(S, M):
    """``X @ M`` for an ``n x k`` block ``M``."""
    kind = S.kind
    if kind == "gaussian":
        return S._data["dense"] @ M
    if kind == "column_sample":
        return M[S._data["rows"]].copy()
    if kind == "sparse":
        return np.asarray(S._data["mat"] @ M)
    if kind == "srht":
        s = S.padded_len
        Z = np.zeros((s, M.shape[1]))
        Z[:S.n] = S._data["signs"][:S.n, None] * M
        fwht(Z)
        return Z[S._data["rows"]] / np.sqrt(S.l)
    return _apply_X(S._data["outer"], _apply_X(S.inner, M))


def _apply_XT(S, W):
    """``X.T @ W`` for an ``l x k`` block ``W``."""
    kind = S.kind
    if kind == "gaussian":
        return S._data["dense"].T @ W
    if kind == "column_sample":
        out = np.zeros((S.n, W.shape[1]))
        out[S._data["rows"]] = W
        return out
    if kind == "sparse":
        return np.asarray(S._data["mat"].T @ W)
    if kind == "srht":
        Z = np.zeros((S.padded_len, W.shape[1]))
        Z[S._data["rows"]] = W / np.sqrt(S.l)
        fwht(Z)
        return S._data["signs"][:S.n, None] * Z[:S.n]
    return _apply_XT(S.inner, _apply_XT(S._data["outer"], W))


SIDES = ("left_X", "left_XT", "right_XT", "right_X")


def sketch_apply(S, M, side="left_X"):
    """Apply a sketch without materializing it (Gaussian sketches are dense).

    ``side`` selects the product: ``left_X`` gives ``X @ M``, ``left_XT``
    gives ``X.T @ M``, ``right_XT`` gives ``M @ X.T`` and ``right_X`` gives
    ``M @ X``.  Vectors are treated as single columns (or rows for the
    right-hand products) and returned with the same dimensionality.
    """
    if side not in SIDES:
        raise ConfigurationError(f"unknown side {side!r}")
    M = np.asarray(M, dtype=np.float64)
    vec = M.ndim == 1
    if side.startswith("right"):
        M2 = M[None, :] if vec else M
        inner_dim = S.n if side == "right_XT" else S.l
        if M2.shape[1] != inner_dim:
            raise DimensionError(f"expected {inner_dim} columns, got {M2.shape[1]}")
        out = (_apply_X(S, M2.T) if side == "right_XT" else _apply_XT(S, M2.T)).T
        return out[0] if vec else out
    M2 = M[:, None] if vec else M
    inner_dim = S.n if side == "left_X" else S.l
    if M2.ndim != 2 or M2.shape[0] != inner_dim:
        raise DimensionError(f"expected {inner_dim} rows, got shape {M.shape}")
    out = _apply_X(S, M2) if side == "left_X" else _apply_XT(S, M2)
    return out[:, 0] if vec else out


@dataclass
class EmbeddingCheck:
    """Outcome of an empirical embedding test.

    ``passed`` holds when every sampled ratio lies in
    ``[1 - epsilon, 1 + epsilon]``; ``observed`` is the largest deviation
    ``|ratio - 1|`` seen.
    """

    epsilon: float
    passed: bool
    sampled_ratios: list
    observed: float


def check_epsilon_embedding(theta, B, trials=100, seed=0, epsilon=0.5):
    """Sample ``||theta B z||^2 / ||B z||^2`` over random unit vectors ``z``."""
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    Z = stream(seed, _TAG_PROBE).standard_normal((B.shape[1], int(trials)))
    Z /= np.linalg.norm(Z, axis=0)
    BZ = B @ Z
    den = np.sum(BZ * BZ, axis=0)
    keep = den > 0
    if isinstance(theta, SketchOp):
        TBZ = _apply_X(theta, BZ[:, keep])
    else:
        TBZ = np.asarray(theta) @ BZ[:, keep]
    ratios = np.sum(TBZ * TBZ, axis=0) / den[keep]
    observed = float(np.max(np.abs(ratios - 1.0))) if ratios.size else 0.0
    passed = bool(np.all((ratios >= 1.0 - epsilon) & (ratios <= 1.0 + epsilon)))
    return EmbeddingCheck(float(epsilon), passed, ratios.tolist(), observed)
