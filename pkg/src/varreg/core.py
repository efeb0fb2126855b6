"""Vectors, linear forward maps and basic numerical certificates.

Model and data space are finite-dimensional Euclidean spaces; vectors are
plain 1-d float64 arrays validated at the API boundary.  Quadrature weights
for weighted data norms are folded into operator rows (see
:mod:`varreg.operators`), so every inner product in this module is the plain
Euclidean one.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "LinearForwardMap",
    "adjoint_consistency_check",
    "as_vector",
    "identity_map",
    "inner",
    "norm",
    "operator_norm_estimate",
    "substream",
]


class DimensionMismatchError(ValueError):
    """Raised when vector or operator dimensions disagree."""


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a finite 1-d float64 array, checking its dimension."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise DimensionMismatchError(f"{name} has dimension {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def inner(a, b) -> float:
    """Euclidean inner product; dimensions must match exactly."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"inner product of shapes {a.shape} and {b.shape}")
    return float(np.dot(a, b))


def norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float)))


class LinearForwardMap:
    """A linear operator together with its adjoint.

    Parameters
    ----------
    apply_fn, adjoint_fn : callables mapping 1-d arrays to 1-d arrays.
    in_dim, out_dim : dimensions of model and data space.
    matrix : optional dense or scipy.sparse backing matrix.  Purely an
        implementation detail used for fast row sampling; the public contract
        is ``apply``/``adjoint``.
    """

    def __init__(self, apply_fn, adjoint_fn, in_dim: int, out_dim: int, matrix=None):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError("operator dimensions must be positive")
        self._apply = apply_fn
        self._adjoint = adjoint_fn
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.matrix = matrix

    def apply(self, u) -> np.ndarray:
        u = as_vector(u, self.in_dim, "model vector")
        return np.asarray(self._apply(u), dtype=float)

    def adjoint(self, v) -> np.ndarray:
        v = as_vector(v, self.out_dim, "data vector")
        return np.asarray(self._adjoint(v), dtype=float)

    def __call__(self, u) -> np.ndarray:
        return self.apply(u)

    def __repr__(self):  # pragma: no cover - cosmetic
        return f"LinearForwardMap({self.out_dim}x{self.in_dim})"


def identity_map(dim: int) -> LinearForwardMap:
    eye = np.eye(dim)
    return LinearForwardMap(lambda u: u.copy(), lambda v: v.copy(), dim, dim, matrix=eye)


def adjoint_consistency_check(op: LinearForwardMap, trials: int = 32, seed: int = 0) -> float:
    """Max relative defect |<Fu, v> - <u, F*v>| / (||u|| ||v||) over random pairs.

    A correct adjoint gives values at roundoff level; a wrong adjoint shows up
    as an O(1) defect.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.in_dim)
        v = rng.standard_normal(op.out_dim)
        defect = abs(inner(op.apply(u), v) - inner(u, op.adjoint(v)))
        worst = max(worst, defect / (norm(u) * norm(v)))
    return worst


def operator_norm_estimate(op: LinearForwardMap, iters: int = 200, seed: int = 0) -> float:
    """Largest singular value of ``op`` by power iteration on F*F.

    Returns the Rayleigh estimate ||F x|| for the final unit iterate, which is
    nondecreasing in ``iters`` and never exceeds the true norm.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.in_dim)
    nx = norm(x)
    if nx == 0.0:  # pragma: no cover - measure-zero draw
        return 0.0
    x /= nx
    for _ in range(iters):
        w = op.adjoint(op.apply(x))
        nw = norm(w)
        if nw == 0.0:
            # x is in the kernel of F*F, hence of F
            return 0.0
        x = w / nw
    return norm(op.apply(x))


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Named, reproducible RNG substream derived from a single top-level seed.

    Streams with distinct (name, index) pairs are statistically independent;
    the mapping is stable across runs and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key, int(index)))
    return np.random.default_rng(ss)
