"""Finite-dimensional Hilbert-space primitives.

Vectors are plain 1-D ``numpy`` arrays with the Euclidean inner product.
This module provides the two structures everything else is built from:
linear maps carrying an explicit adjoint, and orthogonal projectors onto
closed vector subspaces.  Both are matrix-free (functions), so sparse or
structured operators cost what their ``forward`` costs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "inner",
    "norm",
    "hybrid_close",
    "LinearMap",
    "SubspaceProjector",
    "OpNormEstimate",
    "op_norm",
]


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean inner product of two vectors of equal dimension."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def norm(x: np.ndarray) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(np.asarray(x).ravel()))


def hybrid_close(a, b, tol: float = 1e-10) -> bool:
    """Absolute-relative comparison: ``|a-b| <= tol * (1 + |a| + |b|)``.

    Works on scalars and arrays (then all entries must satisfy the bound
    with the norms of the arrays on the right-hand side).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = 1.0 + np.linalg.norm(a.ravel()) + np.linalg.norm(b.ravel())
    return bool(np.linalg.norm((a - b).ravel()) <= tol * scale)


@dataclass(frozen=True)
class LinearMap:
    """A bounded linear map with an explicit adjoint.

    Parameters
    ----------
    forward : callable
        Action ``x -> L x`` on 1-D arrays of length ``domain_dim``.
    adjoint : callable
        Action ``y -> L* y`` on 1-D arrays of length ``codomain_dim``.
        Must satisfy ``<L x, y> == <x, L* y>``.
    domain_dim, codomain_dim : int
        Dimensions of domain and codomain.
    norm_bound : float, optional
        Cached estimate of the operator norm, if already known.
    """

    forward: Callable[[np.ndarray], np.ndarray]
    adjoint: Callable[[np.ndarray], np.ndarray]
    domain_dim: int
    codomain_dim: int
    norm_bound: float | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "LinearMap":
        mat = np.asarray(mat, dtype=float)
        m, n = mat.shape
        return cls(
            forward=lambda x: mat @ x,
            adjoint=lambda y: mat.T @ y,
            domain_dim=n,
            codomain_dim=m,
        )

    @classmethod
    def identity(cls, dim: int) -> "LinearMap":
        return cls(
            forward=lambda x: x,
            adjoint=lambda y: y,
            domain_dim=dim,
            codomain_dim=dim,
            norm_bound=1.0,
        )

    @classmethod
    def zero(cls, domain_dim: int, codomain_dim: int) -> "LinearMap":
        return cls(
            forward=lambda x: np.zeros(codomain_dim),
            adjoint=lambda y: np.zeros(domain_dim),
            domain_dim=domain_dim,
            codomain_dim=codomain_dim,
            norm_bound=0.0,
        )


@dataclass(frozen=True)
class SubspaceProjector:
    """Orthogonal projector onto a closed vector subspace of ``R^dim``.

    ``project`` must be idempotent and self-adjoint; the projector onto the
    orthogonal complement is ``x - P(x)`` (see :meth:`complement`).
    """

    project: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of shape ({self.dim},), got {x.shape}")
        return self.project(x)

    def complement(self, x: np.ndarray) -> np.ndarray:
        """Projection onto the orthogonal complement of the range."""
        return x - self(x)

    @classmethod
    def identity(cls, dim: int) -> "SubspaceProjector":
        return cls(project=lambda x: x, dim=dim)

    @classmethod
    def zero(cls, dim: int) -> "SubspaceProjector":
        return cls(project=lambda x: np.zeros(dim), dim=dim)

    @classmethod
    def from_basis(cls, basis: np.ndarray) -> "SubspaceProjector":
        """Projector onto the span of the columns of ``basis``."""
        basis = np.atleast_2d(np.asarray(basis, dtype=float))
        if basis.ndim != 2:
            raise ValueError("basis must be a 2-D array of columns")
        q, r = np.linalg.qr(basis)
        # drop dependent columns so that Q has orthonormal columns
        keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
        q = q[:, keep]
        return cls(project=lambda x, q=q: q @ (q.T @ x), dim=basis.shape[0])


class OpNormEstimate(NamedTuple):
    """Result of power iteration: the estimate never exceeds the true norm."""

    value: float
    converged: bool
    iterations: int

    def __float__(self) -> float:
        return self.value


def op_norm(L: LinearMap, max_iters: int = 500, tol: float = 1e-10) -> OpNormEstimate:
    """Estimate the operator norm of ``L`` by power iteration on ``L* L``.

    The returned value is a Rayleigh-quotient estimate, hence a lower bound
    on ``||L||``; on convergence it is within ``tol`` (relative) of the
    dominant singular value.  If the iteration budget is exhausted before
    the estimate settles, the best value seen is returned with
    ``converged=False``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(0)
    v = rng.standard_normal(L.domain_dim)
    nv = np.linalg.norm(v)
    if nv == 0.0:  # pragma: no cover - zero-dimensional corner
        return OpNormEstimate(0.0, True, 0)
    v /= nv
    sigma = 0.0
    for k in range(1, max_iters + 1):
        w = L.adjoint(L(v))
        lam = float(np.dot(v, w))  # Rayleigh quotient of L*L, >= 0
        new_sigma = np.sqrt(max(lam, 0.0))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return OpNormEstimate(0.0, True, k)
        if abs(new_sigma - sigma) <= tol * max(1.0, new_sigma):
            return OpNormEstimate(new_sigma, True, k)
        sigma = new_sigma
        v = w / nw
    return OpNormEstimate(sigma, False, max_iters)
