"""Closed-form proximity operators and projections used by the benchmarks.

All operators act on ``numpy`` arrays and are pure functions.  Projections
onto product sets are vectorised: a leading scenario axis or a trailing
batch axis is accepted wherever the underlying set is a product over that
axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .hilbert import SubspaceProjector

__all__ = [
    "soft_threshold",
    "prox_conj_scaled_quadratic",
    "kernel_projector",
    "project_simplex_mass",
    "project_theta",
    "project_capacity_consensus",
    "project_nonanticipativity",
    "project_demand_centering",
    "project_cone",
    "prox_kinetic_cell",
]


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    """Componentwise shrinkage ``sign(x_i) * max(|x_i| - tau, 0)``.

    This is the proximity operator of ``tau * ||.||_1``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def prox_conj_scaled_quadratic(x: np.ndarray, gamma: float, b: np.ndarray, s: float = 1.0) -> np.ndarray:
    """Prox of the conjugate of ``g = (s/2) * ||. - b||^2`` at step ``gamma``.

    Returns ``s (x - gamma b) / (gamma + s)``, which is
    ``prox_{gamma g*}(x)`` by the Moreau identity.  ``s=1`` and ``s=2``
    cover the two least-squares data terms used by the LASSO benchmark.
    """
    if gamma <= 0 or s <= 0:
        raise ValueError("gamma and s must be positive")
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.shape != b.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {b.shape}")
    return s * (x - gamma * b) / (gamma + s)


def kernel_projector(R: np.ndarray) -> SubspaceProjector:
    """Orthogonal projector onto ``ker R`` for a full-row-rank matrix ``R``.

    The Gram matrix ``R R^T`` is Cholesky-factorised once and reused for
    every application, so each projection costs two thin matrix-vector
    products and one triangular solve:

        P x = x - R^T (R R^T)^{-1} R x.

    Raises ``ValueError`` if the rows of ``R`` are linearly dependent.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.linalg.matrix_rank(R) < R.shape[0]:
        raise ValueError("rows of R are linearly dependent (R R^T not invertible)")
    factor = scipy.linalg.cho_factor(R @ R.T)

    def project(x: np.ndarray, R=R, factor=factor) -> np.ndarray:
        return x - R.T @ scipy.linalg.cho_solve(factor, R @ x)

    return SubspaceProjector(project=project, dim=R.shape[1])


def project_simplex_mass(f: np.ndarray, mass) -> np.ndarray:
    """Nearest point of ``{x >= 0, sum(x) = mass}`` by sort-and-threshold.

    Parameters
    ----------
    f : array, shape (k,) or (..., k)
        Point(s) to project; the simplex acts along the last axis.
    mass : nonnegative float or array broadcastable to ``f.shape[:-1]``
        Total mass of each simplex.  ``mass = 0`` degenerates the set to
        the origin and returns zeros.
    """
    f = np.asarray(f, dtype=float)
    single = f.ndim == 1
    pts = f[None, :] if single else f.reshape(-1, f.shape[-1])
    masses = np.broadcast_to(np.asarray(mass, dtype=float), f.shape[:-1]).reshape(-1)
    if np.any(masses < 0):
        raise ValueError("mass must be nonnegative")

    k = pts.shape[1]
    u = -np.sort(-pts, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, k + 1, dtype=float)
    positive = np.where(masses[:, None] > 0, u - (css - masses[:, None]) / j > 0, False)
    rho = np.maximum(positive.sum(axis=1), 1)
    theta = (np.take_along_axis(css, rho[:, None] - 1, axis=1)[:, 0] - masses) / rho
    out = np.maximum(pts - theta[:, None], 0.0)
    out[masses == 0] = 0.0
    return out.reshape(f.shape)


def project_theta(x, u, c):
    """Projection onto ``{(x, u) : u - x <= c}`` for ``c >= 0``.

    Acts componentwise on arrays of matching shape: feasible pairs are
    fixed, the rest move to the nearest point of the boundary
    ``u - x = c``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    c = np.asarray(c, dtype=float)
    violated = u - x - c > 0
    px = np.where(violated, (x + u - c) / 2.0, x)
    pu = np.where(violated, (x + u + c) / 2.0, u)
    if px.ndim == 0:
        return float(px), float(pu)
    return px, pu


def project_capacity_consensus(y: np.ndarray, upper) -> np.ndarray:
    """Projection onto ``{y : y_1 = ... = y_S in [0, upper]}``.

    The scenario axis is the first one.  The projection replaces every
    scenario entry by the scenario mean clipped to ``[0, upper]`` (the
    middle value among 0, the mean, and the bound).
    """
    y = np.asarray(y, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= 0):
        raise ValueError("upper bound must be positive")
    mean = y.mean(axis=0, keepdims=True)
    return np.broadcast_to(np.clip(mean, 0.0, upper), y.shape).copy()


def project_nonanticipativity(x: np.ndarray) -> np.ndarray:
    """Replace every scenario block (axis 0) by the across-scenario mean."""
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(x.mean(axis=0, keepdims=True), x.shape).copy()


def project_demand_centering(f: np.ndarray, od_groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Center route flows to zero sum within each origin-destination group.

    ``f`` has routes on the last axis; ``od_groups`` must partition the
    route indices.  The result subtracts the group mean inside every group
    (per leading index), which is the orthogonal projection onto the
    subspace of group-wise zero-sum vectors.
    """
    f = np.asarray(f, dtype=float)
    n_routes = f.shape[-1]
    seen = sorted(i for g in od_groups for i in g)
    if any(len(g) == 0 for g in od_groups):
        raise ValueError("empty origin-destination group")
    if seen != list(range(n_routes)):
        raise ValueError("od_groups must partition the route indices exactly once")
    out = f.copy()
    for g in od_groups:
        idx = list(g)
        out[..., idx] -= out[..., idx].mean(axis=-1, keepdims=True)
    return out


def project_cone(w: np.ndarray) -> np.ndarray:
    """Projection onto ``C = [0,oo) x (-oo,0] x [0,oo) x (-oo,0]``.

    ``w`` stacks the four components along the first axis; any trailing
    shape is allowed (scalars per component, or grids).
    """
    w = np.asarray(w, dtype=float)
    if w.shape[0] != 4:
        raise ValueError("first axis must have length 4")
    out = np.empty_like(w)
    out[0] = np.maximum(w[0], 0.0)
    out[1] = np.minimum(w[1], 0.0)
    out[2] = np.maximum(w[2], 0.0)
    out[3] = np.minimum(w[3], 0.0)
    return out


def _kinetic_root(eta: np.ndarray, s: np.ndarray, gamma: float, k0: np.ndarray) -> np.ndarray:
    """Positive root of ``(p + gamma*k0 - eta)(p + gamma)^2 = gamma*s/2``.

    Vectorised safeguarded Newton: the cubic is negative at 0 and positive
    at ``hi = eta + s/(2 gamma) - gamma*k0 + gamma``, and strictly
    increasing on the bracket, so bisection fallbacks keep the iteration
    inside a shrinking interval.  Entries are resolved to ~1e-14 relative.
    """
    a = gamma * k0 - eta  # g(p) = (p + a)(p + gamma)^2 - gamma*s/2
    rhs = 0.5 * gamma * s
    lo = np.zeros_like(a)
    hi = -a + s / (2.0 * gamma) + gamma
    p = np.clip(np.maximum(eta, gamma), 1e-300, hi)

    def g(p):
        return (p + a) * (p + gamma) ** 2 - rhs

    def gp(p):
        return (p + gamma) * (3.0 * p + gamma + 2.0 * a)

    for _ in range(200):
        val = g(p)
        lo = np.where(val < 0, p, lo)
        hi = np.where(val > 0, p, hi)
        deriv = gp(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = p - val / deriv
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        p_next = np.where(bad, 0.5 * (lo + hi), newton)
        if np.all((hi - lo) <= 1e-15 * (1.0 + np.abs(hi))) or np.all(p_next == p):
            p = p_next
            break
        p = p_next
    return p


def prox_kinetic_cell(eta, omega, gamma: float, k0):
    """Prox of ``b(eta, w) + k0 * eta`` where ``b`` is the kinetic cost.

    ``b(eta, w) = |w|^2 / (2 eta)`` on ``{eta > 0, w in C}``, ``0`` at the
    origin and ``+oo`` elsewhere, with ``C`` the cone of
    :func:`project_cone`.  The prox at step ``gamma`` is ``(0, 0)`` when
    ``gamma*k0 >= eta + |P_C omega|^2 / (2 gamma)`` and otherwise

        ``(p*, p*/(p* + gamma) * P_C omega)``

    with ``p* > 0`` the unique positive root of
    ``(p + gamma*k0 - eta)(p + gamma)^2 - (gamma/2)|P_C omega|^2``.

    Parameters
    ----------
    eta : float or array
    omega : array with leading axis of length 4, trailing shape of ``eta``
    gamma : positive float
    k0 : float or array broadcastable to ``eta``

    Returns
    -------
    (p, w) : the prox, with ``p >= 0`` and ``w`` in the cone.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    scalar = np.ndim(eta) == 0
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    omega = np.asarray(omega, dtype=float)
    if omega.shape[0] != 4:
        raise ValueError("omega must stack 4 components on the first axis")
    omega = omega.reshape((4,) + eta.shape) if scalar else omega
    k0 = np.broadcast_to(np.asarray(k0, dtype=float), eta.shape)

    pc = project_cone(omega)
    s = np.sum(pc * pc, axis=0)
    degenerate = gamma * k0 >= eta + s / (2.0 * gamma)

    p = np.zeros_like(eta)
    if not np.all(degenerate):
        active = ~degenerate
        p_act = _kinetic_root(eta[active], s[active], gamma, k0[active])
        p[active] = p_act
    w = np.where(degenerate, 0.0, p / (p + gamma)) * pc
    if scalar:
        return float(p[0]), w[:, 0]
    return p, w
