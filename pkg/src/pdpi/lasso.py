"""Constrained LASSO benchmark: ``min alpha ||x||_1 + (1/2)||A x - b||^2``
subject to ``R x = 0``.

Three equivalent splittings are compared.  ``pd_subspaces`` treats the
kernel constraint as the subspace of the primal-dual partial-inverse
solver and dualises only the data term; ``fb_subspaces`` keeps the data
term smooth and runs forward-backward over the kernel; ``pd_generalized``
dualises both the data term and the constraint with one dual block each,
ignoring the subspace structure.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .hilbert import LinearMap, SubspaceProjector, op_norm
from .prox import kernel_projector, prox_conj_scaled_quadratic, soft_threshold
from .solver import (
    FBState,
    Problem,
    StepSizes,
    StoppingRule,
    Trace,
    VuState,
    fb_partial_inverse_step,
    initial_state,
    solve,
    validate_vu_stepsizes,
    vu_step,
)

__all__ = [
    "METHODS",
    "LassoInstance",
    "LassoResult",
    "generate_instance",
    "objective",
    "kkt_residual",
    "solve_formulation",
    "compare_report",
]

METHODS = ("pd_subspaces", "fb_subspaces", "pd_generalized")

REPORT_COLUMNS = ("n", "p", "m", "method", "mean_time_ms", "mean_iters", "mean_kkt_residual")


@dataclass(frozen=True)
class LassoInstance:
    """Problem data; ``R`` must have independent rows."""

    A: np.ndarray
    R: np.ndarray
    b: np.ndarray
    alpha: float = 1.0

    @property
    def n(self) -> int:
        return self.A.shape[1]


@dataclass
class LassoResult:
    x: np.ndarray
    trace: Trace
    converged: bool
    iterations: int
    objective: float


def generate_instance(n: int, p: int, m: int, seed: int, alpha: float = 1.0) -> LassoInstance:
    """Random instance with standard-normal entries, deterministic per seed.

    ``R`` is redrawn until its rows are independent (an almost-sure event).
    """
    if not 0 < m < n:
        raise ValueError("need 0 < m < n so that ker R is nontrivial")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, n))
    b = rng.standard_normal(p)
    while True:
        R = rng.standard_normal((m, n))
        if np.linalg.matrix_rank(R) == m:
            break
    return LassoInstance(A=A, R=R, b=b, alpha=alpha)


def objective(instance: LassoInstance, x: np.ndarray) -> float:
    r = instance.A @ x - instance.b
    return instance.alpha * float(np.abs(x).sum()) + 0.5 * float(r @ r)


def kkt_residual(instance: LassoInstance, x: np.ndarray, zero_tol: float = 1e-6) -> float:
    """Optimality certificate: distance of the projected stationarity
    condition to zero, plus the feasibility defect ``||R x||``.

    Stationarity on the kernel asks for a subgradient ``s`` of the l1 norm
    at ``x`` with ``P_ker(A^T(Ax - b) + alpha s) = 0``; the distance is the
    minimum of that norm over the subgradient box, computed exactly as a
    box-constrained least-squares problem.  Components with
    ``|x_i| <= zero_tol * (1 + max|x|)`` count as zeros (projecting onto
    the kernel smears the exact sparsity of the prox output by an amount
    of the order of the solver tolerance).
    """
    A, R, alpha = instance.A, instance.R, instance.alpha
    n = x.shape[0]
    P = np.eye(n) - R.T @ np.linalg.solve(R @ R.T, R)
    g = A.T @ (A @ x - instance.b)
    free = np.abs(x) <= zero_tol * (1.0 + np.abs(x).max(initial=0.0))
    base = P @ (g + alpha * np.where(free, 0.0, np.sign(x)))
    if not free.any():
        dist = float(np.linalg.norm(base))
    else:
        M = alpha * P[:, free]
        sol = scipy.optimize.lsq_linear(M, -base, bounds=(-1.0, 1.0),
                                        tol=1e-12, method="bvls")
        dist = float(np.linalg.norm(M @ sol.x + base))
    return dist + float(np.linalg.norm(R @ x))


def _norms(instance: LassoInstance) -> tuple[float, float]:
    nA = op_norm(LinearMap.from_matrix(instance.A), max_iters=2000, tol=1e-10).value
    nR = op_norm(LinearMap.from_matrix(instance.R), max_iters=2000, tol=1e-10).value
    return nA, nR


def default_steps(instance: LassoInstance, method: str) -> dict:
    """Per-method defaults filling 90% of each convergence region.

    The two primal-dual variants use equal primal/dual steps; the
    forward-backward variant takes 90% of its admissible interval.
    """
    nA, nR = _norms(instance)
    if method == "pd_subspaces":
        t = math.sqrt(0.9) / nA if nA > 0 else 1.0
        return {"tau": t, "gamma": t}
    if method == "fb_subspaces":
        lam = 1.8 / nA**2 if nA > 0 else 1.0
        return {"lam": lam}
    if method == "pd_generalized":
        t = math.sqrt(1.8 / (nA**2 + nR**2))
        return {"tau": t, "sigma1": t, "sigma2": t}
    raise ValueError(f"unknown method {method!r}")


def solve_formulation(instance: LassoInstance, method: str, tol: float = 1e-6,
                      max_iters: int = 200_000, steps: dict | None = None) -> LassoResult:
    """Run one of the three splittings to the relative-change tolerance.

    The solution is reported on the feasible iterate: for the subspace
    methods the primal iterate lies in ``ker R`` by construction.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    params = default_steps(instance, method) if steps is None else steps
    if method == "pd_subspaces":
        return _solve_pd_subspaces(instance, tol, max_iters, **params)
    if method == "fb_subspaces":
        return _solve_fb_subspaces(instance, tol, max_iters, **params)
    return _solve_pd_generalized(instance, tol, max_iters, **params)


def _solve_pd_subspaces(instance, tol, max_iters, tau, gamma) -> LassoResult:
    n = instance.n
    alpha = instance.alpha
    nA, _ = _norms(instance)
    prob = Problem(
        resolvent_a=lambda z, t: soft_threshold(z, t * alpha),
        resolvent_binv=lambda z, g: prox_conj_scaled_quadratic(z, g, instance.b, 1.0),
        L=LinearMap(forward=lambda x: instance.A @ x,
                    adjoint=lambda y: instance.A.T @ y,
                    domain_dim=n, codomain_dim=instance.A.shape[0], norm_bound=nA),
        P_V=kernel_projector(instance.R),
        P_W=SubspaceProjector.identity(instance.A.shape[0]),
    )
    init = initial_state(np.zeros(n), np.zeros(n), np.zeros(instance.A.shape[0]))
    res = solve(prob, StepSizes(tau=tau, gamma=gamma), init,
                StoppingRule(tol=tol, max_iters=max_iters),
                objective=lambda x: objective(instance, x),
                residual=lambda x: float(np.linalg.norm(instance.R @ x)))
    return LassoResult(x=res.feasible_x, trace=res.trace, converged=res.converged,
                       iterations=res.iterations, objective=objective(instance, res.feasible_x))


def _solve_fb_subspaces(instance, tol, max_iters, lam) -> LassoResult:
    n = instance.n
    alpha = instance.alpha
    prox_f = lambda z, t: soft_threshold(z, t * alpha)
    grad_h = lambda x: instance.A.T @ (instance.A @ x - instance.b)
    P_V = kernel_projector(instance.R)
    state = FBState(x=np.zeros(n), y=np.zeros(n))
    trace = Trace(["iteration", "primal_change", "dual_change", "objective",
                   "residual", "wall_time_s"])
    converged = False
    t0 = time.perf_counter()
    for _ in range(max_iters):
        new = fb_partial_inverse_step(prox_f, grad_h, P_V, lam, state)
        num = math.hypot(np.linalg.norm(new.x - state.x), np.linalg.norm(new.y - state.y))
        den = max(1.0, math.hypot(np.linalg.norm(state.x), np.linalg.norm(state.y)))
        trace.add(iteration=new.k,
                  primal_change=float(np.linalg.norm(new.x - state.x)),
                  dual_change=float(np.linalg.norm(new.y - state.y)),
                  objective=objective(instance, new.x),
                  residual=float(np.linalg.norm(instance.R @ new.x)),
                  wall_time_s=time.perf_counter() - t0)
        state = new
        if num / den <= tol:
            converged = True
            break
    return LassoResult(x=state.x, trace=trace, converged=converged,
                       iterations=state.k, objective=objective(instance, state.x))


def _solve_pd_generalized(instance, tol, max_iters, tau, sigma1, sigma2) -> LassoResult:
    n = instance.n
    alpha = instance.alpha
    nA, nR = _norms(instance)
    check = validate_vu_stepsizes(tau, sigma1, sigma2, nA, nR)
    if not check.accepted:
        raise ValueError(f"invalid step sizes: {check.reason}")
    A = LinearMap.from_matrix(instance.A)
    R = LinearMap.from_matrix(instance.R)
    prox_f = lambda z, t: soft_threshold(z, t * alpha)
    state = VuState(x=np.zeros(n), v1=np.zeros(instance.A.shape[0]),
                    v2=np.zeros(instance.R.shape[0]))
    trace = Trace(["iteration", "primal_change", "dual_change", "objective",
                   "residual", "wall_time_s"])
    converged = False
    t0 = time.perf_counter()
    for _ in range(max_iters):
        new = vu_step(prox_f, A, R, instance.b, tau, sigma1, sigma2, state)
        num = math.sqrt(np.linalg.norm(new.x - state.x) ** 2
                        + np.linalg.norm(new.v1 - state.v1) ** 2
                        + np.linalg.norm(new.v2 - state.v2) ** 2)
        den = max(1.0, math.sqrt(np.linalg.norm(state.x) ** 2
                                 + np.linalg.norm(state.v1) ** 2
                                 + np.linalg.norm(state.v2) ** 2))
        trace.add(iteration=new.k,
                  primal_change=float(np.linalg.norm(new.x - state.x)),
                  dual_change=float(math.hypot(np.linalg.norm(new.v1 - state.v1),
                                               np.linalg.norm(new.v2 - state.v2))),
                  objective=objective(instance, new.x),
                  residual=float(np.linalg.norm(instance.R @ new.x)),
                  wall_time_s=time.perf_counter() - t0)
        state = new
        if num / den <= tol:
            converged = True
            break
    return LassoResult(x=state.x, trace=trace, converged=converged,
                       iterations=state.k, objective=objective(instance, state.x))


def compare_report(sizes, seeds, tol: float = 1e-6, max_iters: int = 200_000,
                   path=None) -> list[dict]:
    """Average runtime, iteration count and optimality residual per method.

    One row per (size, method), averaged over the seeds; ``sizes`` is an
    iterable of ``(n, p, m)``.  Writes CSV to ``path`` when given.
    """
    rows = []
    for (n, p, m) in sizes:
        for method in METHODS:
            times, iters, kkts = [], [], []
            for seed in seeds:
                instance = generate_instance(n, p, m, seed)
                t0 = time.perf_counter()
                res = solve_formulation(instance, method, tol=tol, max_iters=max_iters)
                times.append((time.perf_counter() - t0) * 1e3)
                iters.append(res.iterations)
                kkts.append(kkt_residual(instance, res.x))
            if times:
                rows.append({"n": n, "p": p, "m": m, "method": method,
                             "mean_time_ms": float(np.mean(times)),
                             "mean_iters": float(np.mean(iters)),
                             "mean_kkt_residual": float(np.mean(kkts))})
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS))
            writer.writeheader()
            writer.writerows(rows)
    return rows
