"""Primal-dual splitting with partial inverses over a closed vector subspace.

The central object is a composite monotone inclusion: find ``(x, u)`` in
``(V n Fix T) x W`` with

    0 in A x + C x + L* u + N_V x,
    0 in B^{-1} u + D^{-1} u - L x,

where ``V`` and ``W`` are closed vector subspaces, ``A``, ``B``, ``D`` are
maximally monotone (``D`` strongly monotone with modulus ``delta``), ``C``
is ``beta``-cocoercive and ``T`` is averaged nonexpansive.  The solver
iterates

    eta   = J_{gamma B^{-1}} ( u + gamma (L x_bar - D^{-1} u) )
    u+    = P_W eta
    w     = J_{tau A} ( x + tau y - tau P_V (L* u+ + C x) )
    r     = P_V w
    x+    = P_V T r
    y+    = y + (r - w) / tau
    x_bar+= x+ + r - x

starting from ``x in V``, ``y in V-perp``.  Three classical reductions are
provided as standalone steppers for cross-checks and benchmarking: the
full-space primal-dual method (:func:`condat_step`), the forward-backward
method with subspaces (:func:`fb_partial_inverse_step`) and a two-dual-block
primal-dual method for linearly constrained least squares (:func:`vu_step`).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .hilbert import LinearMap, SubspaceProjector, op_norm

__all__ = [
    "ProxFn",
    "zero_operator",
    "conjugate_resolvent",
    "resolvent_of_linear",
    "Problem",
    "State",
    "StepSizes",
    "StepCheck",
    "StoppingRule",
    "Trace",
    "SolveResult",
    "validate_stepsizes",
    "default_stepsizes",
    "partial_inverse_resolvent",
    "pdpi_step",
    "initial_state",
    "solve",
    "CondatState",
    "condat_step",
    "FBState",
    "fb_partial_inverse_step",
    "VuState",
    "vu_step",
    "validate_vu_stepsizes",
]

#: A parameterised resolvent family: ``(z, t) -> J_{t A}(z)``.  When ``A``
#: is the subdifferential of ``f`` this is ``prox_{t f}``.
ProxFn = Callable[[np.ndarray, float], np.ndarray]


def zero_operator(x: np.ndarray) -> np.ndarray:
    """The zero map; stands in for absent ``C`` or ``D^{-1}`` terms."""
    return np.zeros_like(x)


def conjugate_resolvent(resolvent: ProxFn) -> ProxFn:
    """Resolvent family of ``B^{-1}`` from the resolvent family of ``B``.

    Uses ``J_{t B^{-1}}(z) = z - t J_{B/t}(z/t)``, the operator form of the
    Moreau identity.
    """

    def inv(z: np.ndarray, t: float) -> np.ndarray:
        return z - t * resolvent(z / t, 1.0 / t)

    return inv


def resolvent_of_linear(mat: np.ndarray) -> ProxFn:
    """Resolvent family ``(z, t) -> (I + t M)^{-1} z`` of a monotone matrix."""
    mat = np.asarray(mat, dtype=float)

    def res(z: np.ndarray, t: float) -> np.ndarray:
        return np.linalg.solve(np.eye(mat.shape[0]) + t * mat, z)

    return res


@dataclass(frozen=True)
class Problem:
    """Data of the inclusion; see the module docstring for the roles.

    ``resolvent_a`` and ``resolvent_binv`` are resolvent families taking
    ``(point, step)``.  ``resolvent_binv`` can be built from the resolvent
    of ``B`` with :func:`conjugate_resolvent`.  ``C`` and ``Dinv`` default
    to the zero map, which corresponds to ``beta = delta = +inf``.  The
    averaged map ``T`` defaults to the identity; its averagedness constant
    ``alpha`` is metadata only.
    """

    resolvent_a: ProxFn
    resolvent_binv: ProxFn
    L: LinearMap
    P_V: SubspaceProjector
    P_W: SubspaceProjector
    C: Callable[[np.ndarray], np.ndarray] = zero_operator
    Dinv: Callable[[np.ndarray], np.ndarray] = zero_operator
    T: Callable[[np.ndarray], np.ndarray] | None = None
    beta: float = math.inf
    delta: float = math.inf
    alpha: float = 0.5

    def apply_T(self, x: np.ndarray) -> np.ndarray:
        return x if self.T is None else self.T(x)


@dataclass(frozen=True)
class State:
    """Iterate of the solver: ``x in V``, ``y in V-perp``, dual ``u``.

    ``r`` keeps the last subspace iterate so that the feasibility-improved
    point ``T r`` can be reported alongside ``x``.
    """

    x: np.ndarray
    x_bar: np.ndarray
    y: np.ndarray
    u: np.ndarray
    r: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class StepSizes:
    tau: float
    gamma: float


class StepCheck(NamedTuple):
    accepted: bool
    slack: float
    reason: str | None


@dataclass(frozen=True)
class StoppingRule:
    """Relative-change stopping: quit once
    ``||state+ - state|| / max(1, ||state||) <= tol`` or after
    ``max_iters`` steps."""

    tol: float = 1e-6
    max_iters: int = 100_000


def validate_stepsizes(tau: float, gamma: float, beta: float = math.inf,
                       delta: float = math.inf, L_norm: float = 0.0) -> StepCheck:
    """Check the convergence condition on the step sizes.

    Requires ``tau in (0, 2 beta)``, ``gamma in (0, 2 delta)`` and,
    strictly,

        ``L_norm^2 < (1/tau - 1/(2 beta)) (1/gamma - 1/(2 delta))``.

    ``beta`` or ``delta`` equal to ``+inf`` drops the corresponding
    reciprocal.  Returns the slack of the last inequality.
    """
    if tau <= 0 or gamma <= 0:
        return StepCheck(False, -math.inf, "step sizes must be positive")
    inv2b = 0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)
    inv2d = 0.0 if math.isinf(delta) else 1.0 / (2.0 * delta)
    if 1.0 / tau <= inv2b:
        return StepCheck(False, -math.inf, f"tau={tau} not in (0, 2*beta)")
    if 1.0 / gamma <= inv2d:
        return StepCheck(False, -math.inf, f"gamma={gamma} not in (0, 2*delta)")
    rhs = (1.0 / tau - inv2b) * (1.0 / gamma - inv2d)
    slack = rhs - L_norm**2
    if slack <= 0:
        return StepCheck(False, slack, "operator-norm condition violated")
    return StepCheck(True, slack, None)


def default_stepsizes(L_norm: float, beta: float = math.inf, delta: float = math.inf,
                      fill: float = 0.9) -> StepSizes:
    """Equal step sizes filling ``fill`` of the admissible region.

    Solves ``L_norm^2 = fill * (1/t - 1/(2 beta)) (1/t - 1/(2 delta))`` for
    ``t = tau = gamma``; with ``L_norm = 0`` the steps are capped at
    ``fill`` times the cocoercivity bounds (or 1 when unconstrained).
    """
    if not 0 < fill < 1:
        raise ValueError("fill must lie in (0, 1)")
    a = 0.0 if math.isinf(beta) else 1.0 / (2.0 * beta)
    b = 0.0 if math.isinf(delta) else 1.0 / (2.0 * delta)
    if L_norm == 0.0:
        cap = min(2.0 * beta if not math.isinf(beta) else math.inf,
                  2.0 * delta if not math.isinf(delta) else math.inf)
        t = fill * cap if not math.isinf(cap) else 1.0
        return StepSizes(tau=t, gamma=t)
    # largest root of q^2 - (a+b) q + a b - L^2/fill = 0 with q = 1/t
    disc = (a - b) ** 2 + 4.0 * L_norm**2 / fill
    q = 0.5 * ((a + b) + math.sqrt(disc))
    t = 1.0 / q
    return StepSizes(tau=t, gamma=t)


def partial_inverse_resolvent(resolvent: Callable[[np.ndarray], np.ndarray],
                              P_V: SubspaceProjector, z: np.ndarray) -> np.ndarray:
    """Resolvent of the partial inverse of ``A`` with respect to ``ran P_V``.

    Given ``resolvent = J_A`` (any scaling already embedded), returns

        ``(2 P_V - I) J_A z + (I - P_V) z``,

    which equals ``J_{A_V} z``.  With ``P_V = I`` this is ``J_A``; with
    ``P_V = 0`` it is ``z - J_A z``, the resolvent of ``A^{-1}``.
    """
    jz = resolvent(z)
    pj = P_V(jz)
    return 2.0 * pj - jz + (z - P_V(z))


def pdpi_step(problem: Problem, steps: StepSizes, state: State) -> State:
    """One pass of the seven-line primal-dual partial-inverse iteration."""
    tau, gamma = steps.tau, steps.gamma
    eta = problem.resolvent_binv(
        state.u + gamma * (problem.L(state.x_bar) - problem.Dinv(state.u)), gamma)
    u_next = problem.P_W(eta)
    w = problem.resolvent_a(
        state.x + tau * state.y
        - tau * problem.P_V(problem.L.adjoint(u_next) + problem.C(state.x)), tau)
    r = problem.P_V(w)
    # T = Id makes P_V T r = P_V P_V w = r exactly; skip the redundant
    # projection so the identity holds to the last bit as well.
    x_next = r if problem.T is None else problem.P_V(problem.T(r))
    y_next = state.y + (r - w) / tau
    x_bar_next = x_next + r - state.x
    return State(x=x_next, x_bar=x_bar_next, y=y_next, u=u_next, r=r, k=state.k + 1)


def initial_state(x0: np.ndarray, y0: np.ndarray, u0: np.ndarray) -> State:
    """Build a starting state (``x0`` must lie in V, ``y0`` in V-perp)."""
    x0 = np.asarray(x0, dtype=float)
    return State(x=x0, x_bar=x0.copy(), y=np.asarray(y0, dtype=float),
                 u=np.asarray(u0, dtype=float), r=x0.copy(), k=0)


class Trace:
    """Per-iteration records of a solve, with CSV export.

    Columns are fixed at construction; :meth:`add` appends one row.  Floats
    are serialised with ``repr`` so that re-running a deterministic solve
    reproduces the file byte for byte.
    """

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        self.rows: list[dict] = []

    def add(self, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown trace columns: {sorted(unknown)}")
        self.rows.append(values)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.asarray([row.get(name, np.nan) for row in self.rows], dtype=float)

    @staticmethod
    def _fmt(value) -> str:
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        if value is None:
            return ""
        return str(value)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(self._fmt(row.get(c)) for c in self.columns) + "\n")


@dataclass
class SolveResult:
    state: State
    feasible_x: np.ndarray
    trace: Trace
    converged: bool

    @property
    def iterations(self) -> int:
        return self.state.k


def solve(problem: Problem, steps: StepSizes, init: State,
          stop: StoppingRule = StoppingRule(),
          objective: Callable[[np.ndarray], float] | None = None,
          residual: Callable[[np.ndarray], float] | None = None) -> SolveResult:
    """Iterate :func:`pdpi_step` until the relative change of ``(x, u)``
    falls below ``stop.tol`` or ``stop.max_iters`` is reached.

    The reported solution is the feasibility-improved iterate ``T r``;
    ``objective`` and ``residual``, when given, are evaluated on it and
    recorded in the trace together with the changes of both iterates.
    """
    check = validate_stepsizes(steps.tau, steps.gamma, problem.beta,
                               problem.delta, _problem_norm(problem))
    if not check.accepted:
        raise ValueError(f"invalid step sizes: {check.reason}")
    columns = ["iteration", "primal_change", "dual_change", "objective",
               "residual", "wall_time_s"]
    trace = Trace(columns)
    state = init
    converged = False
    t0 = time.perf_counter()
    for _ in range(stop.max_iters):
        new = pdpi_step(problem, steps, state)
        num = math.hypot(np.linalg.norm(new.x - state.x), np.linalg.norm(new.u - state.u))
        den = max(1.0, math.hypot(np.linalg.norm(state.x), np.linalg.norm(state.u)))
        feas = problem.apply_T(new.r)
        trace.add(iteration=new.k,
                  primal_change=float(np.linalg.norm(new.x - state.x)),
                  dual_change=float(np.linalg.norm(new.u - state.u)),
                  objective=(objective(feas) if objective else None),
                  residual=(residual(feas) if residual else None),
                  wall_time_s=time.perf_counter() - t0)
        state = new
        if num / den <= stop.tol:
            converged = True
            break
    return SolveResult(state=state, feasible_x=problem.apply_T(state.r),
                       trace=trace, converged=converged)


def _problem_norm(problem: Problem) -> float:
    if problem.L.norm_bound is not None:
        return problem.L.norm_bound
    return op_norm(problem.L, max_iters=2000, tol=1e-10).value


# ---------------------------------------------------------------------------
# Baseline steppers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CondatState:
    x: np.ndarray
    x_bar: np.ndarray
    u: np.ndarray
    k: int = 0


def condat_step(prox_f: ProxFn, prox_gconj: ProxFn,
                grad_h: Callable[[np.ndarray], np.ndarray], L: LinearMap,
                steps: StepSizes, state: CondatState) -> CondatState:
    """Full-space primal-dual step for ``min f(x) + g(Lx) + h(x)``.

        u+     = prox_{gamma g*}(u + gamma L x_bar)
        x+     = prox_{tau f}(x - tau (L* u+ + grad h(x)))
        x_bar+ = 2 x+ - x
    """
    tau, gamma = steps.tau, steps.gamma
    u_next = prox_gconj(state.u + gamma * L(state.x_bar), gamma)
    x_next = prox_f(state.x - tau * (L.adjoint(u_next) + grad_h(state.x)), tau)
    return CondatState(x=x_next, x_bar=2.0 * x_next - state.x, u=u_next, k=state.k + 1)


@dataclass(frozen=True)
class FBState:
    x: np.ndarray
    y: np.ndarray
    k: int = 0


def fb_partial_inverse_step(prox_f: ProxFn,
                            grad_h: Callable[[np.ndarray], np.ndarray],
                            P_V: SubspaceProjector, lam: float,
                            state: FBState) -> FBState:
    """Forward-backward step with subspaces for ``min_{x in V} f(x) + h(x)``.

        w  = prox_{lam f}(x + lam y - lam P_V grad h(x))
        x+ = P_V w
        y+ = y + (x+ - w) / lam

    Converges for ``lam`` in ``(0, 2 / Lip(grad h))``.
    """
    w = prox_f(state.x + lam * state.y - lam * P_V(grad_h(state.x)), lam)
    x_next = P_V(w)
    y_next = state.y + (x_next - w) / lam
    return FBState(x=x_next, y=y_next, k=state.k + 1)


@dataclass(frozen=True)
class VuState:
    x: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    k: int = 0


def vu_step(prox_f: ProxFn, A: LinearMap, R: LinearMap, b: np.ndarray,
            tau: float, sigma1: float, sigma2: float, state: VuState) -> VuState:
    """Two-dual-block primal-dual step for
    ``min f(x) + (1/2)||A x - b||^2  s.t.  R x = 0``.

    The data term and the constraint each carry a dual block:

        x+  = prox_{tau f}(x - (tau/2) A* v1 - (tau/2) R* v2)
        y   = 2 x+ - x
        v1+ = 2 (v1 + sigma1 (A y - b)) / (sigma1 + 2)
        v2+ = v2 + sigma2 R y
    """
    x_next = prox_f(state.x - 0.5 * tau * A.adjoint(state.v1)
                    - 0.5 * tau * R.adjoint(state.v2), tau)
    y = 2.0 * x_next - state.x
    v1_next = 2.0 * (state.v1 + sigma1 * A(y) - sigma1 * b) / (sigma1 + 2.0)
    v2_next = state.v2 + sigma2 * R(y)
    return VuState(x=x_next, v1=v1_next, v2=v2_next, k=state.k + 1)


def validate_vu_stepsizes(tau: float, sigma1: float, sigma2: float,
                          norm_A: float, norm_R: float) -> StepCheck:
    """Step condition ``sqrt(tau/2 (sigma1 ||A||^2 + sigma2 ||R||^2)) < 1``."""
    if min(tau, sigma1, sigma2) <= 0:
        return StepCheck(False, -math.inf, "step sizes must be positive")
    val = math.sqrt(0.5 * tau * (sigma1 * norm_A**2 + sigma2 * norm_R**2))
    if val >= 1.0:
        return StepCheck(False, 1.0 - val, "operator-norm condition violated")
    return StepCheck(True, 1.0 - val, None)
