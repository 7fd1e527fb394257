"""Two-stage stochastic arc-capacity expansion on a transport network.

First-stage variables expand arc capacities (identical across scenarios:
non-anticipativity); second-stage route flows serve random demands under
random capacities.  With congestion-linear travel times the expected
operational cost plus the quadratic investment cost is smooth and convex,
and the constraint structure is a product of simple sets, so both solvers
are projected primal-dual iterations.

``solve_direct`` dualises the capacity coupling and projects onto the
demand simplices and the consensus box each iteration.  ``solve_subspace``
reformulates over the non-anticipativity/zero-group-sum subspace pair with
a constant demand-splitting shift, so consensus and demand equalities hold
exactly at every iterate and only bound constraints are projected.
"""

from __future__ import annotations

import configparser
import math
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .hilbert import LinearMap, op_norm
from .prox import (
    project_capacity_consensus,
    project_demand_centering,
    project_nonanticipativity,
    project_simplex_mass,
    project_theta,
)
from .solver import StepSizes, Trace

__all__ = [
    "TransportNetwork",
    "ScenarioSet",
    "TransportSolution",
    "NetworkFormatError",
    "load_network",
    "sample_scenarios",
    "objective_and_gradient",
    "gradient_lipschitz",
    "default_steps",
    "solve_direct",
    "solve_subspace",
]


class NetworkFormatError(ValueError):
    """Raised when a network file violates the schema."""


@dataclass(frozen=True)
class TransportNetwork:
    """Static network data.

    ``incidence`` is the 0/1 arc-route matrix (arcs by routes); routes are
    grouped by origin-destination pair in ``od_groups``.  ``cap_base`` and
    ``cap_spread`` parameterise the random capacities, ``demand_*`` the
    random demands; ``expansion_max`` bounds the per-arc expansion.
    """

    name: str
    incidence: np.ndarray
    od_groups: tuple
    od_pairs: tuple
    eta: np.ndarray
    cap_base: np.ndarray
    cap_spread: np.ndarray
    expansion_max: np.ndarray
    theta: float
    demand_base: np.ndarray
    demand_spread: np.ndarray
    demand_beta: tuple
    Q: np.ndarray

    @property
    def n_arcs(self) -> int:
        return self.incidence.shape[0]

    @property
    def n_routes(self) -> int:
        return self.incidence.shape[1]

    def incidence_norm(self) -> float:
        return op_norm(LinearMap.from_matrix(self.incidence),
                       max_iters=5000, tol=1e-8).value


@dataclass(frozen=True)
class ScenarioSet:
    probabilities: np.ndarray
    capacities: np.ndarray  # (scenarios, arcs), strictly positive
    demands: np.ndarray     # (scenarios, od pairs), nonnegative

    @property
    def n(self) -> int:
        return len(self.probabilities)


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()])


def load_network(source) -> TransportNetwork:
    """Read a network file; ``source`` is a path or a bundled name
    (``network1`` or ``network2``)."""
    name = str(source)
    if name in ("network1", "network2"):
        text = resources.files("pdpi").joinpath(f"data/{name}.txt").read_text()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise NetworkFormatError(f"unparsable network file: {exc}") from exc
    for section in ("arcs", "routes", "od", "params"):
        if section not in parser:
            raise NetworkFormatError(f"missing section [{section}]")

    try:
        n_arcs = parser["arcs"].getint("count")
    except ValueError as exc:
        raise NetworkFormatError(f"bad arc count: {exc}") from exc
    if n_arcs is None or n_arcs < 1:
        raise NetworkFormatError("[arcs] needs a positive count")

    route_items = sorted(parser["routes"].items(), key=lambda kv: int(kv[0]))
    if [int(k) for k, _ in route_items] != list(range(1, len(route_items) + 1)):
        raise NetworkFormatError("routes must be numbered 1..n consecutively")
    routes = []
    for key, val in route_items:
        arcs = [int(a) for a in val.split()]
        if not arcs or any(a < 1 or a > n_arcs for a in arcs):
            raise NetworkFormatError(f"route {key} references an unknown arc")
        routes.append(arcs)
    incidence = np.zeros((n_arcs, len(routes)))
    for r, arcs in enumerate(routes):
        incidence[[a - 1 for a in arcs], r] = 1.0

    od_groups, od_pairs = [], []
    for key, val in sorted(parser["od"].items(), key=lambda kv: int(kv[0])):
        # the value looks like: origin=1 dest=4 routes=1 2 3
        parts = val.split()
        spec = {}
        current = None
        for token in parts:
            if "=" in token:
                current, first = token.split("=", 1)
                spec[current] = [first] if first else []
            elif current is not None:
                spec[current].append(token)
        try:
            origin = int(spec["origin"][0])
            dest = int(spec["dest"][0])
            group = [int(r) for r in spec["routes"]]
        except (KeyError, ValueError, IndexError) as exc:
            raise NetworkFormatError(f"malformed od entry {key}: {val!r}") from exc
        if not group:
            raise NetworkFormatError(f"od entry {key} has no routes")
        od_groups.append(tuple(r - 1 for r in group))
        od_pairs.append((origin, dest))
    flat = sorted(r for g in od_groups for r in g)
    if flat != list(range(len(routes))):
        raise NetworkFormatError("od groups must partition the routes exactly once")

    params = parser["params"]
    try:
        eta = _floats(params.get("eta", ""))
        b = _floats(params.get("b", ""))
        d = _floats(params.get("d", ""))
        theta = params.getfloat("theta")
    except ValueError as exc:
        raise NetworkFormatError(f"bad numeric parameter: {exc}") from exc
    for vec, label in ((eta, "eta"), (b, "b"), (d, "d")):
        if vec.shape != (n_arcs,):
            raise NetworkFormatError(f"params.{label} must list {n_arcs} values")
    if theta is None or theta <= 0:
        raise NetworkFormatError("params.theta must be positive")
    try:
        demand_base = _floats(params.get("demand_base", ""))
        demand_spread = _floats(params.get("demand_spread", ""))
        beta_ab = _floats(params.get("demand_beta", ""))
    except ValueError as exc:
        raise NetworkFormatError(f"bad demand parameter: {exc}") from exc
    if demand_base.shape != (len(od_pairs),) or demand_spread.shape != (len(od_pairs),):
        raise NetworkFormatError("demand parameters must list one value per od pair")
    if beta_ab.shape != (2,) or np.any(beta_ab <= 0):
        raise NetworkFormatError("demand_beta must give two positive shape values")

    return TransportNetwork(
        name=name, incidence=incidence, od_groups=tuple(od_groups),
        od_pairs=tuple(od_pairs), eta=eta, cap_base=b, cap_spread=d,
        expansion_max=theta * d, theta=theta, demand_base=demand_base,
        demand_spread=demand_spread, demand_beta=(beta_ab[0], beta_ab[1]),
        Q=np.eye(n_arcs))


def sample_scenarios(network: TransportNetwork, n_scenarios: int, seed: int) -> ScenarioSet:
    """Equiprobable scenarios: capacities ``100 b + d Beta(2, 2)`` per arc
    and demands ``base + spread * Beta(a, b)`` per od pair."""
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    rng = np.random.default_rng(seed)
    caps = 100.0 * network.cap_base + network.cap_spread \
        * rng.beta(2.0, 2.0, size=(n_scenarios, network.n_arcs))
    a, b = network.demand_beta
    demands = network.demand_base + network.demand_spread \
        * rng.beta(a, b, size=(n_scenarios, len(network.od_pairs)))
    return ScenarioSet(probabilities=np.full(n_scenarios, 1.0 / n_scenarios),
                       capacities=caps, demands=demands)


def _arc_flows(network: TransportNetwork, f: np.ndarray) -> np.ndarray:
    return f @ network.incidence.T


def objective_and_gradient(network: TransportNetwork, scenarios: ScenarioSet,
                           x: np.ndarray, f: np.ndarray):
    """Expected operational plus investment cost, its gradient, and the
    Lipschitz constant of the gradient.

    The travel-time integral has the closed form
    ``eta * (v + 0.075 v^2 / c)`` per arc at flow ``v``.
    """
    probs = scenarios.probabilities
    c = scenarios.capacities
    v = _arc_flows(network, f)
    op_cost = np.sum(network.eta * (v + 0.075 * v**2 / c), axis=1)
    invest = 0.5 * np.einsum("sa,ab,sb->s", x, network.Q, x)
    value = float(np.sum(probs * (op_cost + invest)))
    times = network.eta * (1.0 + 0.15 * v / c)
    grad_f = probs[:, None] * (times @ network.incidence)
    grad_x = probs[:, None] * (x @ network.Q)
    return value, grad_x, grad_f, gradient_lipschitz(network, scenarios)


def gradient_lipschitz(network: TransportNetwork, scenarios: ScenarioSet) -> float:
    """``max_s p_s * max(||Q||, ||N||^2 * max_a 0.15 eta_a / c_{a,s})``."""
    chi = 0.15 * network.eta / scenarios.capacities
    qnorm = float(np.linalg.norm(network.Q, 2))
    n2 = network.incidence_norm() ** 2
    per_scenario = scenarios.probabilities * np.maximum(qnorm, n2 * chi.max(axis=1))
    return float(per_scenario.max())


def default_steps(network: TransportNetwork, scenarios: ScenarioSet,
                  fill: float = 0.9) -> StepSizes:
    """Equal steps with ``tau * gamma * max(1, ||N||^2) = fill * (1 - tau/(2 beta))``."""
    beta = 1.0 / gradient_lipschitz(network, scenarios)
    M = max(1.0, network.incidence_norm() ** 2)
    # t^2 M + fill * t / (2 beta) - fill = 0
    a = M
    b = fill / (2.0 * beta)
    t = (-b + math.sqrt(b * b + 4.0 * a * fill)) / (2.0 * a)
    return StepSizes(tau=t, gamma=t)


def _validate_transport_steps(network, scenarios, steps) -> None:
    beta = 1.0 / gradient_lipschitz(network, scenarios)
    M = max(1.0, network.incidence_norm() ** 2)
    if steps.tau <= 0 or steps.gamma <= 0 or steps.tau >= 2.0 * beta:
        raise ValueError("need 0 < tau < 2*beta and gamma > 0")
    if steps.tau * steps.gamma * M >= 1.0 - steps.tau / (2.0 * beta):
        raise ValueError("step sizes violate tau*gamma*max(1,||N||^2) < 1 - tau/(2 beta)")


@dataclass
class TransportSolution:
    x: np.ndarray
    f: np.ndarray
    trace: Trace
    converged: bool
    iterations: int
    objective: float


_TRACE_COLUMNS = ["iteration", "primal_change", "dual_change", "objective",
                  "residual", "wall_time_s", "demand_residual",
                  "capacity_residual", "consensus_residual"]


def _residuals(network, scenarios, x, f):
    demand = 0.0
    for j, group in enumerate(network.od_groups):
        gap = np.abs(f[:, list(group)].sum(axis=1) - scenarios.demands[:, j])
        demand = max(demand, float(gap.max()))
    load = _arc_flows(network, f) - x - scenarios.capacities
    capacity = max(0.0, float(load.max()))
    consensus = float(np.abs(x - x.mean(axis=0, keepdims=True)).max())
    return demand, capacity, consensus


def _project_demand_simplices(network, scenarios, f):
    out = np.empty_like(f)
    for j, group in enumerate(network.od_groups):
        idx = list(group)
        out[:, idx] = project_simplex_mass(f[:, idx], scenarios.demands[:, j])
    return out


def solve_direct(network: TransportNetwork, scenarios: ScenarioSet,
                 tol: float = 1e-10, max_iters: int = 200_000,
                 steps: StepSizes | None = None) -> TransportSolution:
    """Primal-dual iteration on the full product space.

    Every iterate satisfies the demand equalities and the consensus/box
    constraints exactly (they are projected); the capacity coupling is
    enforced through the dual block and holds in the limit.
    """
    steps = default_steps(network, scenarios) if steps is None else steps
    _validate_transport_steps(network, scenarios, steps)
    tau, gamma = steps.tau, steps.gamma
    S, A, R = scenarios.n, network.n_arcs, network.n_routes
    N = network.incidence
    probs = scenarios.probabilities
    x = np.zeros((S, A))
    f = np.zeros((S, R))
    xb, fb = x.copy(), f.copy()
    P = np.zeros((S, A))
    U = np.zeros((S, A))
    trace = Trace(_TRACE_COLUMNS)
    converged = False
    iterations = 0
    t0 = time.perf_counter()
    for k in range(1, max_iters + 1):
        pt = P + gamma * xb
        ut = U + gamma * (fb @ N.T)
        proj_p, proj_u = project_theta(pt / gamma, ut / gamma, scenarios.capacities)
        P_new = pt - gamma * proj_p
        U_new = ut - gamma * proj_u
        times = network.eta * (1.0 + 0.15 * (f @ N.T) / scenarios.capacities)
        psi = probs[:, None] * (times @ N)
        grad_x = probs[:, None] * (x @ network.Q)
        x_new = project_capacity_consensus(x - tau * (P_new + grad_x),
                                           network.expansion_max)
        f_new = _project_demand_simplices(network, scenarios,
                                          f - tau * (U_new @ N + psi))
        primal = math.hypot(float(np.linalg.norm(x_new - x)),
                            float(np.linalg.norm(f_new - f)))
        dual = math.hypot(float(np.linalg.norm(P_new - P)),
                          float(np.linalg.norm(U_new - U)))
        den = max(1.0, math.sqrt(sum(float(np.linalg.norm(a)) ** 2
                                     for a in (x, f, P, U))))
        xb, fb = 2.0 * x_new - x, 2.0 * f_new - f
        x, f, P, U = x_new, f_new, P_new, U_new
        value = objective_and_gradient(network, scenarios, x, f)[0]
        dres, cres, sres = _residuals(network, scenarios, x, f)
        trace.add(iteration=k, primal_change=primal, dual_change=dual,
                  objective=value, residual=cres,
                  wall_time_s=time.perf_counter() - t0, demand_residual=dres,
                  capacity_residual=cres, consensus_residual=sres)
        iterations = k
        if math.hypot(primal, dual) / den <= tol:
            converged = True
            break
    value = objective_and_gradient(network, scenarios, x, f)[0]
    return TransportSolution(x=x, f=f, trace=trace, converged=converged,
                             iterations=iterations, objective=value)


def solve_subspace(network: TransportNetwork, scenarios: ScenarioSet,
                   tol: float = 1e-10, max_iters: int = 200_000,
                   steps: StepSizes | None = None) -> TransportSolution:
    """Partial-inverse iteration over the consensus and zero-group-sum
    subspaces, with the uniform demand split as the affine shift.

    The reported flows are ``f + f0`` where ``f0`` splits each demand
    equally over its routes, so demand equalities hold to round-off at
    every iterate, and the consensus constraint holds exactly.
    """
    steps = default_steps(network, scenarios) if steps is None else steps
    _validate_transport_steps(network, scenarios, steps)
    tau, gamma = steps.tau, steps.gamma
    S, A, R = scenarios.n, network.n_arcs, network.n_routes
    N = network.incidence
    probs = scenarios.probabilities
    groups = network.od_groups
    f0 = np.zeros((S, R))
    for j, group in enumerate(groups):
        f0[:, list(group)] = (scenarios.demands[:, j] / len(group))[:, None]
    x = np.zeros((S, A))
    f = np.zeros((S, R))
    xb, fb = x.copy(), f.copy()
    y = np.zeros((S, A))
    g = np.zeros((S, R))
    P = np.zeros((S, A))
    U = np.zeros((S, A))
    trace = Trace(_TRACE_COLUMNS)
    converged = False
    iterations = 0
    t0 = time.perf_counter()
    for k in range(1, max_iters + 1):
        pt = P + gamma * xb
        ut = U + gamma * ((fb + f0) @ N.T)
        proj_p, proj_u = project_theta(pt / gamma, ut / gamma, scenarios.capacities)
        P_new = pt - gamma * proj_p
        U_new = ut - gamma * proj_u
        times = network.eta * (1.0 + 0.15 * ((f + f0) @ N.T) / scenarios.capacities)
        psi = probs[:, None] * (times @ N)
        grad_x = probs[:, None] * (x @ network.Q)
        x_tilde = x + tau * y - tau * project_nonanticipativity(P_new + grad_x)
        f_tilde = f + tau * g - tau * project_demand_centering(U_new @ N + psi, groups)
        z = np.clip(x_tilde, 0.0, network.expansion_max)
        ell = np.maximum(f_tilde + f0, 0.0) - f0
        x_new = project_nonanticipativity(z)
        f_new = project_demand_centering(ell, groups)
        y = y + (x_new - z) / tau
        g = g + (f_new - ell) / tau
        primal = math.hypot(float(np.linalg.norm(x_new - x)),
                            float(np.linalg.norm(f_new - f)))
        dual = math.hypot(float(np.linalg.norm(P_new - P)),
                          float(np.linalg.norm(U_new - U)))
        den = max(1.0, math.sqrt(sum(float(np.linalg.norm(a)) ** 2
                                     for a in (x, f, P, U))))
        xb, fb = 2.0 * x_new - x, 2.0 * f_new - f
        x, f, P, U = x_new, f_new, P_new, U_new
        value = objective_and_gradient(network, scenarios, x, f + f0)[0]
        dres, cres, sres = _residuals(network, scenarios, x, f + f0)
        trace.add(iteration=k, primal_change=primal, dual_change=dual,
                  objective=value, residual=cres,
                  wall_time_s=time.perf_counter() - t0, demand_residual=dres,
                  capacity_residual=cres, consensus_residual=sres)
        iterations = k
        if math.hypot(primal, dual) / den <= tol:
            converged = True
            break
    flows = f + f0
    value = objective_and_gradient(network, scenarios, x, flows)[0]
    return TransportSolution(x=x, f=flows, trace=trace, converged=converged,
                             iterations=iterations, objective=value)
