import math

import numpy as np
import pytest

from pdpi.hilbert import LinearMap, SubspaceProjector, norm
from pdpi.prox import prox_conj_scaled_quadratic, soft_threshold
from pdpi.solver import (
    CondatState,
    FBState,
    Problem,
    State,
    StepSizes,
    StoppingRule,
    Trace,
    VuState,
    condat_step,
    conjugate_resolvent,
    default_stepsizes,
    fb_partial_inverse_step,
    initial_state,
    partial_inverse_resolvent,
    pdpi_step,
    solve,
    validate_stepsizes,
    validate_vu_stepsizes,
    vu_step,
    zero_operator,
)


def _shifted_quadratic_resolvent(a):
    # resolvent family of the gradient of (1/2)||x - a||^2
    return lambda z, t: (z + t * a) / (1.0 + t)


def _zero_resolvent(z, t):
    return np.zeros_like(z)


def _random_projector(rng, dim, rank):
    return SubspaceProjector.from_basis(rng.standard_normal((dim, rank)))


# ---------------------------------------------------------------------------
# step-size validation
# ---------------------------------------------------------------------------


def test_validate_stepsizes_accepts_with_slack():
    check = validate_stepsizes(1.0, 1.0, beta=1.0, delta=math.inf, L_norm=0.6)
    assert check.accepted
    assert abs(check.slack - (0.5 - 0.36)) <= 1e-14


def test_validate_stepsizes_boundaries_are_excluded():
    assert not validate_stepsizes(2.0, 1.0, beta=1.0, delta=math.inf, L_norm=0.1).accepted
    # L^2 exactly equal to the right-hand side must be rejected
    rhs = (1.0 / 0.5) * (1.0 / 0.5)
    assert not validate_stepsizes(0.5, 0.5, L_norm=math.sqrt(rhs)).accepted
    assert not validate_stepsizes(-1.0, 1.0).accepted


def test_default_stepsizes_respect_condition():
    for L, beta, delta in [(2.0, math.inf, math.inf), (3.0, 0.7, math.inf),
                           (0.5, 1.2, 2.0), (0.0, 0.9, math.inf)]:
        st = default_stepsizes(L, beta, delta)
        assert validate_stepsizes(st.tau, st.gamma, beta, delta, L).accepted


# ---------------------------------------------------------------------------
# partial inverse resolvent
# ---------------------------------------------------------------------------


def test_partial_inverse_identity_operator():
    # the identity is its own partial inverse for every subspace
    rng = np.random.default_rng(0)
    for rank in (0, 1, 2, 4):
        P = (_random_projector(rng, 4, rank) if rank else SubspaceProjector.zero(4))
        z = rng.standard_normal(4)
        out = partial_inverse_resolvent(lambda v: v / 2.0, P, z)
        np.testing.assert_allclose(out, z / 2.0, atol=1e-12)


def test_partial_inverse_trivial_subspace_gives_inverse():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.5, 2.0, size=5)
    J = lambda z: z / (1.0 + d)
    z = rng.standard_normal(5)
    out = partial_inverse_resolvent(J, SubspaceProjector.zero(5), z)
    np.testing.assert_allclose(out, z - J(z), atol=1e-14)


def _graph_oracle(diag, tau, P_mat, z):
    # solve x + u = z with (P x + Pc u, P u + Pc x) in gra(tau * diag)
    n = len(z)
    D = tau * np.diag(diag)
    Pc = np.eye(n) - P_mat
    lhs = (np.eye(n) + D) @ (Pc - P_mat)
    rhs = (D @ Pc - P_mat) @ z
    return np.linalg.solve(lhs, rhs)


def test_partial_inverse_matches_graph_definition():
    rng = np.random.default_rng(2)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        rank = int(rng.integers(1, n))
        basis = rng.standard_normal((n, rank))
        P = SubspaceProjector.from_basis(basis)
        P_mat = np.column_stack([P(e) for e in np.eye(n)])
        diag = rng.uniform(0.2, 3.0, size=n)
        tau = float(rng.uniform(0.2, 2.0))
        z = rng.standard_normal(n)
        res = partial_inverse_resolvent(lambda v: v / (1.0 + tau * diag), P, z)
        np.testing.assert_allclose(res, _graph_oracle(diag, tau, P_mat, z), atol=1e-10)


# ---------------------------------------------------------------------------
# the seven-line iteration
# ---------------------------------------------------------------------------


def _fixed_point_instance():
    # min over x in span{e1} of (1/2)||x-a||^2 + (1/2)||x-c||^2, solved by hand
    a = np.array([1.0, 2.0])
    c = np.array([3.0, -1.0])
    x_star = np.array([(a[0] + c[0]) / 2.0, 0.0])
    u_star = x_star - c
    P_V = SubspaceProjector.from_basis(np.array([[1.0], [0.0]]))
    y_star = (x_star - a) + np.array([u_star[0], 0.0])
    prob = Problem(
        resolvent_a=_shifted_quadratic_resolvent(a),
        resolvent_binv=lambda z, g: prox_conj_scaled_quadratic(z, g, c, 1.0),
        L=LinearMap.identity(2),
        P_V=P_V,
        P_W=SubspaceProjector.identity(2),
    )
    return prob, x_star, u_star, y_star


def test_pdpi_step_fixed_at_solution():
    prob, x_star, u_star, y_star = _fixed_point_instance()
    state = State(x=x_star, x_bar=x_star, y=y_star, u=u_star, r=x_star)
    new = pdpi_step(prob, StepSizes(tau=0.7, gamma=0.9), state)
    for before, after in [(x_star, new.x), (x_star, new.x_bar),
                          (y_star, new.y), (u_star, new.u)]:
        assert norm(after - before) <= 1e-12


def test_pdpi_step_preserves_subspace_invariants():
    rng = np.random.default_rng(3)
    prob, *_ = _fixed_point_instance()
    state = initial_state(prob.P_V(rng.standard_normal(2)),
                          prob.P_V.complement(rng.standard_normal(2)),
                          rng.standard_normal(2))
    steps = StepSizes(tau=0.5, gamma=0.5)
    for _ in range(25):
        state = pdpi_step(prob, steps, state)
        assert norm(prob.P_V.complement(state.x)) <= 1e-10 * (1 + norm(state.x))
        assert norm(prob.P_V(state.y)) <= 1e-10 * (1 + norm(state.y))


def test_solve_reaches_analytic_minimizer():
    prob, x_star, *_ = _fixed_point_instance()
    init = initial_state(np.zeros(2), np.zeros(2), np.zeros(2))
    res = solve(prob, StepSizes(tau=0.6, gamma=0.6), init,
                StoppingRule(tol=1e-10, max_iters=20000))
    assert res.converged
    np.testing.assert_allclose(res.feasible_x, x_star, atol=1e-8)
    assert len(res.trace) == res.iterations


def test_solve_zero_iterations_returns_init():
    prob, *_ = _fixed_point_instance()
    init = initial_state(np.zeros(2), np.zeros(2), np.zeros(2))
    res = solve(prob, StepSizes(tau=0.6, gamma=0.6), init, StoppingRule(tol=1e-8, max_iters=0))
    assert res.iterations == 0
    assert len(res.trace) == 0
    assert not res.converged
    np.testing.assert_array_equal(res.state.x, init.x)


def test_solve_rejects_invalid_steps():
    prob, *_ = _fixed_point_instance()
    init = initial_state(np.zeros(2), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        solve(prob, StepSizes(tau=2.0, gamma=2.0), init)


# ---------------------------------------------------------------------------
# reductions: the general step reproduces the special-case steppers
# ---------------------------------------------------------------------------


def _random_psd(rng, n, lip=1.0):
    M = rng.standard_normal((n, n))
    Q = M @ M.T
    return Q * (lip / np.linalg.eigvalsh(Q).max())


def test_reduces_to_forward_backward_with_subspaces():
    rng = np.random.default_rng(5)
    for trial in range(5):
        n = int(rng.integers(2, 6))
        Q = _random_psd(rng, n, lip=1.0)
        grad_h = lambda x, Q=Q: Q @ x
        alpha = float(rng.uniform(0.3, 1.5))
        prox_f = lambda z, t, alpha=alpha: soft_threshold(z, t * alpha)
        P_V = _random_projector(rng, n, int(rng.integers(1, n)))
        lam = float(rng.uniform(0.2, 1.8))  # < 2 / Lip
        prob = Problem(resolvent_a=prox_f, resolvent_binv=_zero_resolvent,
                       L=LinearMap.zero(n, 1), P_V=P_V,
                       P_W=SubspaceProjector.identity(1), C=grad_h, beta=1.0)
        x0 = P_V(rng.standard_normal(n))
        y0 = P_V.complement(rng.standard_normal(n))
        full = State(x=x0, x_bar=x0, y=y0, u=np.zeros(1), r=x0)
        fb = FBState(x=x0, y=y0)
        for _ in range(50):
            full = pdpi_step(prob, StepSizes(tau=lam, gamma=1.0), full)
            fb = fb_partial_inverse_step(prox_f, grad_h, P_V, lam, fb)
            assert np.max(np.abs(full.x - fb.x)) <= 1e-12
            assert np.max(np.abs(full.y - fb.y)) <= 1e-12


def test_reduces_to_full_space_primal_dual():
    rng = np.random.default_rng(6)
    for trial in range(5):
        n = int(rng.integers(2, 6))
        p = int(rng.integers(1, 4))
        Lmat = rng.standard_normal((p, n)) * 0.5
        L = LinearMap.from_matrix(Lmat)
        normL = np.linalg.norm(Lmat, 2)
        Q = _random_psd(rng, n, lip=1.0)
        grad_h = lambda x, Q=Q: Q @ x
        a = rng.standard_normal(n)
        prox_f = _shifted_quadratic_resolvent(a)
        b = rng.standard_normal(p)
        prox_g = lambda z, t, b=b: (z + t * b) / (1.0 + t)
        prox_gconj = conjugate_resolvent(prox_g)
        steps = default_stepsizes(normL, beta=1.0)
        prob = Problem(resolvent_a=prox_f, resolvent_binv=prox_gconj, L=L,
                       P_V=SubspaceProjector.identity(n),
                       P_W=SubspaceProjector.identity(p), C=grad_h, beta=1.0)
        x0 = rng.standard_normal(n)
        u0 = rng.standard_normal(p)
        full = State(x=x0, x_bar=x0, y=np.zeros(n), u=u0, r=x0)
        cd = CondatState(x=x0, x_bar=x0, u=u0)
        for _ in range(50):
            full = pdpi_step(prob, steps, full)
            cd = condat_step(prox_f, prox_gconj, grad_h, L, steps, cd)
            assert np.max(np.abs(full.x - cd.x)) <= 1e-12
            assert np.max(np.abs(full.u - cd.u)) <= 1e-12
            assert np.max(np.abs(full.x_bar - cd.x_bar)) <= 1e-12


# ---------------------------------------------------------------------------
# baseline steppers on their own
# ---------------------------------------------------------------------------


def test_condat_converges_on_quadratic_toy():
    # min (1/2)(x - 4)^2 + (1/2)(x - 2)^2 via splitting with L = Id
    a, b = np.array([4.0]), np.array([2.0])
    prox_f = _shifted_quadratic_resolvent(a)
    prox_gconj = conjugate_resolvent(lambda z, t: (z + t * b) / (1.0 + t))
    L = LinearMap.identity(1)
    steps = default_stepsizes(1.0)
    st = CondatState(x=np.zeros(1), x_bar=np.zeros(1), u=np.zeros(1))
    for _ in range(3000):
        st = condat_step(prox_f, prox_gconj, zero_operator, L, steps, st)
    np.testing.assert_allclose(st.x, [3.0], atol=1e-6)


def test_fb_fixed_point_and_convergence():
    # min over x in span{e1} of (1/2)||x - a||^2
    a = np.array([2.0, 5.0])
    P_V = SubspaceProjector.from_basis(np.array([[1.0], [0.0]]))
    grad_h = lambda x: x - a
    prox_f = lambda z, t: z  # f = 0
    st = FBState(x=np.zeros(2), y=np.zeros(2))
    for _ in range(300):
        st = fb_partial_inverse_step(prox_f, grad_h, P_V, 1.0, st)
    np.testing.assert_allclose(st.x, [2.0, 0.0], atol=1e-10)
    # stationarity: one more step stays put
    nxt = fb_partial_inverse_step(prox_f, grad_h, P_V, 1.0, st)
    assert norm(nxt.x - st.x) <= 1e-10 and norm(nxt.y - st.y) <= 1e-10


def test_vu_step_validation_and_fixed_point():
    assert not validate_vu_stepsizes(1.0, 2.0, 2.0, 1.0, 1.0).accepted
    assert validate_vu_stepsizes(0.5, 0.5, 0.5, 1.0, 1.0).accepted
    # trivial instance: A = I, b = 0, R = 0 row -> solution x = 0
    A = LinearMap.identity(2)
    R = LinearMap.from_matrix(np.zeros((1, 2)))
    prox_f = lambda z, t: soft_threshold(z, t)
    st = VuState(x=np.zeros(2), v1=np.zeros(2), v2=np.zeros(1))
    nxt = vu_step(prox_f, A, R, np.zeros(2), 0.5, 0.5, 0.5, st)
    assert norm(nxt.x - st.x) == 0.0
    assert norm(nxt.v1 - st.v1) == 0.0


def test_vu_converges_on_small_lasso_like_problem():
    rng = np.random.default_rng(9)
    Amat = rng.standard_normal((4, 6))
    Rmat = rng.standard_normal((2, 6))
    b = rng.standard_normal(4)
    A, R = LinearMap.from_matrix(Amat), LinearMap.from_matrix(Rmat)
    na, nr = np.linalg.norm(Amat, 2), np.linalg.norm(Rmat, 2)
    sigma = 0.4
    tau = 2.0 * 0.9 / (sigma * (na**2 + nr**2))
    assert validate_vu_stepsizes(tau, sigma, sigma, na, nr).accepted
    prox_f = lambda z, t: soft_threshold(z, t * 0.1)
    st = VuState(x=np.zeros(6), v1=np.zeros(4), v2=np.zeros(2))
    for _ in range(20000):
        st = vu_step(prox_f, A, R, b, tau, sigma, sigma, st)
    assert np.linalg.norm(Rmat @ st.x) <= 1e-6  # feasibility in the limit


# ---------------------------------------------------------------------------
# trace bookkeeping
# ---------------------------------------------------------------------------


def test_trace_rejects_unknown_columns(tmp_path):
    tr = Trace(["iteration", "value"])
    tr.add(iteration=1, value=0.5)
    with pytest.raises(KeyError):
        tr.add(bogus=1)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    assert path.read_text() == "iteration,value\n1,0.5\n"


def test_trace_csv_roundtrip_is_exact(tmp_path):
    tr = Trace(["iteration", "x"])
    vals = [1.0 / 3.0, 2.0 / 7.0, 1e-17]
    for k, v in enumerate(vals):
        tr.add(iteration=k, x=v)
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().strip().split("\n")[1:]
    parsed = [float(line.split(",")[1]) for line in lines]
    assert parsed == vals
