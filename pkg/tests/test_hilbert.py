import numpy as np
import pytest

from pdpi.hilbert import LinearMap, SubspaceProjector, hybrid_close, inner, norm, op_norm


def test_inner_positive_definite():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal(6)
        assert inner(x, x) >= 0
    assert inner(np.zeros(4), np.zeros(4)) == 0.0


def test_inner_dimension_mismatch():
    with pytest.raises(ValueError):
        inner(np.zeros(3), np.zeros(4))


def test_op_norm_identity_exact():
    for dim in (1, 3, 17):
        est = op_norm(LinearMap.identity(dim))
        assert est.converged
        assert est.value == 1.0


def test_op_norm_diagonal():
    L = LinearMap.from_matrix(np.diag([3.0, 1.0]))
    est = op_norm(L, max_iters=2000, tol=1e-12)
    assert est.converged
    assert abs(est.value - 3.0) <= 1e-8


def test_op_norm_matches_gram_eigendecomposition():
    # independent oracle: largest singular value via eig of the Gram matrix
    rng = np.random.default_rng(3)
    M = rng.standard_normal((8, 5))
    oracle = np.sqrt(np.max(np.linalg.eigvalsh(M.T @ M)))
    est = op_norm(LinearMap.from_matrix(M), max_iters=5000, tol=1e-13)
    assert est.converged
    assert abs(est.value - oracle) <= 1e-8 * oracle
    assert est.value <= oracle + 1e-12  # power iteration never overshoots


def test_op_norm_zero_map():
    est = op_norm(LinearMap.zero(4, 3))
    assert est.value == 0.0 and est.converged


def test_op_norm_budget_exhaustion_flag():
    # two nearly equal singular values make the ratio-convergence slow
    L = LinearMap.from_matrix(np.diag([1.0, 1.0 - 1e-12, 0.5]))
    est = op_norm(L, max_iters=1, tol=1e-16)
    assert not est.converged
    assert 0.0 <= est.value <= 1.0 + 1e-12


def test_adjoint_identity_random_pairs():
    rng = np.random.default_rng(11)
    M = rng.standard_normal((7, 4))
    L = LinearMap.from_matrix(M)
    for _ in range(100):
        x = rng.standard_normal(4)
        y = rng.standard_normal(7)
        lhs = inner(L(x), y)
        rhs = inner(x, L.adjoint(y))
        assert abs(lhs - rhs) <= 1e-10 * (1.0 + norm(x) * norm(y))


def _random_projector(rng, dim, rank):
    basis = rng.standard_normal((dim, rank))
    return SubspaceProjector.from_basis(basis)


def test_projector_idempotent_selfadjoint_nonexpansive():
    rng = np.random.default_rng(5)
    for rank in (1, 2, 4):
        P = _random_projector(rng, 6, rank)
        for _ in range(100):
            x = rng.standard_normal(6)
            y = rng.standard_normal(6)
            px = P(x)
            assert norm(P(px) - px) <= 1e-12 * (1.0 + norm(x))
            assert abs(inner(px, y) - inner(x, P(y))) <= 1e-10 * (1 + norm(x) * norm(y))
            assert norm(px - P(y)) <= norm(x - y) + 1e-12


def test_identity_and_zero_projectors():
    x = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(SubspaceProjector.identity(3)(x), x)
    assert np.array_equal(SubspaceProjector.zero(3)(x), np.zeros(3))


def test_projection_is_least_squares_solution():
    # P onto span{(1,1)/sqrt(2)}: the nearest multiple of (1,1) to (2,0)
    P = SubspaceProjector.from_basis(np.array([[1.0], [1.0]]))
    out = P(np.array([2.0, 0.0]))
    np.testing.assert_allclose(out, [1.0, 1.0], atol=1e-12)
    # oracle: minimize ||t*(1,1) - (2,0)|| over t
    t = np.linalg.lstsq(np.array([[1.0], [1.0]]), np.array([2.0, 0.0]), rcond=None)[0]
    np.testing.assert_allclose(out, t[0] * np.array([1.0, 1.0]), atol=1e-12)


def test_projector_dimension_check():
    P = SubspaceProjector.identity(3)
    with pytest.raises(ValueError):
        P(np.zeros(4))


def test_complement_decomposition():
    rng = np.random.default_rng(9)
    P = _random_projector(rng, 5, 2)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(P(x) + P.complement(x), x, atol=1e-12)
    assert abs(inner(P(x), P.complement(x))) <= 1e-10


def test_hybrid_close():
    assert hybrid_close(1.0, 1.0 + 5e-11)
    assert not hybrid_close(1.0, 1.1)
    assert hybrid_close(np.zeros(3), np.full(3, 1e-12))
