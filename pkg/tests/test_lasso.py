import numpy as np
import pytest

from pdpi import lasso


def test_generate_instance_deterministic():
    a = lasso.generate_instance(50, 25, 5, seed=42)
    b = lasso.generate_instance(50, 25, 5, seed=42)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.R, b.R)
    np.testing.assert_array_equal(a.b, b.b)
    c = lasso.generate_instance(50, 25, 5, seed=43)
    assert not np.array_equal(a.A, c.A)


def test_generate_instance_rank():
    inst = lasso.generate_instance(50, 25, 5, seed=0)
    assert np.linalg.matrix_rank(inst.R) == 5
    big = lasso.generate_instance(500, 250, 50, seed=0)
    assert big.A.shape == (250, 500) and big.R.shape == (50, 500) and big.b.shape == (250,)


def test_generate_instance_rejects_bad_dims():
    with pytest.raises(ValueError):
        lasso.generate_instance(10, 5, 10, seed=0)


def test_zero_data_gives_zero_solution():
    inst = lasso.LassoInstance(A=np.zeros((4, 6)), R=np.eye(2, 6), b=np.zeros(4))
    for method in lasso.METHODS:
        res = lasso.solve_formulation(inst, method, tol=1e-8, max_iters=100)
        np.testing.assert_allclose(res.x, np.zeros(6), atol=1e-12)
        assert res.objective == 0.0


def test_unknown_method_rejected():
    inst = lasso.generate_instance(20, 10, 3, seed=1)
    with pytest.raises(ValueError):
        lasso.solve_formulation(inst, "nope")


def test_small_instance_cross_method_agreement():
    inst = lasso.generate_instance(50, 25, 5, seed=7)
    objs = {}
    for method in lasso.METHODS:
        res = lasso.solve_formulation(inst, method, tol=1e-6)
        assert res.converged
        objs[method] = res.objective
        if method != "pd_generalized":
            # subspace methods are feasible by construction
            assert np.linalg.norm(inst.R @ res.x) <= 1e-10 * (1 + np.linalg.norm(res.x))
    ref = objs["pd_subspaces"]
    for method, val in objs.items():
        assert abs(val - ref) <= 1e-5 * max(1.0, abs(ref))


def test_subspace_iterates_feasible_throughout():
    inst = lasso.generate_instance(30, 15, 4, seed=3)
    res = lasso.solve_formulation(inst, "pd_subspaces", tol=1e-6)
    # the residual column records ||R x^k|| per iteration
    feas = res.trace.column("residual")
    assert np.all(feas <= 1e-10 * (1.0 + np.abs(res.trace.column("objective"))))


def test_kkt_residual_zero_at_origin_with_zero_data():
    inst = lasso.LassoInstance(A=np.zeros((3, 5)), R=np.eye(2, 5), b=np.zeros(3))
    assert lasso.kkt_residual(inst, np.zeros(5)) <= 1e-12


def test_kkt_residual_small_at_converged_solution():
    inst = lasso.generate_instance(40, 20, 5, seed=11)
    res = lasso.solve_formulation(inst, "pd_subspaces", tol=1e-6)
    assert lasso.kkt_residual(inst, res.x) <= 1e-4


def test_kkt_residual_detects_infeasibility():
    inst = lasso.generate_instance(20, 10, 3, seed=5)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(20)
    assert lasso.kkt_residual(inst, x) >= np.linalg.norm(inst.R @ x) > 0


def test_compare_report_empty_seeds(tmp_path):
    path = tmp_path / "report.csv"
    rows = lasso.compare_report([(20, 10, 3)], seeds=[], path=path)
    assert rows == []
    assert path.read_text().strip() == ",".join(lasso.REPORT_COLUMNS)


def test_compare_report_single_seed_reproducible(tmp_path):
    rows1 = lasso.compare_report([(20, 10, 3)], seeds=[0], tol=1e-5)
    rows2 = lasso.compare_report([(20, 10, 3)], seeds=[0], tol=1e-5)
    assert [r["mean_iters"] for r in rows1] == [r["mean_iters"] for r in rows2]
    assert [r["mean_kkt_residual"] for r in rows1] == [r["mean_kkt_residual"] for r in rows2]
    assert {r["method"] for r in rows1} == set(lasso.METHODS)
