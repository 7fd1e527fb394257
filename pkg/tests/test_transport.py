import numpy as np
import pytest

from pdpi import transport
from pdpi.solver import StepSizes

TOY = """
[arcs]
count = 1

[routes]
1 = 1

[od]
1 = origin=1 dest=2 routes=1

[params]
eta = 1
b = 1
d = 1
theta = 1
demand_base = 5
demand_spread = 0
demand_beta = 2 2
"""


def _write(tmp_path, text, name="net.txt"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_bundled_network1_counts():
    net = transport.load_network("network1")
    assert net.n_arcs == 7 and net.n_routes == 6
    assert net.od_pairs == ((1, 4), (1, 5))
    # every route belongs to exactly one od pair and uses known arcs
    assert sorted(r for g in net.od_groups for r in g) == list(range(6))
    assert set(np.unique(net.incidence)) == {0.0, 1.0}


def test_bundled_network2_counts():
    net = transport.load_network("network2")
    assert net.n_arcs == 19 and net.n_routes == 25
    assert net.od_pairs == ((1, 2), (1, 3), (4, 2), (4, 3))
    assert net.incidence.sum(axis=1).min() >= 1  # every arc used by a route
    np.testing.assert_allclose(net.expansion_max, 200.0 * net.cap_spread)


def test_toy_network_single_arc(tmp_path):
    net = transport.load_network(_write(tmp_path, TOY))
    np.testing.assert_array_equal(net.incidence, [[1.0]])
    assert net.od_groups == ((0,),)


@pytest.mark.parametrize("mutation", [
    ("count = 1", "count = 0"),
    ("1 = 1\n\n[od]", "1 = 2\n\n[od]"),           # unknown arc
    ("routes=1", "routes="),                      # empty group
    ("eta = 1", "eta = 1 2"),                     # wrong length
    ("demand_beta = 2 2", "demand_beta = 2 -1"),  # invalid shape parameter
])
def test_schema_violations_rejected(tmp_path, mutation):
    before, after = mutation
    assert before in TOY
    with pytest.raises(transport.NetworkFormatError):
        transport.load_network(_write(tmp_path, TOY.replace(before, after)))


def test_missing_section_rejected(tmp_path):
    text = TOY.replace("[params]", "[parms]")
    with pytest.raises(transport.NetworkFormatError):
        transport.load_network(_write(tmp_path, text))


def test_sample_scenarios_support_and_determinism():
    net = transport.load_network("network1")
    s1 = transport.sample_scenarios(net, 4, seed=9)
    s2 = transport.sample_scenarios(net, 4, seed=9)
    np.testing.assert_array_equal(s1.capacities, s2.capacities)
    np.testing.assert_array_equal(s1.demands, s2.demands)
    assert abs(s1.probabilities.sum() - 1.0) <= 1e-12
    assert np.all(s1.capacities >= 100.0 * net.cap_base)
    assert np.all(s1.capacities <= 100.0 * net.cap_base + net.cap_spread)
    single = transport.sample_scenarios(net, 1, seed=0)
    assert single.probabilities[0] == 1.0


def test_objective_zero_point():
    net = transport.load_network("network1")
    scen = transport.sample_scenarios(net, 2, seed=1)
    x = np.zeros((2, net.n_arcs))
    f = np.zeros((2, net.n_routes))
    value, gx, gf, lip = transport.objective_and_gradient(net, scen, x, f)
    assert value == 0.0
    np.testing.assert_array_equal(gx, 0.0)
    assert lip > 0
    # gradient in f at zero flow is the free-flow time pushed onto routes
    expected = scen.probabilities[:, None] * (net.eta @ net.incidence)
    np.testing.assert_allclose(gf, np.broadcast_to(expected, gf.shape))


def test_objective_single_arc_closed_form(tmp_path):
    net = transport.load_network(_write(tmp_path, TOY))
    scen = transport.ScenarioSet(probabilities=np.array([1.0]),
                                 capacities=np.array([[1.0]]),
                                 demands=np.array([[2.0]]))
    value, *_ = transport.objective_and_gradient(
        net, scen, np.zeros((1, 1)), np.array([[2.0]]))
    assert abs(value - (2.0 + 0.075 * 4.0)) <= 1e-12


def test_gradient_matches_finite_differences():
    net = transport.load_network("network1")
    scen = transport.sample_scenarios(net, 2, seed=3)
    rng = np.random.default_rng(4)
    x = rng.uniform(0.0, 5.0, size=(2, net.n_arcs))
    f = rng.uniform(0.0, 50.0, size=(2, net.n_routes))
    value, gx, gf, _ = transport.objective_and_gradient(net, scen, x, f)
    eps = 1e-5

    def val(xx, ff):
        return transport.objective_and_gradient(net, scen, xx, ff)[0]

    for _ in range(20):
        s = rng.integers(0, 2)
        if rng.random() < 0.5:
            a = rng.integers(0, net.n_arcs)
            e = np.zeros_like(x)
            e[s, a] = eps
            fd = (val(x + e, f) - val(x - e, f)) / (2 * eps)
            ref = gx[s, a]
        else:
            r = rng.integers(0, net.n_routes)
            e = np.zeros_like(f)
            e[s, r] = eps
            fd = (val(x, f + e) - val(x, f - e)) / (2 * eps)
            ref = gf[s, r]
        assert abs(fd - ref) <= 1e-6 * (1.0 + abs(ref))


def test_lipschitz_formula():
    net = transport.load_network("network1")
    scen = transport.sample_scenarios(net, 3, seed=5)
    lip = transport.gradient_lipschitz(net, scen)
    n2 = np.linalg.norm(net.incidence, 2) ** 2
    chi = (0.15 * net.eta / scen.capacities).max(axis=1)
    expected = (scen.probabilities * np.maximum(1.0, n2 * chi)).max()
    assert abs(lip - expected) <= 1e-6 * expected


def test_zero_demand_solves_to_zero():
    net = transport.load_network("network1")
    zero_net = transport.TransportNetwork(
        **{**net.__dict__, "demand_base": np.zeros(2), "demand_spread": np.zeros(2)})
    scen = transport.sample_scenarios(zero_net, 2, seed=0)
    assert np.all(scen.demands == 0.0)
    for solver in (transport.solve_direct, transport.solve_subspace):
        sol = solver(zero_net, scen, tol=1e-10, max_iters=500)
        assert sol.converged
        np.testing.assert_allclose(sol.x, 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.f, 0.0, atol=1e-12)


def test_cross_method_agreement_network1():
    net = transport.load_network("network1")
    scen = transport.sample_scenarios(net, 2, seed=13)
    direct = transport.solve_direct(net, scen, tol=1e-10)
    subspace = transport.solve_subspace(net, scen, tol=1e-10)
    assert direct.converged and subspace.converged
    rel = abs(direct.objective - subspace.objective) / abs(direct.objective)
    assert rel <= 1e-6
    # the direct method projects f onto the demand simplices: exactly nonneg
    assert np.all(direct.f >= 0.0)
    # the subspace method enforces nonnegativity only asymptotically
    assert np.all(subspace.f >= -1e-6)
    for sol in (direct, subspace):
        d, c, s = transport._residuals(net, scen, sol.x, sol.f)
        assert d <= 1e-8
        assert c <= 1e-6
        assert s <= 1e-12
        assert np.all(sol.x >= -1e-12)
        assert np.all(sol.x <= net.expansion_max + 1e-12)
    # the subspace iterates are consensual by construction at every step
    assert subspace.trace.column("consensus_residual").max() <= 1e-12


def test_invalid_steps_rejected():
    net = transport.load_network("network1")
    scen = transport.sample_scenarios(net, 2, seed=0)
    with pytest.raises(ValueError):
        transport.solve_direct(net, scen, steps=StepSizes(tau=100.0, gamma=100.0))
