import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finrescue.bailout import solve_problem1
from finrescue.clearing import clear_proportional, clearing_duals
from finrescue.errors import InvalidParameter, SizeGuardExceeded
from finrescue.generators import TopologySpec, four_node, generate
from finrescue.netmodel import FinancialNetwork
from finrescue.stochastic import (ScenarioBatch, ScenarioSampler, scenario_values,
                                  solve_saa_benders, solve_saa_direct, solve_saa_sgd)


def _with_assets(net, e):
    return FinancialNetwork(net.L, e, w=net.w)


def _W(net, c, e):
    return float(net.w @ clear_proportional(net, c, e=e).unpaid)


@pytest.fixture(scope="module")
def batch20():
    return ScenarioBatch.sample(ScenarioSampler("uniform", 0.0, 2.0), 4, 20, seed=7)


@pytest.fixture(scope="module")
def random10():
    net = generate(TopologySpec("fully_connected", {"n": 10}), seed=3)
    batch = ScenarioBatch.sample(ScenarioSampler("uniform", 0.0, 2.0 * float(net.e.mean()) + 1e-3),
                                 10, 50, seed=11)
    C = 0.5 * float(np.mean([clear_proportional(net, e=e).total_unpaid for e in batch.E]))
    return net, batch, C


def test_single_scenario_reduces_to_deterministic(fn):
    batch = ScenarioBatch(fn.e[None, :])
    direct, W = solve_saa_direct(fn, batch, 15)
    benders, _ = solve_saa_benders(fn, batch, 15)
    assert direct.objective == pytest.approx(13.05, abs=1e-6)
    assert benders.objective == pytest.approx(13.05, abs=1e-6)
    assert W.shape == (1,)


def test_identical_scenarios_reduce_to_deterministic():
    net = four_node(0.3)
    e = np.array([2.0, 0.5, 1.0, 3.0])
    expected = solve_problem1(_with_assets(net, e), 12)[0].objective
    batch = ScenarioBatch(np.tile(e, (6, 1)))
    assert solve_saa_direct(net, batch, 12)[0].objective == pytest.approx(expected, abs=1e-6)
    assert solve_saa_benders(net, batch, 12)[0].objective == pytest.approx(expected, abs=1e-6)


def test_direct_and_benders_agree_on_four_node(fn, batch20):
    direct, _ = solve_saa_direct(fn, batch20, 15)
    benders, state = solve_saa_benders(fn, batch20, 15)
    assert benders.objective == pytest.approx(direct.objective, abs=1e-6)
    assert state.gap <= 1e-8 * (1 + abs(state.theta))


def test_direct_and_benders_agree_on_random_network(random10):
    net, batch, C = random10
    direct, _ = solve_saa_direct(net, batch, C)
    benders, state = solve_saa_benders(net, batch, C, tol=1e-9)
    assert state.gap <= 1e-9 * (1 + abs(state.theta))
    assert benders.objective == pytest.approx(direct.objective, abs=1e-6)
    assert benders.c.sum() <= C + 1e-8


def test_benders_stops_in_first_round_without_defaults(fn):
    batch = ScenarioBatch(np.full((5, 4), 200.0))
    plan, state = solve_saa_benders(fn, batch, 3)
    assert state.rounds == 1
    assert state.theta == pytest.approx(5 * float(fn.w @ fn.pbar))
    assert plan.objective == pytest.approx(0.0, abs=1e-9)


def test_benders_bracketing(random10):
    net, batch, C = random10
    direct, _ = solve_saa_direct(net, batch, C)
    optimum = batch.M * float(net.w @ net.pbar) - batch.M * direct.objective
    _, state = solve_saa_benders(net, batch, C, tol=1e-9)
    thetas = [t for t, _ in state.history]
    assert all(b <= a + 1e-9 for a, b in zip(thetas, thetas[1:]))
    for theta, total in state.history:
        assert theta >= optimum - 1e-6
        assert total <= optimum + 1e-6


def test_benders_cuts_are_valid(fn, batch20):
    _, state = solve_saa_benders(fn, batch20, 15)
    rng = np.random.default_rng(0)
    for _ in range(100):
        c = rng.dirichlet(np.ones(4)) * 15 * rng.random()
        total = sum(clearing_duals(fn, c, e=e).value for e in batch20.E)
        for const, slope in state.cuts:
            assert const + slope @ c >= total - 1e-7


def test_sgd_constant_sampler_reaches_deterministic_optimum(fn):
    sampler = ScenarioSampler("constant", fn.e)
    plan, trace = solve_saa_sgd(fn, sampler, 15, iters=2000)
    assert _W(fn, plan.c, fn.e) == pytest.approx(13.05, rel=0.01)
    assert len(trace["W"]) == 2000


def test_sgd_iterates_stay_on_the_simplex(fn):
    plan, trace = solve_saa_sgd(fn, ScenarioSampler("uniform", 0.0, 2.0), 15, iters=300, seed=4)
    assert np.allclose(trace["budget"], 15, atol=1e-9)
    assert plan.c.min() >= 0
    assert plan.c.sum() == pytest.approx(15, abs=1e-9)


def test_sgd_rejects_bad_arguments(fn):
    with pytest.raises(InvalidParameter):
        solve_saa_sgd(fn, ScenarioSampler("constant", fn.e), 15, iters=0)
    with pytest.raises(InvalidParameter):
        solve_saa_sgd(fn, ScenarioSampler("constant", fn.e), -1)


def test_gradient_matches_finite_differences():
    net = generate(TopologySpec("fully_connected", {"n": 8}), seed=5)
    rng = np.random.default_rng(1)
    h = 1e-5
    checked = 0
    for _ in range(40):
        e = rng.uniform(0, 2 * net.e.mean(), net.n)
        c = rng.uniform(10 * h, 1, net.n)
        base = clear_proportional(net, c, e=e).default_flags
        stable = all(np.array_equal(clear_proportional(net, c + s * h * np.eye(net.n)[i], e=e)
                                    .default_flags, base)
                     for i in range(net.n) for s in (-1, 1))
        if not stable:
            continue
        nu = clearing_duals(net, c, e=e).nu
        fd = np.array([(_W(net, c + h * np.eye(net.n)[i], e) - _W(net, c - h * np.eye(net.n)[i], e))
                       / (2 * h) for i in range(net.n)])
        assert np.allclose(-nu, fd, atol=1e-3)
        checked += 1
    assert checked >= 10


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31 - 1))
def test_subgradient_inequality(seed):
    net = generate(TopologySpec("random_dense", {"n": 12}), seed % 1000)
    rng = np.random.default_rng(seed)
    e = rng.uniform(0, 1, net.n)
    c, c2 = rng.uniform(0, 3, (2, net.n))
    nu = clearing_duals(net, c, e=e).nu
    assert _W(net, c2, e) >= _W(net, c, e) - nu @ (c2 - c) - 1e-7


def test_saa_estimates_are_consistent(fn):
    sampler = ScenarioSampler("uniform", 0.0, 2.0)
    c = np.array([0, 0, 6, 9.0])
    a = scenario_values(fn, ScenarioBatch.sample(sampler, 4, 2000, seed=1), c)
    b = scenario_values(fn, ScenarioBatch.sample(sampler, 4, 2000, seed=2), c)
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_direct_size_guard():
    net = generate(TopologySpec("fully_connected", {"n": 100}), seed=0)
    batch = ScenarioBatch(np.ones((501, 100)))
    with pytest.raises(SizeGuardExceeded):
        solve_saa_direct(net, batch, 1)


def test_batch_validation(fn):
    with pytest.raises(InvalidParameter):
        ScenarioBatch(np.array([[1.0, -1.0, 0, 0]]))
    with pytest.raises(InvalidParameter):
        ScenarioBatch(np.zeros((0, 4)))
    with pytest.raises(InvalidParameter):
        solve_saa_direct(fn, ScenarioBatch(np.ones((2, 3))), 1)


def test_sampler_validation():
    with pytest.raises(InvalidParameter):
        ScenarioSampler("poisson")
    with pytest.raises(InvalidParameter):
        ScenarioSampler("uniform", -1.0, 1.0)
    with pytest.raises(InvalidParameter):
        ScenarioSampler("lognormal", 0.0, -0.5)


def test_batch_csv_round_trip(tmp_path, batch20):
    path = tmp_path / "scen.csv"
    batch20.to_csv(path)
    back = ScenarioBatch.from_csv(path)
    assert np.array_equal(back.E, batch20.E)
    assert back.source["file"] == str(path)


def test_lognormal_sampler_shapes():
    batch = ScenarioBatch.sample(ScenarioSampler("lognormal", np.zeros(3), 0.5), 3, 7, seed=0)
    assert batch.E.shape == (7, 3)
    assert batch.source["sampler"]["kind"] == "lognormal"
