import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from finrescue import build_network
from finrescue.bailout import (BailoutProblem, aon_value, injection_lp, solve_problem1,
                               solve_problem1_aon, solve_problem1_demange,
                               solve_problem1_lagrangian, solve_problem3)
from finrescue.clearing import clear_all_or_nothing, clear_proportional
from finrescue.errors import BudgetExceeded, InvalidParameter
from finrescue.generators import (TopologySpec, gen_core_periphery_fixed, gen_knapsack, generate)
from finrescue.netmodel import default_mask

from oracles import knapsack_brute


@pytest.mark.parametrize("method", ["highs", "simplex"])
def test_problem1_four_node(fn, method):
    plan, res = solve_problem1(fn, 15, method=method)
    assert np.allclose(plan.c, [0, 0, 6, 9], atol=1e-6)
    assert np.allclose(res.p, [76, 20, 75, 10], atol=1e-6)
    assert plan.objective == pytest.approx(13.05, abs=1e-6)
    assert res.meta["lp_mismatch"] <= 1e-6


def test_problem1_zero_budget(fn):
    plan, res = solve_problem1(fn, 0)
    assert plan.objective == pytest.approx(clear_proportional(fn).W, abs=1e-9)


def test_problem1_full_budget(fn):
    plan, res = solve_problem1(fn, fn.pbar.sum())
    assert plan.objective == pytest.approx(0, abs=1e-9)
    assert np.allclose(res.p, fn.pbar)


def test_problem1_rejects_negative_budget(fn):
    with pytest.raises(InvalidParameter):
        solve_problem1(fn, -1)


def test_lagrangian_four_node(fn):
    plan, res = solve_problem1_lagrangian(fn, 1.0)
    assert np.allclose(plan.c, [0, 0, 8.5, 9], atol=1e-6)
    assert np.allclose(res.p, [81, 20, 80, 10], atol=1e-6)
    assert plan.objective == pytest.approx(26.05, abs=1e-6)
    assert plan.c[0] == 0


def test_lagrangian_solvent_network_injects_nothing(fn):
    rich = fn.with_assets(fn.pbar + 1)
    plan, _ = solve_problem1_lagrangian(rich, 0.01)
    assert plan.C == 0


def test_lagrangian_free_cash_is_capped(fn):
    plan, res = solve_problem1_lagrangian(fn, 0.0)
    assert "free_cash_capped" in plan.meta["flags"]
    assert plan.C <= clear_proportional(fn).total_unpaid + 1e-9
    assert res.W == pytest.approx(0, abs=1e-9)


def test_lagrangian_consistency(fn):
    lag, _ = solve_problem1_lagrangian(fn, 1.0)
    plan, _ = solve_problem1(fn, lag.C)
    assert plan.objective == pytest.approx(lag.meta["W"], abs=1e-6)


def test_demange_zero_budget(fn):
    plan, res = solve_problem1_demange(fn, 0)
    assert np.all(plan.c == 0)
    assert np.allclose(res.p, clear_proportional(fn).p)


def test_demange_four_node(fn):
    plan, res = solve_problem1_demange(fn, 15)
    assert plan.objective == pytest.approx(13.05, abs=1e-4)
    assert plan.meta["rounds"] <= fn.n
    assert plan.meta["targets"] == [3, 2]
    with pytest.raises(InvalidParameter):
        solve_problem1_demange(fn, 15, delta=0)


def test_bailout_problem_dispatch(fn):
    plan, _ = BailoutProblem("problem1", C=15).solve(fn)
    assert plan.objective == pytest.approx(13.05)
    plan, _ = BailoutProblem("problem1_lagrangian", lam=1.0).solve(fn)
    assert plan.objective == pytest.approx(26.05)
    with pytest.raises(InvalidParameter):
        BailoutProblem("problem9")
    with pytest.raises(InvalidParameter):
        BailoutProblem("problem1", C=-2)


def test_problem3_small_default_weight_matches_problem1(fn):
    net = fn.with_weights(s=np.full(4, 1e-9))
    plan, res, d = solve_problem3(net, 15)
    assert plan.objective == pytest.approx(13.05, abs=1e-6)


def test_problem3_solvent(fn):
    rich = fn.with_assets(fn.pbar)
    plan, res, d = solve_problem3(rich, 5)
    assert np.all(d == 0) and plan.objective == pytest.approx(0, abs=1e-9)


def test_problem3_core_periphery_full_rescue():
    net = gen_core_periphery_fixed()
    net = net.with_weights(w=np.full(net.n, 1e-9), s=np.ones(net.n))
    plan, res, d = solve_problem3(net, 600)
    assert plan.objective == pytest.approx(0, abs=1e-6)
    assert res.n_defaults == 0


def test_problem3_requires_positive_weights(fn):
    with pytest.raises(InvalidParameter):
        solve_problem3(_zero_s(fn), 5)


def _zero_s(net):
    # FinancialNetwork rejects s <= 0, so build one by hand for the precondition check
    obj = object.__new__(type(net))
    obj.__dict__.update(net.__dict__)
    obj.__dict__["s"] = np.zeros(net.n)
    return obj


def test_problem3_node_limit_can_keep_incumbent():
    net = gen_core_periphery_fixed()
    net = net.with_weights(w=np.full(net.n, 1e-9), s=np.ones(net.n))
    with pytest.raises(BudgetExceeded):
        solve_problem3(net, 250, node_limit=3)
    plan, res, d = solve_problem3(net, 250, node_limit=3, keep_incumbent=True)
    assert "node_limit" in plan.meta["flags"]
    assert plan.c.sum() <= 250 + 1e-8


def test_aon_knapsack():
    plan, res, d = solve_problem1_aon(gen_knapsack([3, 5, 7]), 10)
    assert plan.objective == pytest.approx(10)
    assert aon_value(gen_knapsack([3, 5, 7]), plan.c) == pytest.approx(10)


def test_aon_zero_budget(fn):
    plan, res, d = solve_problem1_aon(fn, 0)
    assert np.array_equal(res.p, clear_all_or_nothing(fn).p)


def test_aon_core_periphery_gap_certificate():
    net = generate(TopologySpec("cvx_core_periphery", {"w_core": 10.0}), seed=0)
    plan, res, d = solve_problem1_aon(net, 300, 1e-4)
    assert plan.meta["gap"] <= 1e-4
    assert plan.objective <= plan.meta["bound"] + 1e-9
    assert plan.objective == pytest.approx(float(net.w @ res.p))


@given(st.lists(st.integers(1, 20), min_size=1, max_size=7), st.integers(0, 60))
def test_aon_knapsack_brute_force(values, C):
    plan, res, d = solve_problem1_aon(gen_knapsack(values), C)
    assert plan.objective == pytest.approx(knapsack_brute(values, C), abs=1e-9)


# liabilities are either absent or at least a thousandth of a currency unit
amounts = st.floats(0, 10).map(lambda v: v if v >= 1e-3 else 0.0)


def small_net():
    @st.composite
    def build(draw):
        n = draw(st.integers(2, 6))
        L = draw(arrays(np.float64, (n, n), elements=amounts))
        mask = draw(arrays(np.bool_, (n, n)))
        L = np.where(mask, L, 0.0) * (1 - np.eye(n))
        e = draw(arrays(np.float64, n, elements=st.floats(0, 3)))
        w = draw(arrays(np.float64, n, elements=st.floats(0.1, 2)))
        return build_network(L, e, w=w, s=w[::-1] + 0.5)
    return build()


@given(small_net(), st.floats(0, 20))
def test_problem1_plan_properties(net, C):
    plan, res = solve_problem1(net, C)
    assert plan.c.sum() <= C + 1e-8
    assert np.all(plan.c >= 0)
    lp = injection_lp(net, C)
    x = np.concatenate([res.p, plan.c])
    r_ub, _ = lp.residuals(x)
    assert r_ub <= 1e-6
    assert np.allclose(res.p, clear_proportional(net, plan.c).p, atol=1e-6)


@given(small_net())
def test_value_function_convex_and_nonincreasing(net):
    grid = np.linspace(0, net.pbar.sum() / 2 + 1, 9)
    W = np.array([solve_problem1(net, C)[0].objective for C in grid])
    assert np.all(np.diff(W) <= 1e-7)
    assert np.all(W[:-2] - 2 * W[1:-1] + W[2:] >= -1e-6)


@given(small_net(), st.floats(0, 15))
def test_problem3_indicators_consistent(net, C):
    plan, res, d = solve_problem3(net, C)
    assert np.array_equal(d, default_mask(net.pbar, res.p, 1e-7).astype(int))
    assert plan.c.sum() <= C + 1e-8
    # the MILP never does worse than rescuing with the Problem I plan
    p1, r1 = solve_problem1(net, C)
    D1 = p1.objective + float(net.s @ r1.default_flags)
    assert plan.objective <= D1 + 1e-6


@given(small_net(), st.floats(0, 15))
def test_aon_budget_and_values(net, C):
    plan, res, d = solve_problem1_aon(net, C)
    assert plan.c.sum() <= C + 1e-8
    assert np.all((res.p == 0) | (res.p == net.pbar))
    assert plan.objective >= aon_value(net) - 1e-9
