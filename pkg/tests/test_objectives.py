import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lottery_queue import (TABLE1, TABLE2, CapacityVector, PricePolicy,
                           capacity_upper_bound, extend_policy, fifo_lottery, lifo_lottery,
                           price_from_wait, profit_rate, random_lottery, solve_equilibrium,
                           solve_lower, uniform_lottery, wait_from_price, welfare_rate)
from lottery_queue.objectives import (CertificateError, is_degenerate, min_tolerable_wait,
                                      objective_report, over_capacity_waits)

from conftest import single_group

EPS = 1e-12  # stands in for rates the market type requires to be positive


def _eq(params, caps, lottery=None, prices=None):
    caps = CapacityVector(caps)
    return solve_equilibrium(params, caps, lottery or fifo_lottery(caps), prices)


def test_profit_vanishes_without_joiners():
    p = single_group(lam=EPS)
    eq = _eq(p, (3,), prices=PricePolicy((5.0,)))
    assert abs(profit_rate(p, eq).total_rate) < 1e-9
    assert abs(welfare_rate(p, eq).total_rate) < 1e-9


def test_two_state_profit():
    # P_0 = 1/2, so the rate is lam * P_0 * p
    p = single_group(lam=1.0, mu=1.0, nu=EPS, td=1.0)
    eq = _eq(p, (1,), prices=PricePolicy((10.0,)))
    assert profit_rate(p, eq).total_rate == pytest.approx(5.0, abs=1e-9)


def test_two_state_welfare():
    p = single_group(lam=1.0, mu=1.0, R=10.0, r=EPS, nu=EPS, td=EPS)
    assert welfare_rate(p, _eq(p, (1,))).total_rate == pytest.approx(5.0, abs=1e-9)


def test_three_state_fifo_welfare_by_hand():
    # states 0,1,2 equally likely; joiners at n=0,1 wait 1 and 2
    p = single_group(lam=1.0, mu=1.0, R=10.0, r=0.5, nu=0.5, td=EPS)
    value = welfare_rate(p, _eq(p, (2,))).total_rate
    assert value == pytest.approx((1 / 3) * (10 - 1) + (1 / 3) * (10 - 2), abs=1e-9)


def test_table1_profit_optimum_value():
    res = solve_lower(TABLE1, CapacityVector((12, 20)), "profit")
    assert res.objective_value == pytest.approx(2305.97, rel=0.01)


def test_table1_welfare_optimum_value():
    res = solve_lower(TABLE1, CapacityVector((12, 22)), "welfare")
    assert res.objective_value == pytest.approx(2306, rel=0.01)


def test_objective_report_dispatch():
    eq = _eq(TABLE1, (3, 4), prices=PricePolicy((50.0, 60.0)))
    assert objective_report(TABLE1, eq, "profit") == profit_rate(TABLE1, eq)
    with pytest.raises(ValueError):
        objective_report(TABLE1, eq, "revenue")
    with pytest.raises(ValueError):
        profit_rate(TABLE1, _eq(TABLE1, (3, 4)))


@pytest.mark.parametrize("flag,group,kind,expected", [
    (True, 0, "welfare", 59),
    (True, 1, "profit", 622),
    (False, 0, "welfare", 61),
    (False, 1, "profit", 645),
])
def test_capacity_bound_examples(flag, group, kind, expected):
    p = TABLE1.with_(charge_platform_trip_cost=flag)
    assert capacity_upper_bound(p, group, kind) == expected


def test_capacity_bound_arithmetic():
    # group 1 profit with the trip cost charged: ceil(46.1 * 67.5 / 5 - 0.5)
    p = TABLE1.with_(charge_platform_trip_cost=True)
    assert capacity_upper_bound(p, 1, "profit") == int(np.ceil(46.1 * (70 - 2.5) / 5 - 0.5))


def test_zero_surplus_group_is_degenerate():
    p = TABLE1.with_(rewards=(45 * 0.5, 90.0), charge_platform_trip_cost=True)
    assert capacity_upper_bound(p, 0, "welfare") == 0
    assert is_degenerate(p, 0, "welfare") and not is_degenerate(p, 1, "welfare")


def test_capacity_bound_errors():
    with pytest.raises(ValueError):
        capacity_upper_bound(TABLE1, 0, "revenue")
    with pytest.raises(IndexError):
        capacity_upper_bound(TABLE1, 2, "profit")


@given(st.floats(1, 100), st.floats(1.01, 3), st.floats(30, 200), st.floats(1.01, 2),
       st.sampled_from(["profit", "welfare"]))
def test_capacity_bound_monotone(mu, mu_factor, R, R_factor, kind):
    p = single_group(mu=mu, R=R, r=40.0, nu=5.0, td=0.5)
    base = capacity_upper_bound(p, 0, kind)
    assert capacity_upper_bound(p.with_(passenger_rate=mu * mu_factor), 0, kind) >= base
    assert capacity_upper_bound(p.with_(rewards=(R * R_factor,)), 0, kind) >= base


def test_price_wait_coupling():
    p = single_group(R=80.0, r=40.0, td=0.5)
    assert price_from_wait(p, 0, 0.5) == pytest.approx(40.0)
    assert price_from_wait(p, 0, (80 - 40 * 0.5) / 40) == pytest.approx(0.0, abs=1e-12)
    assert price_from_wait(p, 0, 5.0) < 0  # a subsidy is returned as-is
    with pytest.raises(ValueError):
        price_from_wait(p, 0, -1.0)


@given(st.floats(0, 10))
def test_wait_from_price_inverts(xi):
    assert wait_from_price(TABLE1, 1, price_from_wait(TABLE1, 1, xi)) == pytest.approx(xi, abs=1e-9)


def test_min_tolerable_wait_under_cap():
    for m in range(2):
        expected = (TABLE2.rewards[m] - 4.25) / 40.0 - 0.25
        assert min_tolerable_wait(TABLE2, m) == pytest.approx(expected)
    assert min_tolerable_wait(TABLE1, 0) is None


def test_extend_fifo_two_states():
    p = single_group(mu=1.0)
    caps = CapacityVector((2,))
    ext = extend_policy(p, fifo_lottery(caps), caps)
    assert ext.over_capacity_waits[0][0] == pytest.approx(3.0)
    assert ext.max_under_capacity_wait[0] == pytest.approx(2.0)
    assert ext.holds and ext.lottery.over_capacity_rule == "back"


def test_extend_single_state():
    p = single_group(mu=1.0)
    caps = CapacityVector((1,))
    ext = extend_policy(p, lifo_lottery(caps), caps)
    assert np.min(ext.over_capacity_waits[0]) >= 2.0 > 1.0 == pytest.approx(ext.max_under_capacity_wait[0])


def test_extend_table1_profit_optimum():
    caps = CapacityVector((12, 20))
    res = solve_lower(TABLE1, caps, "profit")
    ext = extend_policy(TABLE1, res.lottery, caps, res.prices)
    assert ext.holds and ext.utility_holds
    for m, cap in enumerate(caps):
        horizon = ext.over_capacity_waits[m][:11]  # lengths N_m .. N_m + 10
        assert horizon.size == 11 and np.all(horizon > ext.max_under_capacity_wait[m])


def test_extend_keeps_under_capacity_rows():
    caps = CapacityVector((4, 6))
    lot = random_lottery(caps, np.random.default_rng(3))
    ext = extend_policy(TABLE1, lot, caps, strict=False)
    for a, b in zip(lot.rows, ext.lottery.rows):
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


@given(st.lists(st.integers(1, 8), min_size=2, max_size=2), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_back_placement_certificate_holds_for_random_lotteries(caps, seed):
    # the back is the worst slot, so no lottery beats it in expected wait
    caps = CapacityVector(tuple(caps))
    ext = extend_policy(TABLE1, random_lottery(caps, np.random.default_rng(seed)), caps, strict=False)
    assert ext.holds


def test_certificate_failure_raises(monkeypatch):
    import lottery_queue.objectives as obj
    caps = CapacityVector((3,))
    monkeypatch.setattr(obj, "over_capacity_waits",
                        lambda params, c, lot, slack=10: (np.zeros(slack + 1),))
    p = single_group()
    with pytest.raises(CertificateError):
        extend_policy(p, fifo_lottery(caps), caps)
    assert not extend_policy(p, fifo_lottery(caps), caps, strict=False).holds


@st.composite
def priced_equilibria(draw):
    caps = CapacityVector(tuple(draw(st.lists(st.integers(1, 8), min_size=2, max_size=2))))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    prices = PricePolicy(tuple(draw(st.lists(st.floats(0, 50), min_size=2, max_size=2))))
    return solve_equilibrium(TABLE1, caps, random_lottery(caps, np.random.default_rng(seed)), prices)


@given(priced_equilibria(), st.floats(-20, 20))
@settings(max_examples=30, deadline=None)
def test_welfare_ignores_prices(eq, shift):
    moved = eq.with_prices(PricePolicy(tuple(p + shift for p in eq.prices.prices)))
    assert welfare_rate(TABLE1, moved) == welfare_rate(TABLE1, eq)


@given(priced_equilibria(), st.data())
@settings(max_examples=30, deadline=None)
def test_profit_strictly_decreasing_in_waits(eq, data):
    m = data.draw(st.integers(0, 1))
    n = data.draw(st.integers(0, eq.capacities[m] - 1))
    bump = data.draw(st.floats(1e-3, 1.0))
    expected = [w.copy() for w in eq.waiting.expected]
    expected[m][n] += bump
    worse = dataclasses.replace(eq, waiting=dataclasses.replace(eq.waiting, expected=tuple(expected)))
    assert profit_rate(TABLE1, worse).total_rate < profit_rate(TABLE1, eq).total_rate


@given(priced_equilibria())
@settings(max_examples=30, deadline=None)
def test_report_totals_are_group_sums(eq):
    for report in (profit_rate(TABLE1, eq), welfare_rate(TABLE1, eq)):
        assert report.total_rate == pytest.approx(sum(report.per_group), abs=1e-9)
        assert len(report.per_group) == 2


@given(st.lists(st.integers(1, 10), min_size=2, max_size=2), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_welfare_is_lottery_invariant(caps, seed):
    # Little's law: the joiner-weighted mean wait is the mean queue length
    caps = CapacityVector(tuple(caps))
    a = welfare_rate(TABLE1, solve_equilibrium(TABLE1, caps, fifo_lottery(caps))).total_rate
    b = welfare_rate(TABLE1, solve_equilibrium(TABLE1, caps, random_lottery(
        caps, np.random.default_rng(seed)))).total_rate
    assert b == pytest.approx(a, rel=1e-10)


@given(st.lists(st.integers(1, 10), min_size=2, max_size=2), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30, deadline=None)
def test_implied_profit_never_exceeds_welfare(caps, seed):
    caps = CapacityVector(tuple(caps))
    eq = solve_equilibrium(TABLE1, caps, random_lottery(caps, np.random.default_rng(seed)))
    xi = [float(W.max()) for W in eq.waiting.expected]
    eq = eq.with_prices(PricePolicy.from_waits(TABLE1, xi))
    assert profit_rate(TABLE1, eq).total_rate <= welfare_rate(TABLE1, eq).total_rate + 1e-9


def test_unweighted_variant_drops_occupancy():
    eq = _eq(TABLE1, (3, 4), uniform_lottery(CapacityVector((3, 4))))
    a = welfare_rate(TABLE1, eq, "unweighted").per_group[0]
    W = eq.waiting.expected[0]
    assert a == pytest.approx(31.3 * float(np.sum(TABLE1.surplus(0) - 45.0 * W)))
    with pytest.raises(ValueError):
        welfare_rate(TABLE1, eq, "bogus")


def test_over_capacity_waits_grow_linearly():
    caps = CapacityVector((3, 5))
    waits = over_capacity_waits(TABLE1, caps, fifo_lottery(caps), slack=4)
    np.testing.assert_allclose(waits[1], np.arange(6, 11) / 46.1)
    np.testing.assert_allclose(waits[0], np.arange(4, 11) / 46.1)
