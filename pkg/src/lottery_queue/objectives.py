"""Profit and welfare rates, capacity bounds, price/wait coupling and the
over-capacity extension of a lottery."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .equilibrium import EquilibriumSolution, WaitSystem, tri_index
from .model import CapacityVector, LotteryPolicy, MarketParams, PricePolicy

Kind = Literal["profit", "welfare"]
Weighting = Literal["steady_state", "unweighted"]

OVER_CAPACITY_BACK = "back"


@dataclass(frozen=True)
class ObjectiveReport:
    kind: str
    total_rate: float
    per_group: tuple[float, ...]


def state_weights(params: MarketParams, eq: EquilibriumSolution,
                  weighting: Weighting = "steady_state") -> tuple[np.ndarray, ...]:
    """Weight of each (group, queue length) term in the objective.

    ``steady_state`` gives P_n * lambda_m, i.e. the long-run rate of group-m
    drivers joining at length n.  ``unweighted`` drops P_n, which is the form
    the reduced bi-level problems are printed in; it is kept for diagnosis.
    """
    P = eq.steady.probabilities
    out = []
    for lam, cap in zip(params.arrival_rates, eq.capacities):
        if weighting == "steady_state":
            out.append(lam * P[:cap])
        elif weighting == "unweighted":
            out.append(np.full(cap, lam))
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
    return tuple(out)


def profit_rate(params: MarketParams, eq: EquilibriumSolution,
                weighting: Weighting = "steady_state") -> ObjectiveReport:
    if eq.prices is None:
        raise ValueError("profit_rate needs an equilibrium with a price policy")
    nu = params.platform_opportunity_rate
    per_group = []
    for m, (omega, W) in enumerate(zip(state_weights(params, eq, weighting), eq.waiting.expected)):
        margin = eq.prices.prices[m] - params.platform_trip_cost - nu * W
        per_group.append(float(omega @ margin))
    return ObjectiveReport("profit", float(sum(per_group)), tuple(per_group))


def welfare_rate(params: MarketParams, eq: EquilibriumSolution,
                 weighting: Weighting = "steady_state") -> ObjectiveReport:
    cost = params.driver_opportunity_rate + params.platform_opportunity_rate
    per_group = []
    for m, (omega, W) in enumerate(zip(state_weights(params, eq, weighting), eq.waiting.expected)):
        per_group.append(float(omega @ (params.surplus(m) - cost * W)))
    return ObjectiveReport("welfare", float(sum(per_group)), tuple(per_group))


def objective_report(params: MarketParams, eq: EquilibriumSolution, kind: Kind,
                     weighting: Weighting = "steady_state") -> ObjectiveReport:
    if kind == "profit":
        return profit_rate(params, eq, weighting)
    if kind == "welfare":
        return welfare_rate(params, eq, weighting)
    raise ValueError(f"unknown objective kind {kind!r}")


def capacity_upper_bound(params: MarketParams, group: int, kind: Kind) -> int:
    """Largest threshold that can be optimal for ``group``.

    The profit bound is evaluated at the highest price a driver would ever
    accept (zero wait), which makes it hold for every price.  Returns 0 for a
    group that never creates surplus; see :func:`is_degenerate`.
    """
    params._check_group(group)
    mu, nu, r = params.mu, params.platform_opportunity_rate, params.driver_opportunity_rate
    if kind == "profit":
        if nu <= 0:
            raise ValueError("profit bound needs a positive platform opportunity rate")
        value = mu * (params.price_ceiling(group) - params.platform_trip_cost) / nu
    elif kind == "welfare":
        if nu + r <= 0:
            raise ValueError("welfare bound needs a positive total opportunity rate")
        value = mu * params.surplus(group) / (nu + r)
    else:
        raise ValueError(f"unknown objective kind {kind!r}")
    # guard the ceiling against representation noise (e.g. 58.999999...)
    return max(0, math.ceil(round(value - 0.5, 9)))


def is_degenerate(params: MarketParams, group: int, kind: Kind) -> bool:
    return capacity_upper_bound(params, group, kind) == 0


def price_from_wait(params: MarketParams, group: int, xi: float) -> float:
    """Commission that leaves a driver indifferent at expected wait ``xi``.

    Negative results (a subsidy) are returned as-is; callers decide whether
    they are acceptable.
    """
    params._check_group(group)
    if xi < 0:
        raise ValueError("xi must be non-negative")
    return params.rewards[group] - params.driver_opportunity_rate * (params.trip_duration + xi)


def wait_from_price(params: MarketParams, group: int, price: float) -> float:
    params._check_group(group)
    return (params.rewards[group] - price) / params.driver_opportunity_rate - params.trip_duration


def min_tolerable_wait(params: MarketParams, group: int) -> Optional[float]:
    """Wait below which the commission cap (if any) binds."""
    if params.commission_cap is None:
        return None
    return wait_from_price(params, group, params.commission_cap)


class CertificateError(RuntimeError):
    pass


@dataclass(frozen=True)
class Extension:
    """Over-capacity placement rule plus its balking certificate."""

    lottery: LotteryPolicy
    over_capacity_waits: tuple[np.ndarray, ...]
    max_under_capacity_wait: tuple[float, ...]
    holds: bool
    utility_holds: Optional[bool] = None


def over_capacity_waits(params: MarketParams, capacities: CapacityVector, lottery: LotteryPolicy,
                        slack: int = 10) -> tuple[np.ndarray, ...]:
    """Expected wait of a hypothetical joiner placed at the back at every n >= N_m.

    Lengths below N_hat reuse the back-position conditional wait; beyond N_hat
    nobody joins until the driver has advanced to position N_hat.
    """
    system = WaitSystem(params, capacities, [lottery.flat(m) for m in range(len(capacities))])
    n_hat = capacities.n_hat
    w = system.w
    last = w[tri_index(n_hat - 1, n_hat)]
    out = []
    for cap in capacities:
        lengths = np.arange(cap, n_hat + slack + 1)
        waits = np.where(lengths < n_hat,
                         w[tri_index(np.minimum(lengths, n_hat - 1), np.minimum(lengths, n_hat - 1) + 1)],
                         (lengths + 1 - n_hat) / params.mu + last)
        out.append(waits)
    return tuple(out)


def extend_policy(params: MarketParams, lottery: LotteryPolicy, capacities: CapacityVector,
                  prices: Optional[PricePolicy] = None, slack: int = 10,
                  strict: bool = True) -> Extension:
    """Attach back-of-queue placement for over-capacity joiners and certify it.

    The certificate checks that every over-capacity wait on the horizon
    ``N_m .. N_hat + slack`` strictly exceeds the largest under-capacity
    expected wait of that group.  With ``prices`` it also checks that the
    joining utility there is negative, which is what actually makes drivers
    balk when a commission cap leaves them slack.
    """
    lottery.check(capacities)
    system = WaitSystem(params, capacities, [lottery.flat(m) for m in range(len(capacities))])
    W = system.expected()
    over = over_capacity_waits(params, capacities, lottery, slack)
    ceilings = tuple(float(np.max(Wm)) for Wm in W)
    holds = all(float(np.min(o)) > c for o, c in zip(over, ceilings))
    utility_holds = None
    if prices is not None:
        r, td = params.driver_opportunity_rate, params.trip_duration
        utility_holds = all(
            float(np.max(params.rewards[m] - prices.prices[m] - r * (td + over[m]))) < 0
            for m in range(len(capacities)))
    if strict and not holds:
        raise CertificateError("back placement does not push over-capacity waits above the "
                               "under-capacity maximum")
    extended = LotteryPolicy(lottery.rows, OVER_CAPACITY_BACK)
    return Extension(extended, over, ceilings, holds, utility_holds)
