"""Domain types for the terminal virtual queue and the driver joining rule.

Units are fixed throughout the package: time in hours, rates per hour,
money in the market's currency.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class MarketParams:
    """Economic environment of the terminal.

    ``charge_platform_trip_cost`` controls whether the platform's outside
    profit rate also accrues over the trip duration.  It is off by default,
    which is the accounting under which the Table-1 style instances give the
    published optimum (about 2306 per hour); switching it on charges
    ``nu * T_d`` per served driver.
    """

    arrival_rates: tuple[float, ...]
    passenger_rate: float
    rewards: tuple[float, ...]
    driver_opportunity_rate: float
    platform_opportunity_rate: float
    trip_duration: float
    commission_cap: Optional[float] = None
    charge_platform_trip_cost: bool = False

    def __post_init__(self):
        object.__setattr__(self, "arrival_rates", tuple(float(x) for x in self.arrival_rates))
        object.__setattr__(self, "rewards", tuple(float(x) for x in self.rewards))
        if len(self.arrival_rates) < 1:
            raise ValueError("at least one driver group is required")
        if len(self.rewards) != len(self.arrival_rates):
            raise ValueError("rewards and arrival_rates must have the same length")
        rates = (*self.arrival_rates, self.passenger_rate, self.driver_opportunity_rate,
                 self.platform_opportunity_rate, self.trip_duration)
        if any(not (x > 0 and math.isfinite(x)) for x in rates):
            raise ValueError("all rates and durations must be strictly positive and finite")
        if not any(self.surplus(m) > 0 for m in range(self.group_count)):
            raise ValueError("no driver group creates positive surplus at zero wait")

    @property
    def group_count(self) -> int:
        return len(self.arrival_rates)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.arrival_rates)

    @property
    def mu(self) -> float:
        return self.passenger_rate

    @property
    def platform_trip_cost(self) -> float:
        """Platform cost charged per served driver for the trip itself."""
        if self.charge_platform_trip_cost:
            return self.platform_opportunity_rate * self.trip_duration
        return 0.0

    def surplus(self, group: int) -> float:
        """Joint driver+platform surplus of one served group-``group`` driver at zero wait."""
        self._check_group(group)
        return (self.rewards[group] - self.driver_opportunity_rate * self.trip_duration
                - self.platform_trip_cost)

    def price_ceiling(self, group: int) -> float:
        """Largest commission a driver accepts when the wait is zero."""
        self._check_group(group)
        return self.rewards[group] - self.driver_opportunity_rate * self.trip_duration

    def with_(self, **changes) -> "MarketParams":
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return MarketParams(**data)

    def _check_group(self, group: int) -> None:
        if not (0 <= int(group) < self.group_count) or int(group) != group:
            raise IndexError(f"invalid group index {group!r} (have {self.group_count} groups)")


@dataclass(frozen=True)
class CapacityVector:
    """Per-group joining thresholds: group m joins while the queue is shorter than N_m."""

    capacities: tuple[int, ...]

    def __post_init__(self):
        caps = tuple(int(c) for c in self.capacities)
        if any(c != o for c, o in zip(caps, self.capacities)):
            raise ValueError("capacities must be integers")
        if not caps or min(caps) < 1:
            raise ValueError("every capacity must be >= 1")
        object.__setattr__(self, "capacities", caps)

    @property
    def n_hat(self) -> int:
        return max(self.capacities)

    def __getitem__(self, m: int) -> int:
        return self.capacities[m]

    def __len__(self) -> int:
        return len(self.capacities)

    def __iter__(self):
        return iter(self.capacities)


def _freeze(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LotteryPolicy:
    """Entry-position lotteries for every group and every under-capacity queue length.

    ``rows[m][n]`` is the probability vector over insertion positions
    ``1..n+1`` used when a group-m driver joins a queue of length n.
    Queue lengths at or beyond the group's capacity are governed by
    ``over_capacity_rule`` and carry no stored rows.
    """

    rows: tuple[tuple[np.ndarray, ...], ...]
    over_capacity_rule: Optional[str] = None

    def __post_init__(self):
        frozen = tuple(tuple(_freeze(r) for r in group) for group in self.rows)
        for m, group in enumerate(frozen):
            for n, row in enumerate(group):
                if row.shape != (n + 1,):
                    raise ValueError(f"group {m}, length {n}: expected {n + 1} positions, got {row.shape}")
                if np.any(row < 0) or abs(row.sum() - 1.0) > NORMALIZATION_TOL:
                    raise ValueError(f"group {m}, length {n}: not a probability vector")
        object.__setattr__(self, "rows", frozen)

    @property
    def capacities(self) -> CapacityVector:
        return CapacityVector(tuple(len(g) for g in self.rows))

    def flat(self, group: int) -> np.ndarray:
        """Row-major triangular layout: index n(n+1)/2 + (l-1)."""
        return np.concatenate(self.rows[group])

    @classmethod
    def from_flat(cls, flats: Sequence[np.ndarray], capacities: CapacityVector,
                  over_capacity_rule: Optional[str] = None) -> "LotteryPolicy":
        rows = []
        for vec, cap in zip(flats, capacities):
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (cap * (cap + 1) // 2,):
                raise ValueError("flat lottery has the wrong length for its capacity")
            rows.append(tuple(vec[n * (n + 1) // 2:(n + 1) * (n + 2) // 2] for n in range(cap)))
        return cls(tuple(rows), over_capacity_rule)

    def check(self, capacities: CapacityVector) -> None:
        if tuple(len(g) for g in self.rows) != capacities.capacities:
            raise ValueError(f"lottery shape {tuple(len(g) for g in self.rows)} does not match "
                             f"capacities {capacities.capacities}")


def _lottery(capacities: CapacityVector, make_row) -> LotteryPolicy:
    return LotteryPolicy(tuple(tuple(make_row(n) for n in range(cap)) for cap in capacities))


def fifo_lottery(capacities: CapacityVector) -> LotteryPolicy:
    """Every joiner goes to the back of the queue."""
    return _lottery(capacities, lambda n: np.eye(n + 1)[n])


def lifo_lottery(capacities: CapacityVector) -> LotteryPolicy:
    """Every joiner goes to the front of the queue."""
    return _lottery(capacities, lambda n: np.eye(n + 1)[0])


def uniform_lottery(capacities: CapacityVector) -> LotteryPolicy:
    return _lottery(capacities, lambda n: np.full(n + 1, 1.0 / (n + 1)))


def random_lottery(capacities: CapacityVector, rng: np.random.Generator) -> LotteryPolicy:
    rows = []
    for cap in capacities:
        group = []
        for n in range(cap):
            row = rng.dirichlet(np.ones(n + 1))
            row /= row.sum()
            group.append(row)
        rows.append(tuple(group))
    return LotteryPolicy(tuple(rows))


@dataclass(frozen=True)
class PricePolicy:
    """Per-group commission fees, with the equivalent maximum tolerable waits."""

    prices: tuple[float, ...]
    max_waits: tuple[float, ...] = field(default=())

    @classmethod
    def from_waits(cls, params: MarketParams, xi: Sequence[float]) -> "PricePolicy":
        prices = tuple(params.rewards[m] - params.driver_opportunity_rate * (params.trip_duration + x)
                       for m, x in enumerate(xi))
        return cls(prices, tuple(float(x) for x in xi))

    def validate(self, params: MarketParams) -> None:
        for m, p in enumerate(self.prices):
            if p > params.price_ceiling(m) + 1e-12:
                raise ValueError(f"group {m}: price {p} above the zero-wait ceiling")
            if params.commission_cap is not None and p > params.commission_cap + 1e-12:
                raise ValueError(f"group {m}: price {p} above the commission cap")


def joining_utility(params: MarketParams, group: int, price: float, expected_wait: float) -> float:
    """Expected utility of joining: ``R_m - p - r (T_d + W)``."""
    params._check_group(group)
    if expected_wait < 0:
        raise ValueError("expected_wait must be non-negative")
    return (params.rewards[group] - price
            - params.driver_opportunity_rate * (params.trip_duration + expected_wait))


def effective_arrival_rate(params: MarketParams, group: int, queue_length: int,
                           capacities: CapacityVector) -> float:
    params._check_group(group)
    if queue_length < 0:
        raise ValueError("queue_length must be non-negative")
    return params.arrival_rates[group] if queue_length < capacities[group] else 0.0


def joining_rates(params: MarketParams, capacities: Sequence[int], length: int) -> np.ndarray:
    """Vector of per-group joining rates at queue length ``length`` (threshold form)."""
    caps = np.asarray(tuple(capacities))
    return np.where(length < caps, params.lam, 0.0)


# Airport instance used in the numerical experiments (T_d given as 30 min).
TABLE1 = MarketParams(
    arrival_rates=(31.3, 10.6),
    passenger_rate=46.1,
    rewards=(80.0, 90.0),
    driver_opportunity_rate=40.0,
    platform_opportunity_rate=5.0,
    trip_duration=30 / 60,
)

# Regulated market with a commission cap (T_d given as 15 min).
TABLE2 = MarketParams(
    arrival_rates=(93.8, 31.9),
    passenger_rate=132.0,
    rewards=(7.5, 12.5),
    driver_opportunity_rate=40.0,
    platform_opportunity_rate=10.0,
    trip_duration=15 / 60,
    commission_cap=4.25,
)
