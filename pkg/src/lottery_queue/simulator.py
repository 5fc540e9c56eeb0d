"""Discrete-event simulation of the terminal queue under a lottery policy.

Drivers of every group and passengers arrive as independent Poisson
streams.  The superposition is simulated as one exponential clock with the
total rate followed by a categorical draw of the event type.  A joining
driver draws a position from the lottery row of its group and the current
length; a passenger takes the driver at the front.

Statistics exclude a warm-up prefix.  Drivers who joined inside the
measurement window but are still queued when it closes are followed through
a drain phase, so long waits are not censored.  Standard errors come from
batch means over the measurement window, with ratio estimators where the
sample count is random.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats as sps

from .benchmarks import BenchmarkResult
from .equilibrium import EquilibriumSolution
from .lower import LowerLevelResult
from .model import CapacityVector, LotteryPolicy, MarketParams, fifo_lottery

EVENT_LOG_HEADER = ("time_hours", "event", "group", "position", "length_before", "length_after")

_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    events: int = 1_000_000
    warmup: float = 0.1
    seed: int = 0
    batches: int = 30
    event_log: Optional[Union[str, Path]] = None

    def __post_init__(self):
        if self.events <= 0:
            raise ValueError("events must be positive")
        if not 0.0 <= self.warmup <= 0.5:
            raise ValueError("warmup must lie in [0, 0.5]")
        if self.batches < 2:
            raise ValueError("need at least two batches")
        if self.events * (1 - self.warmup) < self.batches:
            raise ValueError("measurement window shorter than the number of batches")


@dataclass(frozen=True)
class SimPolicy:
    """Thresholds, lottery and per-(group, length) commission fees."""

    capacities: CapacityVector
    lottery: LotteryPolicy
    prices: tuple[np.ndarray, ...]

    def __post_init__(self):
        self.lottery.check(self.capacities)
        if len(self.prices) != len(self.capacities) or any(
                np.shape(p) != (c,) for p, c in zip(self.prices, self.capacities)):
            raise ValueError("need one price per group and under-capacity length")

    @classmethod
    def from_lower(cls, result: LowerLevelResult) -> "SimPolicy":
        caps = result.equilibrium.capacities
        prices = tuple(np.full(c, p) for c, p in zip(caps, result.prices.prices))
        return cls(caps, result.lottery, prices)

    @classmethod
    def from_benchmark(cls, result: BenchmarkResult) -> "SimPolicy":
        caps = CapacityVector(result.capacities)
        return cls(caps, fifo_lottery(caps), tuple(np.asarray(p, float) for p in result.prices))

    @classmethod
    def fifo(cls, capacities: CapacityVector, prices: Optional[Sequence[float]] = None) -> "SimPolicy":
        prices = prices or [0.0] * len(capacities)
        return cls(capacities, fifo_lottery(capacities),
                   tuple(np.full(c, float(p)) for c, p in zip(capacities, prices)))


@dataclass(frozen=True)
class SimStats:
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    occupancy_visits: np.ndarray
    waits: tuple[np.ndarray, ...]
    wait_se: tuple[np.ndarray, ...]
    wait_counts: tuple[np.ndarray, ...]
    profit_rate: float
    profit_se: float
    welfare_rate: float
    welfare_se: float
    events: int
    measured_hours: float
    batches: int
    arrivals: int
    joined: int
    balked: int
    matched: int
    in_queue_end: int
    lost_passengers: int


def _ratio(num: np.ndarray, den: np.ndarray):
    """Pooled ratio over batches (axis 0) and its batch-means standard error."""
    B = num.shape[0]
    tot_n, tot_d = num.sum(axis=0), den.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = tot_n / tot_d
        resid = num - est * den
        se = np.sqrt((resid ** 2).sum(axis=0) / (B * (B - 1))) / (tot_d / B)
    return est, se


def simulate(params: MarketParams, policy: SimPolicy, config: SimConfig = SimConfig()) -> SimStats:
    """Run one replication; deterministic for a fixed ``config.seed``."""
    caps = policy.capacities.capacities
    if len(caps) != params.group_count:
        raise ValueError("policy and params disagree on the number of groups")
    M, n_hat = len(caps), max(caps)
    mu = params.mu
    r, nu = params.driver_opportunity_rate, params.platform_opportunity_rate
    rates = np.append(params.lam, mu)
    total = float(rates.sum())
    cum_type = np.cumsum(rates / total)
    cum_rows = [[np.cumsum(row).tolist() for row in group] for group in policy.lottery.rows]
    profit_margin = [(p - params.platform_trip_cost).tolist() for p in policy.prices]
    surplus = [params.surplus(m) for m in range(M)]

    B = config.batches
    warm = int(round(config.warmup * config.events))
    measured = config.events - warm
    time_in = np.zeros((B, n_hat + 1))
    visits = np.zeros(n_hat + 1, dtype=np.int64)
    wsum = [np.zeros((B, c)) for c in caps]
    wcnt = [np.zeros((B, c)) for c in caps]
    profit_b = np.zeros(B)
    welfare_b = np.zeros(B)
    span_b = np.zeros(B)

    rng = np.random.default_rng(config.seed)
    queue: list = []  # (arrival time, group, length at arrival, batch or -1)
    t = 0.0
    arrivals = joined = balked = matched = lost = 0
    outstanding = 0
    i = 0
    log_file = open(config.event_log, "w", newline="") if config.event_log else None
    writer = csv.writer(log_file) if log_file else None
    if writer:
        writer.writerow(EVENT_LOG_HEADER)
    try:
        while i < config.events or outstanding > 0:
            dts = rng.exponential(1.0 / total, _CHUNK).tolist()
            kinds = np.searchsorted(cum_type, rng.random(_CHUNK), side="right").tolist()
            us = rng.random(_CHUNK).tolist()
            for dt, kind, u in zip(dts, kinds, us):
                if i >= config.events and outstanding == 0:
                    break
                n = len(queue)
                in_window = warm <= i < config.events
                b = (i - warm) * B // measured if in_window else -1
                if in_window:
                    time_in[b, n] += dt
                    span_b[b] += dt
                    visits[n] += 1
                t += dt
                i += 1
                kind = min(kind, M)
                if kind < M:
                    arrivals += 1
                    if n < caps[kind]:
                        row = cum_rows[kind][n]
                        pos = min(bisect_right(row, u * row[-1]), n)
                        queue.insert(pos, (t, kind, n, b))
                        joined += 1
                        if b >= 0:
                            outstanding += 1
                        if writer:
                            writer.writerow((f"{t:.9f}", "join", kind, pos + 1, n, n + 1))
                    else:
                        balked += 1
                        if writer:
                            writer.writerow((f"{t:.9f}", "balk", kind, "", n, n))
                elif n > 0:
                    t0, g, n0, b0 = queue.pop(0)
                    matched += 1
                    if b0 >= 0:
                        wait = t - t0
                        wsum[g][b0, n0] += wait
                        wcnt[g][b0, n0] += 1
                        profit_b[b0] += profit_margin[g][n0] - nu * wait
                        welfare_b[b0] += surplus[g] - (r + nu) * wait
                        outstanding -= 1
                    if writer:
                        writer.writerow((f"{t:.9f}", "match", g, 1, n, n - 1))
                else:
                    lost += 1
                    if writer:
                        writer.writerow((f"{t:.9f}", "passenger_lost", "", "", 0, 0))
    finally:
        if log_file:
            log_file.close()

    occ, occ_se = _ratio(time_in, np.broadcast_to(span_b[:, None], time_in.shape))
    waits, wait_se, counts = [], [], []
    for s, c in zip(wsum, wcnt):
        est, se = _ratio(s, c)
        waits.append(est)
        wait_se.append(se)
        counts.append(c.sum(axis=0).astype(np.int64))
    profit, profit_se = _ratio(profit_b[:, None], span_b[:, None])
    welfare, welfare_se = _ratio(welfare_b[:, None], span_b[:, None])
    return SimStats(occ, occ_se, visits, tuple(waits), tuple(wait_se), tuple(counts),
                    float(profit[0]), float(profit_se[0]), float(welfare[0]), float(welfare_se[0]),
                    i, float(span_b.sum()), B, arrivals, joined, balked, matched, len(queue), lost)


@dataclass(frozen=True)
class AgreementRow:
    quantity: str  # "wait" or "occupancy"
    group: Optional[int]
    length: int
    analytic: float
    empirical: float
    se: float
    lower: float
    upper: float
    samples: int
    covered: Optional[bool]  # None when below the sample threshold


@dataclass(frozen=True)
class AgreementReport:
    rows: tuple[AgreementRow, ...]
    confidence: float
    family_wise: bool
    critical_value: float

    @property
    def checked(self) -> tuple[AgreementRow, ...]:
        return tuple(row for row in self.rows if row.covered is not None)

    @property
    def all_covered(self) -> bool:
        return all(row.covered for row in self.checked)


def compare(stats: SimStats, eq: EquilibriumSolution, confidence: float = 0.95,
            min_samples: int = 100, family_wise: bool = True) -> AgreementReport:
    """Check analytic waits and occupancies against simulated confidence intervals.

    With ``family_wise`` the level is split over all checked states
    (Bonferroni), so ``confidence`` is the probability that every interval
    covers simultaneously; otherwise it applies to each interval alone.
    Intervals use Student-t quantiles with ``batches - 1`` degrees of freedom.
    """
    P = eq.steady.probabilities
    entries = []
    for m, W in enumerate(eq.waiting.expected):
        for n, w in enumerate(W):
            entries.append(("wait", m, n, float(w), float(stats.waits[m][n]),
                            float(stats.wait_se[m][n]), int(stats.wait_counts[m][n])))
    for n, p in enumerate(P):
        entries.append(("occupancy", None, n, float(p), float(stats.occupancy[n]),
                        float(stats.occupancy_se[n]), int(stats.occupancy_visits[n])))
    k = max(1, sum(1 for e in entries if e[6] >= min_samples)) if family_wise else 1
    alpha = 1.0 - confidence
    crit = float(sps.t.ppf(1.0 - alpha / (2 * k), stats.batches - 1))
    rows = []
    for quantity, m, n, a, e, se, count in entries:
        lo, hi = e - crit * se, e + crit * se
        covered = None if count < min_samples else bool(lo <= a <= hi)
        rows.append(AgreementRow(quantity, m, n, a, e, se, lo, hi, count, covered))
    return AgreementReport(tuple(rows), confidence, family_wise, crit)
