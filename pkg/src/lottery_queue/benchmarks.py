"""FIFO comparators: queue-length dependent (dynamic) and static pricing.

Every joiner goes to the back, so a driver who joins at length n waits
exactly (n + 1) / mu.  The schemes then only differ in how prices induce
the joining thresholds:

* dynamic: ``p_m^n = R_m - r (T_d + (n + 1) / mu)``, clipped at the cap,
  extracts all driver surplus state by state;
* static: one price per group (``price_scope="group"``) or one price for
  everybody (``price_scope="uniform"``); the threshold is whatever that price
  induces.

Thresholds are found by exhaustive search over the capacity-bound box.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .model import MarketParams
from .objectives import Kind, capacity_upper_bound

Scheme = Literal["dynamic", "static"]
PriceScope = Literal["group", "uniform"]

_UNSET = object()


@dataclass(frozen=True)
class BenchmarkResult:
    scheme: str
    kind: str
    capacities: tuple[int, ...]
    prices: tuple[np.ndarray, ...]
    objective: float
    probabilities: np.ndarray
    mean_waits: tuple[float, ...]
    throughputs: tuple[float, ...]
    price_scope: str = "group"

    @property
    def average_wait(self) -> float:
        """Throughput-weighted mean wait over all joiners (hours)."""
        x = np.asarray(self.throughputs)
        return float(np.asarray(self.mean_waits) @ x / x.sum()) if x.sum() > 0 else math.nan


def fifo_waits(mu: float, n_hat: int) -> np.ndarray:
    """Wait of a back-joiner at each length 0..n_hat-1."""
    return (np.arange(n_hat) + 1) / mu


def _cap(params: MarketParams, cap) -> float:
    if cap is _UNSET:
        cap = params.commission_cap
    return math.inf if cap is None else float(cap)


def _implementable(params: MarketParams, group: int, threshold, cap: float):
    """Whether some price <= cap makes group drivers balk at length ``threshold``."""
    r, mu = params.driver_opportunity_rate, params.mu
    return params.price_ceiling(group) - r * (np.asarray(threshold) + 1) / mu < cap


def _margins(params: MarketParams, group: int, n: np.ndarray, threshold, kind: Kind,
             scheme: Scheme, cap: float, price=None) -> np.ndarray:
    """Per-joiner objective contribution at lengths ``n`` (broadcast over ``threshold``)."""
    r, nu, mu = params.driver_opportunity_rate, params.platform_opportunity_rate, params.mu
    wait = (n + 1) / mu
    if kind == "welfare":
        return params.surplus(group) - (r + nu) * wait + 0 * np.asarray(threshold, dtype=float)
    if scheme == "dynamic":
        p = np.minimum(cap, params.price_ceiling(group) - r * wait)
        p = p + 0 * np.asarray(threshold, dtype=float)
    elif price is not None:
        p = np.asarray(price, dtype=float) + 0 * n
    else:
        p = np.minimum(cap, params.price_ceiling(group) - r * np.asarray(threshold, dtype=float) / mu) + 0 * n
    return p - params.platform_trip_cost - nu * wait


def _stationary(births: np.ndarray, mu: float) -> np.ndarray:
    """Stationary law over lengths 0..H for birth rates ``births[..., 0..H-1]``."""
    with np.errstate(divide="ignore"):
        steps = np.log(births) - math.log(mu)
    logq = np.concatenate((np.zeros(births.shape[:-1] + (1,)), np.cumsum(steps, axis=-1)), axis=-1)
    q = np.exp(logq - logq.max(axis=-1, keepdims=True))
    return q / q.sum(axis=-1, keepdims=True)


def fifo_evaluate(params: MarketParams, capacities, kind: Kind = "profit",
                  scheme: Scheme = "dynamic", cap=_UNSET, prices=None,
                  price_scope: PriceScope = "group") -> BenchmarkResult:
    """Objective and summary of a FIFO scheme at fixed thresholds.

    ``prices`` overrides the static per-group prices (used for a uniform
    price whose thresholds differ from the largest inducing price).
    Thresholds of 0 are allowed and mean the group never joins.
    """
    caps = tuple(int(c) for c in capacities)
    if len(caps) != params.group_count or min(caps) < 0 or max(caps) < 1:
        raise ValueError("need one non-negative threshold per group, at least one positive")
    cap_value = _cap(params, cap)
    n_hat = max(caps)
    n = np.arange(n_hat)
    births = (n[:, None] < np.asarray(caps)[None, :]) @ params.lam
    P = _stationary(births, params.mu)
    total = 0.0
    price_rows, waits, thr = [], [], []
    for m, (lam, c) in enumerate(zip(params.arrival_rates, caps)):
        lengths = np.arange(c)
        g = _margins(params, m, lengths, c, kind, scheme, cap_value,
                     None if prices is None else prices[m])
        total += lam * float(P[:c] @ g)
        r, mu = params.driver_opportunity_rate, params.mu
        if scheme == "dynamic":
            row = np.minimum(cap_value, params.price_ceiling(m) - r * (lengths + 1) / mu)
        elif prices is not None:
            row = np.full(c, float(prices[m]))
        else:
            row = np.full(c, min(cap_value, params.price_ceiling(m) - r * c / mu))
        price_rows.append(row)
        mass = P[:c].sum()
        waits.append(float(P[:c] @ ((lengths + 1) / mu) / mass) if c else math.nan)
        thr.append(lam * float(mass))
    return BenchmarkResult(scheme, kind, caps, tuple(price_rows), total, P, tuple(waits),
                           tuple(thr), price_scope)


def _bounds(params: MarketParams, kind: Kind) -> tuple[int, ...]:
    return tuple(max(1, capacity_upper_bound(params, m, kind)) for m in range(params.group_count))


def _log_cumsum_exp(x: np.ndarray) -> np.ndarray:
    """``out[k] = log sum_{i<k} exp(x_i)``, with ``out[0] = -inf``."""
    return np.concatenate(([-np.inf], np.logaddexp.accumulate(x))) if x.size else np.array([-np.inf])


def _signed_logs(v: np.ndarray):
    with np.errstate(divide="ignore"):
        return np.log(np.maximum(v, 0.0)), np.log(np.maximum(-v, 0.0))


def _scan_last(base_births, base_val, lam_last, last_val, last_price, N, mu):
    """Objective for every last-group threshold in ``N`` with the others fixed.

    ``base_births``/``base_val`` hold the other groups' joining rate and
    objective rate at lengths 0..H-1; ``last_val[n]`` is the last group's
    per-joiner contribution excluding a threshold-dependent price, which is
    ``last_price[N]``.  Up to length N the chain has birth rate base+lam, past
    it only base, so the stationary weights follow from two cumulative sums
    of log rates and every threshold costs O(1) after O(H) set-up.
    """
    H = base_births.size
    c_max = int(np.count_nonzero(base_births > 0))
    with np.errstate(divide="ignore"):
        A = np.concatenate(([0.0], np.cumsum(np.log((base_births + lam_last) / mu))))
        Cc = np.concatenate(([0.0], np.cumsum(np.log(base_births[:c_max] / mu))))
    LA = _log_cumsum_exp(A)
    vp, vm = _signed_logs(base_val + lam_last * last_val)
    LVp, LVm = _log_cumsum_exp(A[:H] + vp), _log_cumsum_exp(A[:H] + vm)
    # suffix sums over the tail (lengths past N reached through the other groups)
    rev = lambda x: np.concatenate((np.logaddexp.accumulate(x[::-1])[::-1], [-np.inf]))
    LT0 = rev(Cc[1:]) if c_max else np.array([-np.inf])
    bp, bm = _signed_logs(base_val[:c_max])
    LTp, LTm = rev(Cc[:c_max] + bp), rev(Cc[:c_max] + bm)

    N = np.asarray(N)
    inside = N < c_max
    Ni = np.minimum(N, max(c_max - 1, 0))
    with np.errstate(invalid="ignore"):
        jump = np.where(inside, A[N] - Cc[Ni] if c_max else -np.inf, -np.inf)
        a = LA[N + 1]
        b = np.where(inside, jump + LT0[Ni], -np.inf)
        s = np.maximum(a, b)
        Z = np.exp(a - s) + np.exp(b - s)
        num = (np.exp(LVp[N] - s) - np.exp(LVm[N] - s) + lam_last * last_price * np.exp(LA[N] - s)
               + np.where(inside, np.exp(jump + LTp[Ni] - s) - np.exp(jump + LTm[Ni] - s), 0.0))
    return num / Z


def _threshold_search(params: MarketParams, kind: Kind, scheme: Scheme, cap: float,
                      box) -> tuple[tuple[int, ...], float]:
    """Best thresholds over ``[1, box_m]``, scanning the last group in closed form."""
    M = params.group_count
    mu, lam = params.mu, params.lam
    r, nu = params.driver_opportunity_rate, params.platform_opportunity_rate
    last = M - 1
    N_last = np.arange(1, box[last] + 1)
    ok_last = _implementable(params, last, N_last, cap)
    if kind == "profit" and scheme == "static":
        price = np.minimum(cap, params.price_ceiling(last) - r * N_last / mu)
    else:
        price = np.zeros(N_last.size)
    best, best_val = None, -math.inf
    for prefix in itertools.product(*[range(1, b + 1) for b in box[:last]]):
        if any(not _implementable(params, m, c, cap) for m, c in enumerate(prefix)):
            continue
        H = max((box[last],) + prefix)
        n = np.arange(H)
        base_births = np.zeros(H)
        base_val = np.zeros(H)
        for m, c in enumerate(prefix):
            joins = n < c
            base_births += lam[m] * joins
            base_val += lam[m] * joins * _margins(params, m, n, c, kind, scheme, cap)
        if kind == "profit" and scheme == "static":
            last_val = -params.platform_trip_cost - nu * (n + 1) / mu
        else:
            last_val = _margins(params, last, n, 0, kind, scheme, cap)
        vals = _scan_last(base_births, base_val, lam[last], last_val, price, N_last, mu)
        vals = np.where(ok_last, vals, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best, best_val = prefix + (int(N_last[i]),), float(vals[i])
    if best is None:
        raise ValueError("no implementable thresholds under the commission cap")
    return best, best_val


def dynamic_pricing_optimum(params: MarketParams, kind: Kind = "profit", cap=_UNSET,
                            box=None) -> BenchmarkResult:
    """Best FIFO scheme with queue-length dependent prices.

    ``cap`` defaults to the market's commission cap; pass ``None`` to drop it.
    With a cap, thresholds whose balking cannot be induced by any price at
    or below the cap are excluded.
    """
    cap_value = _cap(params, cap)
    box = tuple(box) if box is not None else _bounds(params, kind)
    caps, _ = _threshold_search(params, kind, "dynamic", cap_value, box)
    return fifo_evaluate(params, caps, kind, "dynamic", cap_value)


def _uniform_thresholds(params: MarketParams, price: float) -> tuple[int, ...]:
    r, mu = params.driver_opportunity_rate, params.mu
    out = []
    for m in range(params.group_count):
        # joins at n iff ceiling - price - r (n + 1) / mu >= 0
        x = mu * (params.price_ceiling(m) - price) / r
        out.append(max(0, math.floor(round(x, 9))))
    return tuple(out)


def static_pricing_optimum(params: MarketParams, kind: Kind = "profit", cap=_UNSET,
                           price_scope: PriceScope = "group", box=None) -> BenchmarkResult:
    """Best FIFO scheme with prices that do not depend on the queue length.

    ``group`` scope searches one threshold per group (each realised by the
    largest price inducing it).  ``uniform`` scope charges every group the
    same fee and searches the finite set of fees at which some group's
    threshold changes.  As with the other schemes every group keeps a
    threshold of at least 1, so fees that price a group out are skipped.
    """
    cap_value = _cap(params, cap)
    box = tuple(box) if box is not None else _bounds(params, kind)
    if price_scope == "group":
        caps, _ = _threshold_search(params, kind, "static", cap_value, box)
        return fifo_evaluate(params, caps, kind, "static", cap_value)
    if price_scope != "uniform":
        raise ValueError(f"unknown price_scope {price_scope!r}")
    r, mu = params.driver_opportunity_rate, params.mu
    candidates = {params.price_ceiling(m) - r * N / mu
                  for m in range(params.group_count) for N in range(1, box[m] + 1)}
    if math.isfinite(cap_value):
        candidates = {p for p in candidates if p <= cap_value} | {cap_value}
    best = None
    for price in sorted(candidates, reverse=True):
        caps = tuple(min(c, b) for c, b in zip(_uniform_thresholds(params, price), box))
        if min(caps) < 1:
            continue
        res = fifo_evaluate(params, caps, kind, "static", cap_value,
                            prices=[price] * params.group_count, price_scope="uniform")
        if best is None or res.objective > best.objective:
            best = res
    if best is None:
        raise ValueError("no static price lets every group join")
    return best
