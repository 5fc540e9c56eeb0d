"""Conditional waiting times, expected waits and the steady state of the queue.

For fixed thresholds and lotteries the conditional waits ``w[n][l]`` solve a
square linear system with one unknown per (queue length on arrival n,
position l).  Unknowns are stored row-major in a triangular layout,
``index(n, l) = n (n + 1) / 2 + l - 1`` with ``l`` 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .model import CapacityVector, LotteryPolicy, MarketParams, PricePolicy

RESIDUAL_TOL = 1e-10


class SingularSystemError(RuntimeError):
    pass


def tri_index(n, l):
    """Flat position of (queue length n, 1-based position l)."""
    return n * (n + 1) // 2 + l - 1


def tri_size(n_hat: int) -> int:
    return n_hat * (n_hat + 1) // 2


@dataclass(frozen=True)
class WaitingTimes:
    """``conditional[n][l-1]`` is w_n^l; ``expected[m][n]`` is W_m^n (hours)."""

    flat: np.ndarray
    expected: tuple[np.ndarray, ...]
    residual: float

    @property
    def n_hat(self) -> int:
        return int(round((np.sqrt(8 * self.flat.size + 1) - 1) / 2))

    @property
    def conditional(self) -> tuple[np.ndarray, ...]:
        return tuple(self.row(n) for n in range(self.n_hat))

    def row(self, n: int) -> np.ndarray:
        return self.flat[tri_index(n, 1):tri_index(n, 1) + n + 1]

    def w(self, n: int, l: int) -> float:
        if not (0 <= n < self.n_hat and 1 <= l <= n + 1):
            raise IndexError((n, l))
        return float(self.flat[tri_index(n, l)])


@dataclass(frozen=True)
class SteadyState:
    probabilities: np.ndarray

    def mean_length(self) -> float:
        return float(np.arange(self.probabilities.size) @ self.probabilities)


@dataclass(frozen=True)
class EquilibriumSolution:
    params: MarketParams
    capacities: CapacityVector
    lottery: LotteryPolicy
    waiting: WaitingTimes
    steady: SteadyState
    prices: Optional[PricePolicy] = None

    def with_prices(self, prices: PricePolicy) -> "EquilibriumSolution":
        return EquilibriumSolution(self.params, self.capacities, self.lottery, self.waiting,
                                   self.steady, prices)

    def throughputs(self) -> np.ndarray:
        """Steady-state joining rate of each group (drivers per hour)."""
        P = self.steady.probabilities
        return np.array([lam * P[:cap].sum()
                         for lam, cap in zip(self.params.arrival_rates, self.capacities)])


class WaitSystem:
    """The linear system for the conditional waits and its sensitivities.

    The arrival terms use the queue length *after* the tracked driver joins:
    a driver who joined a length-n queue sits in a length-(n+1) queue, so the
    competing joiners arrive at rate sum_c lambda_c 1(n+1 < N_c) and draw
    their position from the length-(n+1) lottery.
    """

    def __init__(self, params: MarketParams, capacities: CapacityVector, flats):
        self.params = params
        self.capacities = capacities
        self.flats = [np.asarray(f, dtype=float) for f in flats]
        n_hat = capacities.n_hat
        self.n_hat = n_hat
        self.size = tri_size(n_hat)
        n_of = np.repeat(np.arange(n_hat), np.arange(1, n_hat + 1))
        l_of = np.arange(self.size) - n_of * (n_of + 1) // 2 + 1
        self.n_of, self.l_of = n_of, l_of
        mu = params.mu
        u = np.arange(self.size)

        front = np.zeros(self.size)
        back = np.zeros(self.size)
        total = np.zeros(self.size)
        for lam, cap, flat in zip(params.arrival_rates, capacities, self.flats):
            joins = n_of + 1 < cap
            cum = np.zeros_like(flat)
            for n in range(cap):
                lo = tri_index(n, 1)
                cum[lo:lo + n + 1] = np.cumsum(flat[lo:lo + n + 1])
            F = np.zeros(self.size)
            F[joins] = cum[(u + n_of + 1)[joins]]
            front += lam * joins * F
            back += lam * joins * (1.0 - F)
            total += lam * joins
        self.total_join = total

        rows = [u]
        cols = [u]
        vals = [total + mu]
        has_next = n_of + 1 < n_hat
        rows += [u[has_next], u[has_next]]
        cols += [(u + n_of + 2)[has_next], (u + n_of + 1)[has_next]]
        vals += [-front[has_next], -back[has_next]]
        has_prev = l_of > 1
        rows.append(u[has_prev])
        cols.append((u - n_of - 1)[has_prev])
        vals.append(np.full(has_prev.sum(), -mu))
        self.A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.size, self.size))
        try:
            self._lu = splu(self.A)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        self.w = self._lu.solve(np.ones(self.size))
        if not np.all(np.isfinite(self.w)):
            raise SingularSystemError("waiting-time system is singular")
        res = self.A @ self.w - 1.0
        self.residual = float(np.max(np.abs(res)) / max(1.0, np.max(np.abs(self.A) @ np.abs(self.w))))

    def expected(self) -> tuple[np.ndarray, ...]:
        out = []
        for cap, flat in zip(self.capacities, self.flats):
            prod = flat * self.w[:tri_size(cap)]
            out.append(np.add.reduceat(prod, tri_index(np.arange(cap), 1)))
        return tuple(out)

    def expected_jacobian(self) -> np.ndarray:
        """d W_m^n / d delta for every output (m, n) and every lottery entry.

        Rows follow (group, length) order; columns concatenate the groups' flat
        lotteries.  Uses one adjoint solve per output.
        """
        caps = self.capacities.capacities
        offsets_out = np.concatenate(([0], np.cumsum(caps)))
        sizes = [tri_size(c) for c in caps]
        offsets_var = np.concatenate(([0], np.cumsum(sizes)))
        K, V = offsets_out[-1], offsets_var[-1]

        C = np.zeros((self.size, K))
        for m, (cap, flat) in enumerate(zip(caps, self.flats)):
            for n in range(cap):
                lo = tri_index(n, 1)
                C[lo:lo + n + 1, offsets_out[m] + n] = flat[lo:lo + n + 1]
        Y = self._lu.solve(C, trans="T")

        J = np.zeros((K, V))
        w = self.w
        for m, (lam, cap, flat) in enumerate(zip(self.params.arrival_rates, caps, self.flats)):
            base = offsets_var[m]
            for n in range(cap):
                lo = tri_index(n, 1)
                # direct dependence of W_m^n on its own lottery row
                J[offsets_out[m] + n, base + lo:base + lo + n + 1] += w[lo:lo + n + 1]
            for s in range(1, cap):
                # delta_m^{., s} enters the rows of drivers who joined at length s-1
                rlo = tri_index(s - 1, 1)
                nxt = tri_index(s, 1)
                g = lam * (w[nxt + 1:nxt + s + 1] - w[nxt:nxt + s])
                contrib = Y[rlo:rlo + s, :] * g[:, None]
                rev = np.cumsum(contrib[::-1], axis=0)[::-1]
                J[:, base + nxt:base + nxt + s] += rev.T
        return J


def _flats(lottery: LotteryPolicy, capacities: CapacityVector):
    lottery.check(capacities)
    return [lottery.flat(m) for m in range(len(capacities))]


def solve_waiting_times(params: MarketParams, capacities: CapacityVector,
                        lottery: LotteryPolicy) -> WaitingTimes:
    if len(capacities) != params.group_count:
        raise ValueError("capacities and params disagree on the number of groups")
    system = WaitSystem(params, capacities, _flats(lottery, capacities))
    if system.residual > RESIDUAL_TOL:
        raise SingularSystemError(f"balance residual {system.residual:.3e} exceeds tolerance")
    return WaitingTimes(system.w, system.expected(), system.residual)


def expected_waits(waiting: WaitingTimes, lottery: LotteryPolicy,
                   capacities: CapacityVector) -> tuple[np.ndarray, ...]:
    lottery.check(capacities)
    out = []
    for group in lottery.rows:
        out.append(np.array([row @ waiting.row(n) for n, row in enumerate(group)]))
    return tuple(out)


def birth_rates(params: MarketParams, capacities) -> np.ndarray:
    """Total joining rate at each queue length 0..N_hat-1."""
    caps = np.asarray(tuple(capacities))
    n = np.arange(caps.max())
    return (n[:, None] < caps[None, :]) @ params.lam


def steady_state(params: MarketParams, capacities) -> SteadyState:
    births = birth_rates(params, capacities)
    with np.errstate(divide="ignore"):
        logq = np.concatenate(([0.0], np.cumsum(np.log(births) - np.log(params.mu))))
    q = np.exp(logq - logq.max())
    return SteadyState(q / q.sum())


def solve_equilibrium(params: MarketParams, capacities: CapacityVector, lottery: LotteryPolicy,
                      prices: Optional[PricePolicy] = None) -> EquilibriumSolution:
    waiting = solve_waiting_times(params, capacities, lottery)
    return EquilibriumSolution(params, capacities, lottery, waiting,
                               steady_state(params, capacities), prices)
