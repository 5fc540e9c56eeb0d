"""Lower-level problem: best lotteries (and price) for fixed capacities.

The price is eliminated: for profit it is the largest fee every joiner
accepts, ``p_m = min(p_max, R_m - r (T_d + max_n W_m^n))``; welfare does not
depend on the price, and the same rule is used to report one.  What is left
is a maximisation over the lottery simplex rows.

Two ingredients:

* ``_equalize`` -- a Newton solve for a front/back mixing lottery that makes
  every expected wait equal.  Under steady-state weighting the weighted waits
  always sum to the mean queue length, so equal waits reach the largest
  possible profit and certify a global optimum.
* ``_slp`` -- sequential linear programming with a trust region.  Each step
  linearises the waits through the adjoint Jacobian and solves the LP over
  the tangent of the simplex rows; accepted steps never decrease the
  objective.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .equilibrium import EquilibriumSolution, SingularSystemError, WaitSystem, solve_equilibrium, steady_state, tri_index, tri_size
from .model import (CapacityVector, LotteryPolicy, MarketParams, PricePolicy, fifo_lottery,
                    lifo_lottery, random_lottery, uniform_lottery)
from .objectives import Kind, Weighting, objective_report

log = logging.getLogger(__name__)

PROFIT_STARTS = ("equalize", "fifo", "lifo", "uniform", "random", "random")
# welfare ties across every lottery; the first start is what gets reported
WELFARE_STARTS = ("uniform", "fifo", "lifo", "random", "random")


@dataclass(frozen=True)
class SolverOptions:
    tol_obj: float = 1e-8
    max_iter: int = 5000
    step_min: float = 1e-9
    trust_radius: float = 0.2
    starts: Optional[tuple[str, ...]] = None
    seed: int = 0
    weighting: Weighting = "steady_state"
    stop_when_certified: bool = True
    newton_tol: float = 1e-13


@dataclass(frozen=True)
class LowerLevelResult:
    lottery: LotteryPolicy
    prices: PricePolicy
    xi: tuple[float, ...]
    equilibrium: EquilibriumSolution
    objective_value: float
    converged: bool
    iterations: int
    certified: bool = False
    start: str = ""
    per_start: tuple[tuple[str, float], ...] = field(default=())


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex."""
    n = v.size
    if n == 1:
        return np.ones(1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.nonzero(u * np.arange(1, n + 1) > css)[0][-1]
    out = np.maximum(v - css[k] / (k + 1), 0.0)
    return out / out.sum()


class _Problem:
    """Objective of the lower level as a function of the stacked flat lotteries."""

    def __init__(self, params: MarketParams, capacities: CapacityVector, kind: Kind,
                 weighting: Weighting):
        self.params, self.capacities, self.kind, self.weighting = params, capacities, kind, weighting
        caps = capacities.capacities
        self.sizes = [tri_size(c) for c in caps]
        self.var_off = np.concatenate(([0], np.cumsum(self.sizes)))
        self.out_off = np.concatenate(([0], np.cumsum(caps)))
        self.M = len(caps)
        P = steady_state(params, capacities).probabilities
        if weighting == "steady_state":
            omega = [lam * P[:c] for lam, c in zip(params.arrival_rates, caps)]
        elif weighting == "unweighted":
            omega = [np.full(c, lam) for lam, c in zip(params.arrival_rates, caps)]
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
        self.omega = np.concatenate(omega)
        self.Omega = np.array([w.sum() for w in omega])
        self.group_of = np.repeat(np.arange(self.M), caps)
        self.length_of = np.concatenate([np.arange(c) for c in caps])
        r = params.driver_opportunity_rate
        self.ceiling = np.array([params.price_ceiling(m) for m in range(self.M)])
        self.cap = np.inf if params.commission_cap is None else float(params.commission_cap)
        # row blocks of the flat vector (one simplex per (group, length))
        self.row_slices = [slice(self.var_off[m] + tri_index(n, 1), self.var_off[m] + tri_index(n, 1) + n + 1)
                           for m, c in enumerate(caps) for n in range(c)]
        self.mean_length = float(np.arange(P.size) @ P)
        self.P = P
        self.r = r

    def split(self, x):
        return [x[self.var_off[m]:self.var_off[m + 1]] for m in range(self.M)]

    def waits(self, x, jacobian=False):
        system = WaitSystem(self.params, self.capacities, self.split(x))
        W = np.concatenate(system.expected())
        return (W, system.expected_jacobian()) if jacobian else W

    def prices(self, W):
        xi = np.array([W[self.group_of == m].max() for m in range(self.M)])
        return np.minimum(self.cap, self.ceiling - self.r * xi), xi

    def value(self, W) -> float:
        """Lottery-dependent part of the objective (constants dropped)."""
        nu = self.params.platform_opportunity_rate
        if self.kind == "profit":
            prices, _ = self.prices(W)
            return float(self.Omega @ prices - nu * (self.omega @ W))
        return float(-(self.r + nu) * (self.omega @ W))

    def upper_bound(self) -> Optional[float]:
        """Bound on ``value`` valid for every lottery, when one is known."""
        if self.weighting != "steady_state":
            return None
        nu = self.params.platform_opportunity_rate
        L = self.mean_length
        if self.kind == "welfare":
            return -(self.r + nu) * L
        uncapped = float(self.Omega @ self.ceiling - self.r * L)
        return min(uncapped, float(self.Omega.sum() * self.cap)) - nu * L

    def project(self, x):
        out = x.copy()
        for sl in self.row_slices:
            out[sl] = project_simplex(out[sl])
        return out


def _lottery_from_x(problem: _Problem, x) -> LotteryPolicy:
    return LotteryPolicy.from_flat(problem.split(x), problem.capacities)


def _start_point(problem: _Problem, name: str, rng) -> Optional[np.ndarray]:
    caps = problem.capacities
    if name == "fifo":
        lot = fifo_lottery(caps)
    elif name == "lifo":
        lot = lifo_lottery(caps)
    elif name == "uniform":
        lot = uniform_lottery(caps)
    elif name == "random":
        lot = random_lottery(caps, rng)
    elif name == "equalize":
        return _equalize(problem)
    else:
        raise ValueError(f"unknown start {name!r}")
    return np.concatenate([lot.flat(m) for m in range(len(caps))])


def _equalize(problem: _Problem, tol: float = 1e-13, max_iter: int = 60) -> Optional[np.ndarray]:
    """Front/back mixing lottery with all expected waits equal, or None.

    Row (m, n) puts mass a on position 1 and 1 - a on position n + 1.  With
    steady-state weights the common wait must be L / X; the length-0 rows
    carry no freedom and follow from the others.
    """
    if problem.weighting != "steady_state":
        return None
    mu = problem.params.mu
    target = problem.mean_length / problem.Omega.sum()
    free = problem.length_of >= 1
    if not free.any():
        return _start_point(problem, "fifo", None)
    front = np.array([sl.start for sl in problem.row_slices])
    back = np.array([sl.stop - 1 for sl in problem.row_slices])
    n = problem.length_of
    a = np.clip(((n + 1) / mu - target) / np.maximum(n, 1) * mu, 0.0, 1.0)

    def build(a):
        x = np.zeros(problem.var_off[-1])
        x[back] = 1.0 - a
        x[front] += a
        return x

    def residual(a):
        return problem.waits(build(a))[free] - target

    res = residual(a)
    for _ in range(max_iter):
        if np.max(np.abs(res)) <= tol * target:
            return build(a)
        _, J = problem.waits(build(a), jacobian=True)
        Ja = (J[:, front] - J[:, back])[np.ix_(free, free)]
        try:
            step = np.zeros_like(a)
            step[free] = np.linalg.solve(Ja, -res)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        norm0 = np.linalg.norm(res)
        while t > 1e-4:
            a_new = np.clip(a + t * step, 0.0, 1.0)
            res_new = residual(a_new)
            if np.linalg.norm(res_new) < norm0:
                break
            t *= 0.5
        else:
            return None
        a, res = a_new, res_new
    if np.max(np.abs(res)) <= 1e-10 * target:
        return build(a)
    return None


def _lp_step(problem: _Problem, x, W, J, rho):
    """Best linearised improvement within the trust region; returns (d, predicted)."""
    V, M, K = x.size, problem.M, W.size
    nu, r = problem.params.platform_opportunity_rate, problem.r
    lo = np.maximum(-x, -rho)
    hi = np.minimum(1.0 - x, rho)
    rows_eq = np.concatenate([np.full(sl.stop - sl.start, i) for i, sl in enumerate(problem.row_slices)])
    cols_eq = np.concatenate([np.arange(sl.start, sl.stop) for sl in problem.row_slices])
    current = problem.value(W)
    if problem.kind == "profit":
        A_eq = sp.csr_matrix((np.ones(cols_eq.size), (rows_eq, cols_eq)), shape=(len(problem.row_slices), V + M))
        c = np.concatenate((nu * (problem.omega @ J), -problem.Omega))
        T = np.zeros((K, M))
        T[np.arange(K), problem.group_of] = 1.0
        A_ub = np.hstack((r * J, T))
        b_ub = problem.ceiling[problem.group_of] - r * W
        bounds = np.column_stack((np.concatenate((lo, np.full(M, -np.inf))),
                                  np.concatenate((hi, np.full(M, problem.cap)))))
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]),
                      bounds=bounds, method="highs")
        if res.status != 0:
            return np.zeros(V), 0.0
        d = res.x[:V]
        predicted = -res.fun - nu * (problem.omega @ W) - current
    else:
        A_eq = sp.csr_matrix((np.ones(cols_eq.size), (rows_eq, cols_eq)), shape=(len(problem.row_slices), V))
        c = (r + nu) * (problem.omega @ J)
        res = linprog(c, A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]), bounds=np.column_stack((lo, hi)),
                      method="highs")
        if res.status != 0:
            return np.zeros(V), 0.0
        d = res.x
        predicted = -res.fun
    return d, float(predicted)


def _slp(problem: _Problem, x0, options: SolverOptions):
    x = problem.project(x0)
    W, J = problem.waits(x, jacobian=True)
    f = problem.value(W)
    rho = options.trust_radius
    scale = max(1.0, abs(f))
    converged = False
    it = 0
    for it in range(1, options.max_iter + 1):
        d, predicted = _lp_step(problem, x, W, J, rho)
        if predicted <= options.tol_obj * scale:
            converged = True
            break
        x_new = problem.project(x + d)
        try:
            W_new = problem.waits(x_new)
        except SingularSystemError:
            W_new = None
        f_new = problem.value(W_new) if W_new is not None else -np.inf
        if f_new > f:
            ratio = (f_new - f) / predicted
            x, W, f = x_new, W_new, f_new
            _, J = problem.waits(x, jacobian=True)
            if ratio > 0.75 and np.max(np.abs(d)) >= 0.99 * rho:
                rho = min(2.0 * rho, 1.0)
            elif ratio < 0.25:
                rho *= 0.5
        else:
            rho *= 0.25
            if rho < options.step_min:
                converged = True
                break
    return x, f, converged, it


def solve_lower(params: MarketParams, capacities: CapacityVector, kind: Kind = "profit",
                options: Optional[SolverOptions] = None) -> LowerLevelResult:
    """Optimise lotteries (and the implied price) for fixed capacities."""
    options = options or SolverOptions()
    if len(capacities) != params.group_count:
        raise ValueError("capacities and params disagree on the number of groups")
    problem = _Problem(params, capacities, kind, options.weighting)
    bound = problem.upper_bound()
    rng = np.random.default_rng(options.seed)
    best = None
    per_start = []
    starts = options.starts or (PROFIT_STARTS if kind == "profit" else WELFARE_STARTS)
    for name in starts:
        x0 = _start_point(problem, name, rng)
        if x0 is None:
            per_start.append((name, float("nan")))
            continue
        x, f, converged, iters = _slp(problem, x0, options)
        per_start.append((name, f))
        log.debug("start %s: value %.10g after %d iterations", name, f, iters)
        if best is None or f > best[1] + options.tol_obj * max(1.0, abs(best[1])):
            best = (x, f, converged, iters, name)
        certified = bound is not None and best[1] >= bound - options.tol_obj * max(1.0, abs(bound))
        if certified and options.stop_when_certified:
            break
    x, f, converged, iters, name = best
    certified = bound is not None and f >= bound - options.tol_obj * max(1.0, abs(bound))
    lottery = _lottery_from_x(problem, x)
    eq = solve_equilibrium(params, capacities, lottery)
    W = np.concatenate(eq.waiting.expected)
    prices, xi = problem.prices(W)
    price_policy = PricePolicy(tuple(float(p) for p in prices), tuple(float(v) for v in xi))
    eq = eq.with_prices(price_policy)
    value = objective_report(params, eq, kind, options.weighting).total_rate
    return LowerLevelResult(lottery, price_policy, tuple(float(v) for v in xi), eq, value,
                            converged or certified, iters, certified, name, tuple(per_start))


def evaluate_candidate(params: MarketParams, capacities: CapacityVector, lottery: LotteryPolicy,
                       kind: Kind = "profit", weighting: Weighting = "steady_state") -> float:
    """One forward evaluation: waits, steady state, implied price, objective."""
    eq = solve_equilibrium(params, capacities, lottery)
    xi = [float(np.max(Wm)) for Wm in eq.waiting.expected]
    cap = np.inf if params.commission_cap is None else params.commission_cap
    prices = tuple(min(cap, params.price_ceiling(m) - params.driver_opportunity_rate * x)
                   for m, x in enumerate(xi))
    eq = eq.with_prices(PricePolicy(prices, tuple(xi)))
    return objective_report(params, eq, kind, weighting).total_rate
